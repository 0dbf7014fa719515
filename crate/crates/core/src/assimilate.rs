//! Online assimilation: iterate a learned one-step map over an observation
//! series, or run the nudging baseline on the same series.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::datagen::{stencils, Stencil};
use crate::dynamics::{IntegratorConfig, Trajectory, VectorField};
use crate::error::{Error, Result};
use crate::nudging::{nudge_window, NudgingConfig, ObservationOperator, ObservationSeries};
use crate::par::map_indexed;
use crate::trainer::TrainedModel;

/// Any component magnitude above this aborts a run.
pub const DIVERGENCE_LIMIT: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Method {
    Nudging,
    DnnFull,
    DnnReduced,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Nudging => "nudging",
            Method::DnnFull => "dnn_full",
            Method::DnnReduced => "dnn_reduced",
        }
    }
}

/// Assimilated states at the observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct AssimilationRun {
    pub method: Method,
    /// Model hash, nudging gain or other free-form origin of the run.
    pub provenance: String,
    pub states: Trajectory,
}

impl AssimilationRun {
    pub fn times(&self) -> &[f64] {
        self.states.times()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.len() == 0
    }
}

/// A map `(w(t_k), I_M u(t_k)) -> w(t_{k+1})`.
pub trait OneStepMap {
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn method(&self) -> Method;
    fn step(&self, state: &[f64], obs: &[f64]) -> Result<Vec<f64>>;
}

/// A single network mapping `[w; I_M u]` to the next state.
#[derive(Debug, Clone)]
pub struct FullMap<'a> {
    model: &'a TrainedModel,
    state_dim: usize,
}

impl<'a> FullMap<'a> {
    pub fn new(model: &'a TrainedModel, state_dim: usize) -> Result<Self> {
        if model.output_width() != state_dim || model.input_width() < state_dim {
            return Err(Error::invalid(format!(
                "model {} -> {} does not fit state dimension {state_dim}",
                model.input_width(),
                model.output_width()
            )));
        }
        Ok(FullMap { model, state_dim })
    }
}

impl OneStepMap for FullMap<'_> {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn obs_dim(&self) -> usize {
        self.model.input_width() - self.state_dim
    }

    fn method(&self) -> Method {
        Method::DnnFull
    }

    fn step(&self, state: &[f64], obs: &[f64]) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(state.len() + obs.len());
        input.extend_from_slice(state);
        input.extend_from_slice(obs);
        self.model.predict(&input)
    }
}

/// One scalar network per component, each fed its cyclic stencil.
#[derive(Debug, Clone)]
pub struct ReducedMap<'a> {
    models: &'a [TrainedModel],
    stencils: Vec<Stencil>,
    obs_dim: usize,
}

impl<'a> ReducedMap<'a> {
    /// `models[i]` predicts component `i + 1`.
    pub fn new(models: &'a [TrainedModel], operator: &ObservationOperator) -> Result<Self> {
        let stencils = stencils(operator)?;
        if models.len() != stencils.len() {
            return Err(Error::dim("component models", stencils.len(), models.len()));
        }
        for (i, (m, s)) in models.iter().zip(&stencils).enumerate() {
            if m.input_width() != s.input_width() || m.output_width() != 1 {
                return Err(Error::invalid(format!(
                    "model for component {} is {} -> {}, stencil needs {} -> 1",
                    i + 1,
                    m.input_width(),
                    m.output_width(),
                    s.input_width()
                )));
            }
        }
        Ok(ReducedMap {
            models,
            stencils,
            obs_dim: operator.len(),
        })
    }
}

impl OneStepMap for ReducedMap<'_> {
    fn state_dim(&self) -> usize {
        self.stencils.len()
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn method(&self) -> Method {
        Method::DnnReduced
    }

    fn step(&self, state: &[f64], obs: &[f64]) -> Result<Vec<f64>> {
        let mut input = [0.0; 6];
        self.models
            .iter()
            .zip(&self.stencils)
            .map(|(m, s)| {
                let buf = &mut input[..s.input_width()];
                s.gather(state, obs, buf);
                Ok(m.predict(buf)?[0])
            })
            .collect()
    }
}

fn guard(state: &[f64], step: usize) -> Result<()> {
    let magnitude = state.iter().fold(0.0f64, |m, v| {
        if v.is_finite() {
            m.max(v.abs())
        } else {
            f64::INFINITY
        }
    });
    if magnitude > DIVERGENCE_LIMIT {
        return Err(Error::Divergence { step, magnitude });
    }
    Ok(())
}

/// Iterates `map` from `w0` over `observations`. The state at `t_{k+1}` is
/// produced from the state and observation at `t_k`; the final observation
/// is not consumed. An empty series yields a run holding only `w0` at `t = 0`.
pub fn assimilate_dnn<M: OneStepMap + ?Sized>(
    map: &M,
    observations: &ObservationSeries,
    w0: &[f64],
    provenance: &str,
) -> Result<AssimilationRun> {
    let d = map.state_dim();
    if w0.len() != d {
        return Err(Error::dim("initial state", d, w0.len()));
    }
    if observations.operator().len() != map.obs_dim() {
        return Err(Error::dim(
            "observation",
            map.obs_dim(),
            observations.operator().len(),
        ));
    }
    if observations.operator().state_dim() != d {
        return Err(Error::dim(
            "observed state",
            d,
            observations.operator().state_dim(),
        ));
    }
    let times = observations.times();
    let mut states = Trajectory::with_capacity(d, times.len().max(1));
    states.push(times.first().copied().unwrap_or(0.0), w0)?;
    let mut w = w0.to_vec();
    for k in 0..times.len().saturating_sub(1) {
        w = map.step(&w, observations.value(k))?;
        guard(&w, k + 1)?;
        states.push(times[k + 1], &w)?;
    }
    Ok(AssimilationRun {
        method: map.method(),
        provenance: provenance.into(),
        states,
    })
}

/// Discrete nudging over `observations`, one window per observation
/// interval, with the divergence guard applied after every window.
pub fn assimilate_nudging<F: VectorField>(
    observations: &ObservationSeries,
    base_rhs: F,
    config: &NudgingConfig,
    integ: &IntegratorConfig,
) -> Result<AssimilationRun> {
    config.validate()?;
    if observations.is_empty() {
        return Err(Error::invalid("observation series is empty"));
    }
    if observations.operator() != &config.operator {
        return Err(Error::invalid(
            "observation operator differs from nudging config",
        ));
    }
    let d = base_rhs.dim();
    if d != config.w0.dim() {
        return Err(Error::dim("vector field", config.w0.dim(), d));
    }
    let times = observations.times();
    let mut states = Trajectory::with_capacity(d, times.len());
    let mut w = config.w0.as_slice().to_vec();
    states.push(times[0], &w)?;
    for n in 0..times.len() - 1 {
        w = nudge_window(
            &base_rhs,
            &w,
            observations.value(n),
            config,
            (times[n], times[n + 1]),
            integ,
        )
        .map_err(|e| e.in_window(n))?;
        guard(&w, n + 1)?;
        states.push(times[n + 1], &w)?;
    }
    Ok(AssimilationRun {
        method: Method::Nudging,
        provenance: format!("mu={} innovation={}", config.mu, config.innovation.name()),
        states,
    })
}

/// [`assimilate_dnn`] over many series from a common `w0`, in input order.
pub fn assimilate_dnn_all<M: OneStepMap + Sync + ?Sized>(
    map: &M,
    observations: &[ObservationSeries],
    w0: &[f64],
    provenance: &str,
) -> Vec<Result<AssimilationRun>> {
    map_indexed(observations.len(), |i| {
        assimilate_dnn(map, &observations[i], w0, provenance)
    })
}

/// [`assimilate_nudging`] over many series, in input order.
pub fn assimilate_nudging_all<F: VectorField + Sync>(
    observations: &[ObservationSeries],
    base_rhs: &F,
    config: &NudgingConfig,
    integ: &IntegratorConfig,
) -> Vec<Result<AssimilationRun>> {
    map_indexed(observations.len(), |i| {
        assimilate_nudging(&observations[i], base_rhs, config, integ)
    })
}

/// The zero state, the default starting point of a run.
pub fn zero_state(dim: usize) -> Vec<f64> {
    vec![0.0; dim]
}
