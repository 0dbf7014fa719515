//! Nudging data assimilation: the observation operator, continuous and
//! discrete-in-time nudged dynamics, and the Lorenz 63 convergence constants.

mod observation;
mod theory;

pub use observation::{apply_observation, ObservationOperator, ObservationSeries, SPACING_TOL};
pub use theory::{delta_max, mu_min, theory_bounds, TheoryBounds, TheoryCase};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dynamics::{integrate_to, IntegratorConfig, StateVector, Trajectory, VectorField};
use crate::error::{Error, Result};

/// How the feedback term is evaluated inside one observation window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Innovation {
    /// `−μ(I_M w(t_n) − I_M u(t_n))`: the whole innovation is frozen at the
    /// window start.
    #[default]
    Frozen,
    /// `−μ(I_M w(t) − I_M u(t_n))`: the observation is held over the window
    /// while the state part follows the solution.
    HeldObservation,
}

impl Innovation {
    pub fn name(&self) -> &'static str {
        match self {
            Innovation::Frozen => "frozen",
            Innovation::HeldObservation => "held_observation",
        }
    }
}

/// Nudging parameter, observation spacing, operator and initial guess.
#[derive(Debug, Clone, PartialEq)]
pub struct NudgingConfig {
    pub mu: f64,
    pub delta: f64,
    pub operator: ObservationOperator,
    pub w0: StateVector,
    pub innovation: Innovation,
}

impl NudgingConfig {
    /// Config with the zero initial guess.
    pub fn new(mu: f64, delta: f64, operator: ObservationOperator) -> Self {
        let w0 = StateVector::zeros(operator.state_dim());
        NudgingConfig {
            mu,
            delta,
            operator,
            w0,
            innovation: Innovation::Frozen,
        }
    }

    pub fn with_w0(mut self, w0: StateVector) -> Self {
        self.w0 = w0;
        self
    }

    pub fn with_innovation(mut self, innovation: Innovation) -> Self {
        self.innovation = innovation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return Err(Error::invalid(format!(
                "mu must be non-negative, got {}",
                self.mu
            )));
        }
        if !(self.delta > 0.0) {
            return Err(Error::invalid(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        self.operator.check_state(self.w0.dim())
    }
}

/// Base dynamics plus a nudging term frozen over one observation window:
/// `f(w) − μ·P(innovation)` where the innovation is `I_M w(t_n) − I_M u(t_n)`.
pub struct FrozenNudging<'a, F> {
    pub base: F,
    pub mu: f64,
    pub operator: &'a ObservationOperator,
    pub innovation: &'a [f64],
}

impl<F: VectorField> VectorField for FrozenNudging<'_, F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    #[inline]
    fn eval(&self, t: f64, state: &[f64], out: &mut [f64]) {
        self.base.eval(t, state, out);
        for (p, d) in self.operator.positions().zip(self.innovation) {
            out[p] -= self.mu * d;
        }
    }
}

/// Right-hand side of the discrete nudged system for a given frozen innovation.
pub fn nudged_rhs_discrete<F: VectorField>(
    state: &StateVector,
    frozen_innovation: &[f64],
    base_rhs: F,
    config: &NudgingConfig,
) -> Result<StateVector> {
    config.operator.check_state(state.dim())?;
    if frozen_innovation.len() != config.operator.len() {
        return Err(Error::dim(
            "innovation",
            config.operator.len(),
            frozen_innovation.len(),
        ));
    }
    if base_rhs.dim() != state.dim() {
        return Err(Error::dim("vector field", state.dim(), base_rhs.dim()));
    }
    let field = FrozenNudging {
        base: base_rhs,
        mu: config.mu,
        operator: &config.operator,
        innovation: frozen_innovation,
    };
    let mut out = StateVector::zeros(state.dim());
    field.eval(0.0, state, &mut out);
    Ok(out)
}

/// Base dynamics relaxed towards an observation held fixed over the window:
/// `f(w) − μ·P(I_M w − observation)`.
pub struct HeldObservationNudging<'a, F> {
    pub base: F,
    pub mu: f64,
    pub operator: &'a ObservationOperator,
    pub observation: &'a [f64],
}

impl<F: VectorField> VectorField for HeldObservationNudging<'_, F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    #[inline]
    fn eval(&self, t: f64, state: &[f64], out: &mut [f64]) {
        self.base.eval(t, state, out);
        for (p, o) in self.operator.positions().zip(self.observation) {
            out[p] -= self.mu * (state[p] - o);
        }
    }
}

/// Solves one nudging window `[t_start, t_end]` from `state` given the
/// observation `I_M u(t_start)`; returns `w(t_end)`.
pub fn nudge_window<F: VectorField>(
    base_rhs: F,
    state: &[f64],
    observation: &[f64],
    config: &NudgingConfig,
    (t_start, t_end): (f64, f64),
    integ: &IntegratorConfig,
) -> Result<Vec<f64>> {
    let operator = &config.operator;
    operator.check_state(state.len())?;
    if observation.len() != operator.len() {
        return Err(Error::dim("observation", operator.len(), observation.len()));
    }
    let traj = match config.innovation {
        Innovation::Frozen => {
            let innovation: Vec<f64> = operator
                .positions()
                .zip(observation)
                .map(|(p, o)| state[p] - o)
                .collect();
            let field = FrozenNudging {
                base: base_rhs,
                mu: config.mu,
                operator,
                innovation: &innovation,
            };
            integrate_to(field, state, t_start, &[t_end], integ)?
        }
        Innovation::HeldObservation => {
            let field = HeldObservationNudging {
                base: base_rhs,
                mu: config.mu,
                operator,
                observation,
            };
            integrate_to(field, state, t_start, &[t_end], integ)?
        }
    };
    Ok(traj.state(0).to_vec())
}

fn check_series(obs: &ObservationSeries, config: &NudgingConfig, dim: usize) -> Result<()> {
    config.validate()?;
    if obs.operator() != &config.operator {
        return Err(Error::invalid(
            "observation operator differs from nudging config",
        ));
    }
    if dim != config.w0.dim() {
        return Err(Error::dim("vector field", config.w0.dim(), dim));
    }
    if let Some(d) = obs.delta() {
        if (d - config.delta).abs() > SPACING_TOL * config.delta.max(1.0) {
            return Err(Error::invalid(format!(
                "config delta {} does not match observation spacing {d}",
                config.delta
            )));
        }
    }
    Ok(())
}

/// Discrete-in-time nudging over a whole observation series.
///
/// On each window the feedback uses the observation at `t_n` and, for
/// [`Innovation::Frozen`], the nudged state produced by the previous window.
/// The returned trajectory holds `w` at every observation time.
pub fn run_discrete_nudging<F: VectorField>(
    reference_obs: &ObservationSeries,
    base_rhs: F,
    config: &NudgingConfig,
    integ: &IntegratorConfig,
) -> Result<Trajectory> {
    if reference_obs.is_empty() {
        return Err(Error::invalid("observation series is empty"));
    }
    check_series(reference_obs, config, base_rhs.dim())?;
    let times = reference_obs.times();
    let mut traj = Trajectory::with_capacity(config.w0.dim(), times.len());
    let mut w = config.w0.as_slice().to_vec();
    traj.push(times[0], &w)?;
    for n in 0..times.len() - 1 {
        w = nudge_window(
            &base_rhs,
            &w,
            reference_obs.value(n),
            config,
            (times[n], times[n + 1]),
            integ,
        )
        .map_err(|e| e.in_window(n))?;
        traj.push(times[n + 1], &w)?;
    }
    Ok(traj)
}

/// A trajectory with stored slopes, interpolated by cubic Hermite splines
/// (fourth-order accurate).
pub struct DenseReference<'a> {
    traj: &'a Trajectory,
    slopes: Vec<f64>,
}

impl<'a> DenseReference<'a> {
    pub fn new<F: VectorField>(traj: &'a Trajectory, field: &F) -> Result<Self> {
        if traj.len() < 2 {
            return Err(Error::invalid("dense reference needs at least two samples"));
        }
        if field.dim() != traj.dim() {
            return Err(Error::dim("vector field", traj.dim(), field.dim()));
        }
        let d = traj.dim();
        let mut slopes = vec![0.0; traj.len() * d];
        for (k, chunk) in slopes.chunks_exact_mut(d).enumerate() {
            field.eval(traj.times()[k], traj.state(k), chunk);
        }
        Ok(DenseReference { traj, slopes })
    }

    /// Interpolated component `p` (0-based) at time `t`.
    pub fn component(&self, t: f64, p: usize) -> f64 {
        let times = self.traj.times();
        let n = times.len();
        let k = times.partition_point(|&s| s <= t).clamp(1, n - 1) - 1;
        let d = self.traj.dim();
        let (t0, t1) = (times[k], times[k + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let y0 = self.traj.state(k)[p];
        let y1 = self.traj.state(k + 1)[p];
        let f0 = self.slopes[k * d + p];
        let f1 = self.slopes[(k + 1) * d + p];
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1
    }
}

struct ContinuousNudging<'a, F> {
    base: F,
    mu: f64,
    operator: &'a ObservationOperator,
    reference: &'a DenseReference<'a>,
}

impl<F: VectorField> VectorField for ContinuousNudging<'_, F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, t: f64, state: &[f64], out: &mut [f64]) {
        self.base.eval(t, state, out);
        for p in self.operator.positions() {
            out[p] -= self.mu * (state[p] - self.reference.component(t, p));
        }
    }
}

/// Continuous-in-time nudging `dw/dt = f(w) − μ(I_M w − I_M u(t))` against a
/// densely sampled reference. Output is sampled at the reference times.
pub fn run_continuous_nudging<F: VectorField + Clone>(
    reference: &Trajectory,
    base_rhs: F,
    config: &NudgingConfig,
    integ: &IntegratorConfig,
) -> Result<Trajectory> {
    config.validate()?;
    config.operator.check_state(reference.dim())?;
    if base_rhs.dim() != reference.dim() {
        return Err(Error::dim("vector field", reference.dim(), base_rhs.dim()));
    }
    let dense = DenseReference::new(reference, &base_rhs)?;
    let field = ContinuousNudging {
        base: base_rhs,
        mu: config.mu,
        operator: &config.operator,
        reference: &dense,
    };
    let times = reference.times();
    integrate_to(field, &config.w0, times[0], times, integ)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate, Lorenz63Params};

    fn x_obs() -> ObservationOperator {
        ObservationOperator::new(vec![1], 3).unwrap()
    }

    #[test]
    fn zero_innovation_matches_base() {
        let cfg = NudgingConfig::new(30.0, 0.1, x_obs());
        let s = StateVector::from([1.0, 2.0, 3.0]);
        let p = Lorenz63Params::default();
        let nudged = nudged_rhs_discrete(&s, &[0.0], p, &cfg).unwrap();
        let base = crate::dynamics::lorenz63_rhs(&s, &p).unwrap();
        assert_eq!(nudged, base);
    }

    #[test]
    fn innovation_hits_observed_component_only() {
        let cfg = NudgingConfig::new(30.0, 0.1, x_obs());
        let s = StateVector::from([1.0, 1.0, 1.0]);
        let out = nudged_rhs_discrete(&s, &[2.0], Lorenz63Params::default(), &cfg).unwrap();
        assert_eq!(out[0], -60.0);
        assert_eq!(out[1], 26.0);
        assert!((out[2] + 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_mu_is_base_dynamics() {
        let cfg = NudgingConfig::new(0.0, 0.1, x_obs());
        let s = StateVector::from([3.0, -1.0, 20.0]);
        let p = Lorenz63Params::default();
        let out = nudged_rhs_discrete(&s, &[123.0], p, &cfg).unwrap();
        assert_eq!(out, crate::dynamics::lorenz63_rhs(&s, &p).unwrap());
    }

    #[test]
    fn innovation_length_checked() {
        let cfg = NudgingConfig::new(1.0, 0.1, x_obs());
        let s = StateVector::zeros(3);
        assert!(nudged_rhs_discrete(&s, &[1.0, 2.0], Lorenz63Params::default(), &cfg).is_err());
    }

    #[test]
    fn exact_start_tracks_reference() {
        let p = Lorenz63Params::default();
        let u0 = StateVector::from([-5.0, -7.0, 20.0]);
        let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.1).collect();
        let integ = IntegratorConfig {
            rel_tol: 1e-11,
            abs_tol: 1e-11,
            ..Default::default()
        };
        let reference = integrate_to(p, &u0, 0.0, &times, &integ).unwrap();
        let obs = ObservationSeries::from_trajectory(&reference, x_obs()).unwrap();
        let cfg = NudgingConfig::new(30.0, 0.1, x_obs()).with_w0(u0.clone());
        let w = run_discrete_nudging(&obs, p, &cfg, &integ).unwrap();
        for k in 0..w.len() {
            let v: f64 = w
                .state(k)
                .iter()
                .zip(reference.state(k))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            assert!(v <= 1e-10, "k={k} V={v}");
        }
    }

    #[test]
    fn continuous_exact_start_tracks_reference() {
        let p = Lorenz63Params::default();
        let u0 = StateVector::from([-5.0, -7.0, 20.0]);
        let integ = IntegratorConfig {
            dense_output_stride: 0.005,
            ..Default::default()
        };
        let reference = integrate(p, &u0, 0.0, 2.0, &integ).unwrap();
        let cfg = NudgingConfig::new(50.0, 0.1, x_obs()).with_w0(u0);
        let w = run_continuous_nudging(&reference, p, &cfg, &integ).unwrap();
        assert_eq!(w.times(), reference.times());
        for k in 0..w.len() {
            let v: f64 = w
                .state(k)
                .iter()
                .zip(reference.state(k))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            assert!(v <= 1e-10, "k={k} V={v}");
        }
    }

    #[test]
    fn delta_mismatch_rejected() {
        let p = Lorenz63Params::default();
        let times: Vec<f64> = (0..=3).map(|k| k as f64 * 0.1).collect();
        let reference = integrate_to(
            p,
            &[1.0, 1.0, 1.0],
            0.0,
            &times,
            &IntegratorConfig::default(),
        )
        .unwrap();
        let obs = ObservationSeries::from_trajectory(&reference, x_obs()).unwrap();
        let cfg = NudgingConfig::new(30.0, 0.2, x_obs());
        assert!(run_discrete_nudging(&obs, p, &cfg, &IntegratorConfig::default()).is_err());
    }

    fn attractor_obs(idx: usize, n: usize) -> (Trajectory, ObservationSeries) {
        let p = Lorenz63Params::default();
        let integ = IntegratorConfig::default();
        let spun = integrate_to(p, &[1.0, 2.0, 3.0], 0.0, &[100.0], &integ).unwrap();
        let times: Vec<f64> = (0..n).map(|k| k as f64 * 0.1).collect();
        let reference = integrate_to(p, spun.state(0), 0.0, &times, &integ).unwrap();
        let op = ObservationOperator::new(vec![idx], 3).unwrap();
        let obs = ObservationSeries::from_trajectory(&reference, op).unwrap();
        (reference, obs)
    }

    fn energy(w: &Trajectory, r: &Trajectory, k: usize) -> f64 {
        w.state(k)
            .iter()
            .zip(r.state(k))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    #[test]
    fn frozen_innovation_is_unstable_for_large_mu_delta() {
        // Error in x is amplified by roughly e^{-σδ} − μ(1 − e^{-σδ})/σ ≈ −1.5 per window.
        let (reference, obs) = attractor_obs(1, 31);
        let cfg = NudgingConfig::new(30.0, 0.1, x_obs());
        let w = run_discrete_nudging(
            &obs,
            Lorenz63Params::default(),
            &cfg,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert!(energy(&w, &reference, 30) > 1e6 * energy(&w, &reference, 0));
    }

    #[test]
    fn held_observation_stays_bounded_for_large_mu_delta() {
        let (reference, obs) = attractor_obs(1, 101);
        let cfg =
            NudgingConfig::new(30.0, 0.1, x_obs()).with_innovation(Innovation::HeldObservation);
        let w = run_discrete_nudging(
            &obs,
            Lorenz63Params::default(),
            &cfg,
            &IntegratorConfig::default(),
        )
        .unwrap();
        let v0 = energy(&w, &reference, 0);
        let tail = (50..101)
            .map(|k| energy(&w, &reference, k))
            .fold(0.0, f64::max);
        assert!(tail < v0, "tail {tail} v0 {v0}");
        assert!(w.state(100).iter().all(|v| v.abs() < 100.0));
    }

    #[test]
    fn held_observation_with_y_converges_less_than_frozen() {
        let (reference, obs) = attractor_obs(2, 101);
        let p = Lorenz63Params::default();
        let op = ObservationOperator::new(vec![2], 3).unwrap();
        let integ = IntegratorConfig::default();
        let frozen = NudgingConfig::new(10.0, 0.1, op);
        let held = frozen.clone().with_innovation(Innovation::HeldObservation);
        let wf = run_discrete_nudging(&obs, p, &frozen, &integ).unwrap();
        let wh = run_discrete_nudging(&obs, p, &held, &integ).unwrap();
        assert!(energy(&wf, &reference, 100) < 1e-10);
        assert!(energy(&wh, &reference, 100) > 1e-6);
    }
}
