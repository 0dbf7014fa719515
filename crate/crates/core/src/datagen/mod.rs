//! Reference ensembles, synthetic observations and the input/output pairs
//! `([w(t_k); I_M u(t_k)], w(t_{k+1}))` used to train one-step surrogates.

mod stencil;

pub use stencil::{reduce_dataset, reduce_sample, stencils, ReducedSample, Stencil};

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::dynamics::{integrate_to, IntegratorConfig, System, Trajectory, VectorField};
use crate::error::{Error, Result};
use crate::nudging::{nudge_window, Innovation, NudgingConfig};
use crate::par::map_indexed;
use crate::rng;

/// Largest tolerated fraction of dropped samples in [`build_dataset`].
pub const MAX_DROP_FRACTION: f64 = 1e-3;

/// Initial-condition distribution and time span of a reference ensemble.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EnsembleSpec {
    pub n_refs: usize,
    pub init_mean: f64,
    pub init_std: f64,
    pub seed: u64,
    /// Time integrated before recording starts.
    pub spin_up: f64,
    /// Recorded span after spin-up; recorded times restart at 0.
    pub horizon: f64,
    /// Spacing of the recorded states (the observation spacing).
    pub sample_interval: f64,
    /// RNG domain; distinct ensembles drawn from one seed use distinct domains.
    pub stream_domain: u64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        EnsembleSpec {
            n_refs: 1000,
            init_mean: 0.0,
            init_std: 10.0,
            seed: 0,
            spin_up: 100.0,
            horizon: 10.0,
            sample_interval: 0.1,
            stream_domain: rng::domain::ENSEMBLE,
        }
    }
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_refs == 0 {
            return Err(Error::invalid("n_refs must be at least 1"));
        }
        if !(self.init_std > 0.0) || !self.init_mean.is_finite() {
            return Err(Error::invalid(
                "init_std must be positive and init_mean finite",
            ));
        }
        if !(self.spin_up >= 0.0) || !(self.horizon > 0.0) || !(self.sample_interval > 0.0) {
            return Err(Error::invalid(
                "spin_up must be non-negative, horizon and sample_interval positive",
            ));
        }
        if self.samples_per_member() < 2 {
            return Err(Error::invalid("horizon shorter than one sample interval"));
        }
        Ok(())
    }

    /// Recorded samples per member, `round(horizon / sample_interval) + 1`.
    pub fn samples_per_member(&self) -> usize {
        libm::round(self.horizon / self.sample_interval) as usize + 1
    }

    /// Recorded times `k * sample_interval`.
    pub fn sample_times(&self) -> Vec<f64> {
        (0..self.samples_per_member())
            .map(|k| k as f64 * self.sample_interval)
            .collect()
    }

    /// Initial condition of member `index`.
    pub fn initial_condition(&self, index: usize, dim: usize) -> Vec<f64> {
        let mut rng = rng::stream(self.seed, self.stream_domain, index as u64);
        // validated: init_std > 0
        let normal = Normal::new(self.init_mean, self.init_std).expect("valid normal");
        (0..dim).map(|_| normal.sample(&mut rng)).collect()
    }
}

/// Members that integrated successfully, in index order, plus the failures.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub trajectories: Vec<Trajectory>,
    pub ids: Vec<usize>,
    pub failures: Vec<(usize, Error)>,
}

/// Spins up and records `spec.n_refs` trajectories of `system`.
///
/// A member whose integration fails is reported in `failures` and the rest
/// of the ensemble is still produced.
pub fn generate_ensemble(
    spec: &EnsembleSpec,
    system: &System,
    integ: &IntegratorConfig,
) -> Result<Ensemble> {
    spec.validate()?;
    system.validate()?;
    integ.validate()?;
    let times = spec.sample_times();
    let dim = system.dim();
    let results = map_indexed(spec.n_refs, |i| {
        let u0 = spec.initial_condition(i, dim);
        let start = if spec.spin_up > 0.0 {
            integrate_to(system, &u0, 0.0, &[spec.spin_up], integ)?
                .state(0)
                .to_vec()
        } else {
            u0
        };
        integrate_to(system, &start, 0.0, &times, integ)
    });
    let mut out = Ensemble {
        trajectories: Vec::with_capacity(spec.n_refs),
        ids: Vec::with_capacity(spec.n_refs),
        failures: Vec::new(),
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => {
                out.trajectories.push(t);
                out.ids.push(i);
            }
            Err(e) => out.failures.push((i, e)),
        }
    }
    Ok(out)
}

/// One input/output pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// `[w(t_k); I_M u(t_k)]`
    pub input: Vec<f64>,
    /// `w(t_{k+1})`
    pub output: Vec<f64>,
    pub ref_id: usize,
    pub window_index: usize,
}

/// A sample that could not be produced.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DroppedSample {
    pub ref_id: usize,
    pub window_index: usize,
    pub reason: String,
}

/// Everything needed to interpret and regenerate a dataset.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetMeta {
    pub system: System,
    pub state_dim: usize,
    pub mu: f64,
    pub delta: f64,
    pub innovation: Innovation,
    pub observed_indices: Vec<usize>,
    /// Windows per reference.
    pub window_count: usize,
    pub n_refs: usize,
    /// Seed of the reference ensemble, when known.
    pub seed: Option<u64>,
    /// 1-based component for per-component stencil datasets.
    pub reduced_component: Option<usize>,
    pub dropped: Vec<DroppedSample>,
    /// Free-form description of how the dataset was made.
    pub provenance: String,
}

/// Training samples stored as dense row-major input and output blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    input_dim: usize,
    output_dim: usize,
    inputs: Vec<f64>,
    outputs: Vec<f64>,
    ref_ids: Vec<usize>,
    window_indices: Vec<usize>,
}

impl Dataset {
    pub fn from_parts(
        meta: DatasetMeta,
        input_dim: usize,
        output_dim: usize,
        inputs: Vec<f64>,
        outputs: Vec<f64>,
        ref_ids: Vec<usize>,
        window_indices: Vec<usize>,
    ) -> Result<Self> {
        let n = ref_ids.len();
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::invalid("dataset widths must be positive"));
        }
        if window_indices.len() != n {
            return Err(Error::dim("window indices", n, window_indices.len()));
        }
        if inputs.len() != n * input_dim {
            return Err(Error::dim("dataset inputs", n * input_dim, inputs.len()));
        }
        if outputs.len() != n * output_dim {
            return Err(Error::dim("dataset outputs", n * output_dim, outputs.len()));
        }
        if inputs.iter().chain(&outputs).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(Dataset {
            meta,
            input_dim,
            output_dim,
            inputs,
            outputs,
            ref_ids,
            window_indices,
        })
    }

    pub fn len(&self) -> usize {
        self.ref_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ref_ids.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn ref_ids(&self) -> &[usize] {
        &self.ref_ids
    }

    pub fn window_indices(&self) -> &[usize] {
        &self.window_indices
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn output(&self, i: usize) -> &[f64] {
        &self.outputs[i * self.output_dim..(i + 1) * self.output_dim]
    }

    pub fn sample(&self, i: usize) -> TrainingSample {
        TrainingSample {
            input: self.input(i).to_vec(),
            output: self.output(i).to_vec(),
            ref_id: self.ref_ids[i],
            window_index: self.window_indices[i],
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = TrainingSample> + '_ {
        (0..self.len()).map(|i| self.sample(i))
    }

    /// Distinct reference ids in order of first appearance.
    pub fn distinct_refs(&self) -> Vec<usize> {
        let mut seen = Vec::new();
        for &r in &self.ref_ids {
            if seen.last() != Some(&r) && !seen.contains(&r) {
                seen.push(r);
            }
        }
        seen
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        let mut outputs = Vec::with_capacity(indices.len() * self.output_dim);
        let mut ref_ids = Vec::with_capacity(indices.len());
        let mut window_indices = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            outputs.extend_from_slice(self.output(i));
            ref_ids.push(self.ref_ids[i]);
            window_indices.push(self.window_indices[i]);
        }
        Dataset {
            meta: self.meta.clone(),
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            inputs,
            outputs,
            ref_ids,
            window_indices,
        }
    }
}

struct RefSamples {
    inputs: Vec<f64>,
    outputs: Vec<f64>,
    windows: Vec<usize>,
    dropped: Vec<DroppedSample>,
}

fn ref_windows(
    system: &System,
    reference: &Trajectory,
    ref_id: usize,
    nudge: &NudgingConfig,
    window_count: usize,
    integ: &IntegratorConfig,
) -> RefSamples {
    let op = &nudge.operator;
    let d = system.dim();
    let m = op.len();
    let mut out = RefSamples {
        inputs: Vec::with_capacity(window_count * (d + m)),
        outputs: Vec::with_capacity(window_count * d),
        windows: Vec::with_capacity(window_count),
        dropped: Vec::new(),
    };
    let times = reference.times();
    let mut w = nudge.w0.as_slice().to_vec();
    let mut obs = alloc::vec![0.0; m];
    for k in 0..window_count {
        // checked by the caller
        op.apply_into(reference.state(k), &mut obs)
            .expect("operator matches");
        match nudge_window(system, &w, &obs, nudge, (times[k], times[k + 1]), integ) {
            Ok(next) if next.iter().all(|v| v.is_finite()) => {
                out.inputs.extend_from_slice(&w);
                out.inputs.extend_from_slice(&obs);
                out.outputs.extend_from_slice(&next);
                out.windows.push(k);
                w = next;
            }
            failed => {
                let reason = match failed {
                    Err(e) => e.to_string(),
                    Ok(_) => "non-finite nudged state".to_string(),
                };
                // the chain cannot continue past a failed window
                for j in k..window_count {
                    out.dropped.push(DroppedSample {
                        ref_id,
                        window_index: j,
                        reason: reason.clone(),
                    });
                }
                break;
            }
        }
    }
    out
}

/// Runs the first `window_count` nudging windows on every reference and
/// records one sample per window.
///
/// Samples are ordered by reference then window. Failed windows are dropped
/// and listed in the metadata; more than [`MAX_DROP_FRACTION`] drops make the
/// dataset invalid.
pub fn build_dataset(
    system: &System,
    refs: &[Trajectory],
    nudge: &NudgingConfig,
    window_count: usize,
    integ: &IntegratorConfig,
) -> Result<Dataset> {
    system.validate()?;
    nudge.validate()?;
    integ.validate()?;
    if refs.is_empty() || window_count == 0 {
        return Err(Error::invalid("need at least one reference and one window"));
    }
    let d = system.dim();
    nudge.operator.check_state(d)?;
    for (i, r) in refs.iter().enumerate() {
        if r.dim() != d {
            return Err(Error::dim("reference trajectory", d, r.dim()));
        }
        if r.len() < window_count + 1 {
            return Err(Error::invalid(format!(
                "reference {i} has {} samples, {} windows need {}",
                r.len(),
                window_count,
                window_count + 1
            )));
        }
        for w in r.times()[..=window_count].windows(2) {
            let spacing = w[1] - w[0];
            if (spacing - nudge.delta).abs() > 1e-9 * nudge.delta.max(1.0) {
                return Err(Error::invalid(format!(
                    "reference {i} spacing {spacing} does not match delta {}",
                    nudge.delta
                )));
            }
        }
    }
    let per_ref = map_indexed(refs.len(), |i| {
        ref_windows(system, &refs[i], i, nudge, window_count, integ)
    });
    let m = nudge.operator.len();
    let total = refs.len() * window_count;
    let mut inputs = Vec::with_capacity(total * (d + m));
    let mut outputs = Vec::with_capacity(total * d);
    let mut ref_ids = Vec::with_capacity(total);
    let mut window_indices = Vec::with_capacity(total);
    let mut dropped = Vec::new();
    for (i, r) in per_ref.into_iter().enumerate() {
        inputs.extend(r.inputs);
        outputs.extend(r.outputs);
        ref_ids.extend(core::iter::repeat_n(i, r.windows.len()));
        window_indices.extend(r.windows);
        dropped.extend(r.dropped);
    }
    if dropped.len() as f64 > MAX_DROP_FRACTION * total as f64 {
        return Err(Error::invalid(format!(
            "{} of {total} samples dropped (limit {:.1}%): first failure {:?}",
            dropped.len(),
            MAX_DROP_FRACTION * 100.0,
            dropped.first().map(|s| &s.reason)
        )));
    }
    if ref_ids.is_empty() {
        return Err(Error::invalid("no samples produced"));
    }
    let meta = DatasetMeta {
        system: *system,
        state_dim: d,
        mu: nudge.mu,
        delta: nudge.delta,
        innovation: nudge.innovation,
        observed_indices: nudge.operator.observed_indices().to_vec(),
        window_count,
        n_refs: refs.len(),
        seed: None,
        reduced_component: None,
        dropped,
        provenance: format!(
            "{} windows of {} nudging (mu = {}, delta = {}) from {} references",
            window_count,
            nudge.innovation.name(),
            nudge.mu,
            nudge.delta,
            refs.len()
        ),
    };
    Dataset::from_parts(meta, d + m, d, inputs, outputs, ref_ids, window_indices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Lorenz63Params, StateVector};
    use crate::nudging::ObservationOperator;

    fn l63() -> System {
        System::Lorenz63(Lorenz63Params::default())
    }

    fn small_spec(n: usize) -> EnsembleSpec {
        EnsembleSpec {
            n_refs: n,
            seed: 11,
            spin_up: 5.0,
            horizon: 2.0,
            ..Default::default()
        }
    }

    #[test]
    fn ensemble_is_deterministic() {
        let a = generate_ensemble(&small_spec(2), &l63(), &IntegratorConfig::default()).unwrap();
        let b = generate_ensemble(&small_spec(2), &l63(), &IntegratorConfig::default()).unwrap();
        assert_eq!(a.trajectories, b.trajectories);
        assert_eq!(a.trajectories[0].len(), 21);
        assert_ne!(a.trajectories[0], a.trajectories[1]);
    }

    #[test]
    fn member_draws_do_not_depend_on_ensemble_size() {
        let a = small_spec(1).initial_condition(0, 3);
        let b = small_spec(50).initial_condition(0, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn default_horizon_has_101_samples() {
        let spec = EnsembleSpec::default();
        assert_eq!(spec.samples_per_member(), 101);
        let t = spec.sample_times();
        assert_eq!(t[100], 10.0);
    }

    #[test]
    fn dataset_shapes_and_chain() {
        let ens = generate_ensemble(&small_spec(3), &l63(), &IntegratorConfig::default()).unwrap();
        let op = ObservationOperator::new(vec![1], 3).unwrap();
        let cfg = NudgingConfig::new(30.0, 0.1, op.clone());
        let ds = build_dataset(
            &l63(),
            &ens.trajectories,
            &cfg,
            15,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(ds.len(), 45);
        assert_eq!(ds.input_dim(), 4);
        assert_eq!(ds.output_dim(), 3);
        for i in 0..ds.len() - 1 {
            if ds.ref_ids()[i] == ds.ref_ids()[i + 1] {
                assert_eq!(&ds.input(i + 1)[..3], ds.output(i));
            }
            let k = ds.window_indices()[i];
            let r = &ens.trajectories[ds.ref_ids()[i]];
            assert_eq!(ds.input(i)[3], r.state(k)[0]);
        }
        assert_eq!(ds.input(0)[..3], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn exact_start_single_window_reproduces_reference() {
        let tight = IntegratorConfig {
            rel_tol: 1e-11,
            abs_tol: 1e-11,
            ..Default::default()
        };
        let ens = generate_ensemble(&small_spec(2), &l63(), &tight).unwrap();
        let op = ObservationOperator::new(vec![1], 3).unwrap();
        for r in &ens.trajectories {
            let cfg = NudgingConfig::new(30.0, 0.1, op.clone()).with_w0(r.state_vector(0));
            let ds = build_dataset(&l63(), core::slice::from_ref(r), &cfg, 1, &tight).unwrap();
            for (a, b) in ds.output(0).iter().zip(r.state(1)) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn short_reference_rejected() {
        let ens = generate_ensemble(&small_spec(1), &l63(), &IntegratorConfig::default()).unwrap();
        let op = ObservationOperator::new(vec![1], 3).unwrap();
        let cfg = NudgingConfig::new(30.0, 0.1, op);
        assert!(build_dataset(
            &l63(),
            &ens.trajectories,
            &cfg,
            21,
            &IntegratorConfig::default()
        )
        .is_err());
    }

    #[test]
    fn divergent_windows_invalidate_dataset() {
        // frozen innovation at mu = 300 blows up within a few windows
        let ens = generate_ensemble(&small_spec(1), &l63(), &IntegratorConfig::default()).unwrap();
        let op = ObservationOperator::new(vec![1], 3).unwrap();
        let cfg = NudgingConfig::new(300.0, 0.1, op).with_w0(StateVector::from([5.0, 5.0, 5.0]));
        let integ = IntegratorConfig {
            max_steps: 20_000,
            ..Default::default()
        };
        let err = build_dataset(&l63(), &ens.trajectories, &cfg, 20, &integ).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }
}
