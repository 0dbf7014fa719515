//! Error metrics for assimilation runs and numerical checks of the Lorenz 63
//! nudging convergence results.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::assimilate::{AssimilationRun, Method};
use crate::datagen::{generate_ensemble, EnsembleSpec};
use crate::dynamics::{integrate_to, IntegratorConfig, Lorenz63Params, System, Trajectory};
use crate::error::{Error, Result};
use crate::nudging::{
    run_continuous_nudging, run_discrete_nudging, theory_bounds, Innovation, NudgingConfig,
    ObservationOperator, ObservationSeries, TheoryBounds, TheoryCase,
};
use crate::par::map_indexed;

/// Windows are truncated at the first energy below this value.
pub const ENERGY_FLOOR: f64 = 1e-24;

/// How squared errors of the state components are combined at one time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ComponentReduction {
    /// Averaged with times and runs.
    #[default]
    Mean,
    /// Summed, so the result is an RMS of the error norm.
    Sum,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RmseOptions {
    /// Start of the scored window, in the time units of the runs.
    pub k0_time: f64,
    pub horizon: f64,
    pub reduction: ComponentReduction,
    /// Score only these 1-based components.
    pub components: Option<Vec<usize>>,
}

impl Default for RmseOptions {
    fn default() -> Self {
        RmseOptions {
            k0_time: 5.0,
            horizon: 10.0,
            reduction: ComponentReduction::Mean,
            components: None,
        }
    }
}

impl RmseOptions {
    pub fn observed_only(mut self, operator: &ObservationOperator) -> Self {
        self.components = Some(operator.observed_indices().to_vec());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RmseReport {
    pub rmse: f64,
    pub n_runs: usize,
    pub n_times: usize,
    pub n_components: usize,
    pub k0_time: f64,
    pub horizon_time: f64,
    pub reduction: ComponentReduction,
    pub observed_only: bool,
    pub method: Option<Method>,
    /// Per run, the component-reduced squared error at each scored time.
    pub per_run: Vec<Vec<f64>>,
}

fn time_tol(t: f64) -> f64 {
    1e-9 * t.abs().max(1.0)
}

/// Spatio-temporal RMSE of `runs` against `refs` (paired by position) over
/// the times in `[k0_time, horizon]`.
pub fn rmse(
    runs: &[AssimilationRun],
    refs: &[Trajectory],
    opts: &RmseOptions,
) -> Result<RmseReport> {
    if runs.is_empty() {
        return Err(Error::invalid("no runs to score"));
    }
    if runs.len() != refs.len() {
        return Err(Error::dim("reference trajectories", runs.len(), refs.len()));
    }
    if !(opts.horizon >= opts.k0_time) {
        return Err(Error::invalid("horizon precedes k0_time"));
    }
    let d = runs[0].states.dim();
    let positions: Vec<usize> = match &opts.components {
        Some(c) => {
            if c.is_empty() || c.iter().any(|&i| i == 0 || i > d) {
                return Err(Error::invalid(format!(
                    "components {c:?} out of range 1..={d}"
                )));
            }
            c.iter().map(|i| i - 1).collect()
        }
        None => (0..d).collect(),
    };
    let method = runs[0].method;
    let mut per_run = Vec::with_capacity(runs.len());
    let mut n_times = None;
    for (n, (run, reference)) in runs.iter().zip(refs).enumerate() {
        let states = &run.states;
        if states.dim() != d || reference.dim() != d {
            return Err(Error::dim(
                "run state",
                d,
                states.dim().max(reference.dim()),
            ));
        }
        let times = states.times();
        let covers = |ts: &[f64]| {
            ts.first()
                .is_some_and(|&t| t <= opts.k0_time + time_tol(opts.k0_time))
                && ts
                    .last()
                    .is_some_and(|&t| t >= opts.horizon - time_tol(opts.horizon))
        };
        if !covers(times) || !covers(reference.times()) {
            return Err(Error::invalid(format!(
                "run {n} or its reference does not cover [{}, {}]",
                opts.k0_time, opts.horizon
            )));
        }
        let mut series = Vec::new();
        for (k, &t) in times.iter().enumerate() {
            if t < opts.k0_time - time_tol(t) || t > opts.horizon + time_tol(t) {
                continue;
            }
            let j = reference.index_of_time(t, time_tol(t)).ok_or_else(|| {
                Error::invalid(format!("run {n} time {t} has no matching reference sample"))
            })?;
            let (w, u) = (states.state(k), reference.state(j));
            let sq: f64 = positions
                .iter()
                .map(|&p| (w[p] - u[p]) * (w[p] - u[p]))
                .sum();
            series.push(match opts.reduction {
                ComponentReduction::Mean => sq / positions.len() as f64,
                ComponentReduction::Sum => sq,
            });
        }
        if *n_times.get_or_insert(series.len()) != series.len() {
            return Err(Error::invalid(format!(
                "run {n} has a different number of scored times"
            )));
        }
        per_run.push(series);
    }
    let n_times = n_times.unwrap_or(0);
    if n_times == 0 {
        return Err(Error::invalid("no sample times fall in the scored window"));
    }
    let total: f64 = per_run.iter().flatten().sum();
    Ok(RmseReport {
        rmse: libm::sqrt(total / (runs.len() * n_times) as f64),
        n_runs: runs.len(),
        n_times,
        n_components: positions.len(),
        k0_time: opts.k0_time,
        horizon_time: opts.horizon,
        reduction: opts.reduction,
        observed_only: opts.components.is_some(),
        method: if runs.iter().all(|r| r.method == method) {
            Some(method)
        } else {
            None
        },
        per_run,
    })
}

/// `‖w(t) − u(t)‖²` at every sample of two trajectories on the same grid.
pub fn error_energy(run: &Trajectory, reference: &Trajectory) -> Result<Vec<f64>> {
    if run.dim() != reference.dim() {
        return Err(Error::dim("reference", run.dim(), reference.dim()));
    }
    if run.len() != reference.len() {
        return Err(Error::dim("reference samples", run.len(), reference.len()));
    }
    run.times()
        .iter()
        .zip(reference.times())
        .enumerate()
        .map(|(k, (a, b))| {
            if (a - b).abs() > time_tol(*a) {
                return Err(Error::invalid(format!("sample {k}: time {a} vs {b}")));
            }
            Ok(run
                .state(k)
                .iter()
                .zip(reference.state(k))
                .map(|(w, u)| (w - u) * (w - u))
                .sum())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecayFit {
    /// Negative slope of `ln V` against time.
    pub fitted_rate: f64,
    pub theoretical_rate: Option<f64>,
    /// Time span actually fitted.
    pub window: (f64, f64),
    pub r_squared: f64,
    pub points: usize,
}

/// Least-squares fit of `ln V(t)` on the samples inside `window`, stopping at
/// the first value below [`ENERGY_FLOOR`].
pub fn fit_decay(times: &[f64], energy: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    if times.len() != energy.len() {
        return Err(Error::dim("energy series", times.len(), energy.len()));
    }
    let mut pts = Vec::new();
    for (&t, &v) in times.iter().zip(energy) {
        if t < window.0 - time_tol(t) || t > window.1 + time_tol(t) {
            continue;
        }
        if !(v >= ENERGY_FLOOR) {
            break;
        }
        pts.push((t, libm::log(v)));
    }
    if pts.len() < 3 {
        return Err(Error::invalid(format!(
            "decay fit needs at least 3 points, window has {}",
            pts.len()
        )));
    }
    // relative to the first point so that a constant series has exactly zero spread
    let l0 = pts[0].1;
    pts.iter_mut().for_each(|p| p.1 -= l0);
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let lm = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm) * (p.0 - tm)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - lm)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - lm) * (p.1 - lm)).sum();
    let slope = if syy == 0.0 { 0.0 } else { sxy / sxx };
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok(DecayFit {
        fitted_rate: -slope,
        theoretical_rate: None,
        window: (pts[0].0, pts[pts.len() - 1].0),
        r_squared,
        points: pts.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct VerifyOptions {
    pub n_refs: usize,
    pub seed: u64,
    /// Multiplicative slack on the continuous envelope.
    pub slack: f64,
    /// Length of the continuous run.
    pub horizon: f64,
    /// Output spacing of the continuous run and its reference.
    pub sample_interval: f64,
    pub spin_up: f64,
    pub integrator: IntegratorConfig,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            n_refs: 10,
            seed: 0,
            slack: 1.01,
            horizon: 3.0,
            sample_interval: 0.01,
            spin_up: 100.0,
            integrator: IntegratorConfig {
                rel_tol: 1e-10,
                abs_tol: 1e-10,
                ..IntegratorConfig::default()
            },
        }
    }
}

/// Outcome for one reference trajectory.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RefCheck {
    pub ref_id: usize,
    pub v0: f64,
    pub v_final: f64,
    /// Continuous case: largest `V(t) / (e^{−ct} V(0))`.
    pub max_envelope_ratio: Option<f64>,
    /// Discrete cases: largest `V(t_{n+1}) / V(t_n)`.
    pub max_window_ratio: Option<f64>,
    /// Window attaining `max_window_ratio`.
    pub worst_window: Option<usize>,
    /// Largest `|w|²` over the sampled run.
    pub max_norm_sq: f64,
    pub passed: bool,
    /// Integration failure, with the window where it happened.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TheoremReport {
    pub bounds: TheoryBounds,
    pub hypotheses_satisfied: bool,
    pub n_windows: usize,
    pub slack: f64,
    pub refs: Vec<RefCheck>,
    /// Every reference passed and the hypotheses hold. Runs outside the
    /// hypotheses are descriptive only and never pass.
    pub passed: bool,
}

impl TheoremReport {
    pub fn max_window_ratio(&self) -> Option<f64> {
        self.refs
            .iter()
            .filter_map(|r| r.max_window_ratio)
            .reduce(f64::max)
    }

    pub fn max_envelope_ratio(&self) -> Option<f64> {
        self.refs
            .iter()
            .filter_map(|r| r.max_envelope_ratio)
            .reduce(f64::max)
    }

    pub fn max_norm_sq(&self) -> f64 {
        self.refs.iter().map(|r| r.max_norm_sq).fold(0.0, f64::max)
    }
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn check_continuous(
    bounds: &TheoryBounds,
    run: &Trajectory,
    reference: &Trajectory,
) -> Result<(f64, f64, f64, f64)> {
    let energy = error_energy(run, reference)?;
    let v0 = energy[0];
    let mut worst = 0.0f64;
    for (t, v) in run.times().iter().zip(&energy) {
        let env = bounds.envelope(t - run.times()[0], v0);
        worst = worst.max(if env > 0.0 { v / env } else { 0.0 });
    }
    let max_norm = (0..run.len())
        .map(|k| norm_sq(run.state(k)))
        .fold(0.0, f64::max);
    Ok((v0, energy[energy.len() - 1], worst, max_norm))
}

/// Runs the nudging experiment matching `case` from `w0 = 0` against
/// `opts.n_refs` attractor trajectories and checks the conclusion of the
/// corresponding convergence result: the exponential envelope for
/// continuous observation of x, per-window contraction by `γ` for the
/// discrete cases, and additionally `|w|² ≤ K̃` for the y–z case. Discrete
/// runs use frozen innovation and `n_windows` windows of length `delta`.
pub fn verify_theorem(
    case: TheoryCase,
    params: &Lorenz63Params,
    mu: f64,
    delta: f64,
    n_windows: usize,
    opts: &VerifyOptions,
) -> Result<TheoremReport> {
    let bounds = theory_bounds(params, case, mu, delta)?;
    if opts.n_refs == 0 || (case.is_discrete() && n_windows == 0) {
        return Err(Error::invalid("need at least one reference and one window"));
    }
    let system = System::Lorenz63(*params);
    let integ = &opts.integrator;
    let spec = EnsembleSpec {
        n_refs: opts.n_refs,
        seed: opts.seed,
        spin_up: opts.spin_up,
        horizon: 1.0,
        sample_interval: 1.0,
        ..EnsembleSpec::default()
    };
    let starts = generate_ensemble(&spec, &system, integ)?;
    if let Some((i, e)) = starts.failures.first() {
        return Err(Error::invalid(format!(
            "spin-up of reference {i} failed: {e}"
        )));
    }
    let operator = ObservationOperator::new(case.observed_indices().to_vec(), 3)?;
    // the continuous run ignores the window length but the config must carry one
    let spacing = if case.is_discrete() {
        delta
    } else {
        opts.sample_interval
    };
    let nudge =
        NudgingConfig::new(mu, spacing, operator.clone()).with_innovation(Innovation::Frozen);
    let times: Vec<f64> = if case.is_discrete() {
        (0..=n_windows).map(|n| n as f64 * delta).collect()
    } else {
        let steps = libm::round(opts.horizon / opts.sample_interval) as usize;
        (0..=steps)
            .map(|k| k as f64 * opts.sample_interval)
            .collect()
    };

    let refs = map_indexed(starts.trajectories.len(), |i| -> Result<RefCheck> {
        let u0 = starts.trajectories[i].state(0);
        let reference = integrate_to(system, u0, 0.0, &times, integ)?;
        let run = if case.is_discrete() {
            let obs = ObservationSeries::from_trajectory(&reference, operator.clone())?;
            run_discrete_nudging(&obs, system, &nudge, integ)
        } else {
            run_continuous_nudging(&reference, &system, &nudge, integ)
        };
        let run = match run {
            Ok(r) => r,
            Err(e) => {
                return Ok(RefCheck {
                    ref_id: starts.ids[i],
                    v0: norm_sq(u0),
                    v_final: f64::NAN,
                    max_envelope_ratio: None,
                    max_window_ratio: None,
                    worst_window: None,
                    max_norm_sq: f64::NAN,
                    passed: false,
                    failure: Some(format!("{e}")),
                })
            }
        };
        if case.is_discrete() {
            let energy = error_energy(&run, &reference)?;
            let mut worst = (f64::NEG_INFINITY, 0);
            for (n, w) in energy.windows(2).enumerate() {
                if w[0] < ENERGY_FLOOR {
                    break;
                }
                let r = w[1] / w[0];
                if r > worst.0 {
                    worst = (r, n);
                }
            }
            let max_norm = (0..run.len())
                .map(|k| norm_sq(run.state(k)))
                .fold(0.0, f64::max);
            let mut passed = worst.0 <= bounds.gamma;
            if case == TheoryCase::DiscreteYz {
                passed &= max_norm <= bounds.k_tilde;
            }
            Ok(RefCheck {
                ref_id: starts.ids[i],
                v0: energy[0],
                v_final: energy[energy.len() - 1],
                max_envelope_ratio: None,
                max_window_ratio: worst.0.is_finite().then_some(worst.0),
                worst_window: worst.0.is_finite().then_some(worst.1),
                max_norm_sq: max_norm,
                passed,
                failure: None,
            })
        } else {
            let (v0, v_final, ratio, max_norm) = check_continuous(&bounds, &run, &reference)?;
            Ok(RefCheck {
                ref_id: starts.ids[i],
                v0,
                v_final,
                max_envelope_ratio: Some(ratio),
                max_window_ratio: None,
                worst_window: None,
                max_norm_sq: max_norm,
                passed: ratio <= opts.slack,
                failure: None,
            })
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let hypotheses_satisfied = bounds.hypotheses_satisfied();
    let passed = hypotheses_satisfied && refs.iter().all(|r| r.passed);
    Ok(TheoremReport {
        bounds,
        hypotheses_satisfied,
        n_windows: if case.is_discrete() { n_windows } else { 0 },
        slack: opts.slack,
        refs,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn traj(times: &[f64], states: &[[f64; 3]]) -> Trajectory {
        let mut t = Trajectory::with_capacity(3, times.len());
        for (s, x) in times.iter().zip(states) {
            t.push(*s, x).unwrap();
        }
        t
    }

    fn run(t: Trajectory) -> AssimilationRun {
        AssimilationRun {
            method: Method::Nudging,
            provenance: String::new(),
            states: t,
        }
    }

    fn one_point_opts(reduction: ComponentReduction) -> RmseOptions {
        RmseOptions {
            k0_time: 0.0,
            horizon: 0.0,
            reduction,
            components: None,
        }
    }

    #[test]
    fn hand_computed_rmse() {
        let reference = traj(&[0.0], &[[0.0; 3]]);
        let r = run(traj(&[0.0], &[[3.0, 4.0, 0.0]]));
        let mean = rmse(
            std::slice::from_ref(&r),
            std::slice::from_ref(&reference),
            &one_point_opts(ComponentReduction::Mean),
        )
        .unwrap();
        assert!((mean.rmse - libm::sqrt(25.0 / 3.0)).abs() < 1e-15);
        let sum = rmse(
            std::slice::from_ref(&r),
            std::slice::from_ref(&reference),
            &one_point_opts(ComponentReduction::Sum),
        )
        .unwrap();
        assert_eq!(sum.rmse, 5.0);
        let obs = ObservationOperator::new(vec![2], 3).unwrap();
        let only = rmse(
            &[r],
            &[reference],
            &one_point_opts(ComponentReduction::Mean).observed_only(&obs),
        )
        .unwrap();
        assert_eq!(only.rmse, 4.0);
        assert!(only.observed_only);
    }

    #[test]
    fn window_excludes_burn_in() {
        let times = [0.0, 0.5, 1.0, 1.5];
        let reference = traj(&times, &[[0.0; 3]; 4]);
        let r = run(traj(&times, &[[100.0; 3], [1.0; 3], [1.0; 3], [1.0; 3]]));
        let opts = RmseOptions {
            k0_time: 0.5,
            horizon: 1.5,
            ..Default::default()
        };
        let rep = rmse(&[r], &[reference], &opts).unwrap();
        assert_eq!(rep.rmse, 1.0);
        assert_eq!(rep.n_times, 3);
    }

    #[test]
    fn misalignment_rejected() {
        let reference = traj(&[0.0, 1.0], &[[0.0; 3]; 2]);
        let r = run(traj(&[0.0, 0.9], &[[0.0; 3]; 2]));
        let opts = RmseOptions {
            k0_time: 0.0,
            horizon: 0.9,
            ..Default::default()
        };
        assert!(rmse(
            std::slice::from_ref(&r),
            std::slice::from_ref(&reference),
            &opts
        )
        .is_err());
        assert!(rmse(&[r.clone(), r], &[reference], &opts).is_err());
    }

    #[test]
    fn energy_of_constant_offset() {
        let times = [0.0, 1.0, 2.0];
        let a = traj(&times, &[[1.0, 2.0, 3.0]; 3]);
        let b = traj(&times, &[[1.0, 5.0, 7.0]; 3]);
        assert_eq!(error_energy(&a, &b).unwrap(), vec![25.0; 3]);
        assert_eq!(error_energy(&a, &a).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn decay_of_exact_exponential() {
        let t: Vec<f64> = (0..=100).map(|k| k as f64 * 0.03).collect();
        let v: Vec<f64> = t.iter().map(|s| libm::exp(-2.0 * s)).collect();
        let fit = fit_decay(&t, &v, (0.0, 3.0)).unwrap();
        assert!((fit.fitted_rate - 2.0).abs() < 1e-8);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        let c = fit_decay(&t, &vec![4.0; t.len()], (0.0, 3.0)).unwrap();
        assert_eq!(c.fitted_rate, 0.0);
    }

    #[test]
    fn decay_fit_stops_at_floor() {
        let t: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let v: Vec<f64> = t.iter().map(|s| libm::exp(-20.0 * s)).collect();
        let fit = fit_decay(&t, &v, (0.0, 9.0)).unwrap();
        assert_eq!(fit.points, 3);
        assert!(fit_decay(&t[..2], &v[..2], (0.0, 9.0)).is_err());
    }

    #[test]
    fn inadmissible_discrete_run_is_descriptive() {
        let opts = VerifyOptions {
            n_refs: 2,
            integrator: IntegratorConfig {
                max_steps: 200_000,
                ..IntegratorConfig::default()
            },
            ..Default::default()
        };
        let rep = verify_theorem(
            TheoryCase::DiscreteX,
            &Lorenz63Params::default(),
            30.0,
            0.1,
            20,
            &opts,
        )
        .unwrap();
        assert!(!rep.hypotheses_satisfied);
        assert!(!rep.passed);
        assert_eq!(rep.refs.len(), 2);
        assert!(rep
            .refs
            .iter()
            .all(|r| r.max_window_ratio.is_some() || r.failure.is_some()));
    }
}
