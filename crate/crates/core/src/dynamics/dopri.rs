//! Dormand–Prince 5(4) with PI step-size control and 4th-order dense output.
//!
//! Coefficients and controller constants follow Hairer, Nørsett & Wanner's
//! DOPRI5. Steps are clamped so that every requested output time is hit
//! exactly, which keeps observation times bit-reproducible.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::{StateVector, Trajectory, VectorField};
use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

// PI controller
const SAFE: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;

/// Tolerances and sampling for [`integrate`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Sampling interval of the stored states in [`integrate`].
    pub dense_output_stride: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-8,
            max_step: 0.1,
            dense_output_stride: 0.01,
            max_steps: 50_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(self.rel_tol) || !in_unit(self.abs_tol) {
            return Err(Error::invalid(format!(
                "tolerances must lie in (0, 1), got rel {} abs {}",
                self.rel_tol, self.abs_tol
            )));
        }
        if !(self.max_step > 0.0) || !(self.dense_output_stride > 0.0) {
            return Err(Error::invalid(
                "max_step and dense_output_stride must be positive",
            ));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be positive"));
        }
        Ok(())
    }
}

/// Adaptive DOPRI5 stepper over a vector field.
pub struct Stepper<F> {
    field: F,
    cfg: IntegratorConfig,
    t: f64,
    y: Vec<f64>,
    h: f64,
    k: [Vec<f64>; 7],
    y_stage: Vec<f64>,
    y_new: Vec<f64>,
    fac_old: f64,
    rejected: bool,
    steps: usize,
    // dense output of the last accepted step
    t_old: f64,
    h_last: f64,
    rcont: [Vec<f64>; 5],
}

impl<F: VectorField> Stepper<F> {
    pub fn new(field: F, t0: f64, y0: &[f64], cfg: IntegratorConfig) -> Result<Self> {
        cfg.validate()?;
        let n = field.dim();
        if y0.len() != n {
            return Err(Error::dim("initial state", n, y0.len()));
        }
        if !y0.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("initial state must be finite"));
        }
        let z = || vec![0.0; n];
        let mut s = Stepper {
            field,
            cfg,
            t: t0,
            y: y0.to_vec(),
            h: 0.0,
            k: [z(), z(), z(), z(), z(), z(), z()],
            y_stage: z(),
            y_new: z(),
            fac_old: 1e-4,
            rejected: false,
            steps: 0,
            t_old: t0,
            h_last: 0.0,
            rcont: [z(), z(), z(), z(), z()],
        };
        s.field.eval(t0, &s.y, &mut s.k[0]);
        s.h = s.initial_step();
        Ok(s)
    }

    #[inline]
    pub fn t(&self) -> f64 {
        self.t
    }

    #[inline]
    pub fn state(&self) -> &[f64] {
        &self.y
    }

    /// Number of accepted plus rejected steps so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn field(&self) -> &F {
        &self.field
    }

    fn scale(&self, v: f64) -> f64 {
        self.cfg.abs_tol + self.cfg.rel_tol * v.abs()
    }

    fn initial_step(&mut self) -> f64 {
        let n = self.y.len() as f64;
        let mut dnf = 0.0;
        let mut dny = 0.0;
        for i in 0..self.y.len() {
            let sk = self.scale(self.y[i]);
            dnf += sq(self.k[0][i] / sk);
            dny += sq(self.y[i] / sk);
        }
        let h0 = if dnf <= 1e-10 || dny <= 1e-10 {
            1e-6
        } else {
            0.01 * libm::sqrt(dny / dnf)
        };
        let h0 = h0.min(self.cfg.max_step);
        for i in 0..self.y.len() {
            self.y_stage[i] = self.y[i] + h0 * self.k[0][i];
        }
        self.field.eval(self.t + h0, &self.y_stage, &mut self.k[1]);
        let mut der2 = 0.0;
        for i in 0..self.y.len() {
            let sk = self.scale(self.y[i]);
            der2 += sq((self.k[1][i] - self.k[0][i]) / sk);
        }
        let der2 = libm::sqrt(der2 / n) / h0;
        let der12 = der2.max(libm::sqrt(dnf / n));
        let h1 = if der12 <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            libm::pow(0.01 / der12, 0.2)
        };
        (100.0 * h0).min(h1).min(self.cfg.max_step)
    }

    /// One trial step of size `h` from the current state; fills `y_new`,
    /// `k[1..7]` and returns the scaled error norm.
    fn trial(&mut self, h: f64) -> f64 {
        let n = self.y.len();
        let t = self.t;
        let y = &self.y;
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let ys = &mut self.y_stage;
        for i in 0..n {
            ys[i] = y[i] + h * A21 * k1[i];
        }
        self.field.eval(t + C2 * h, ys, k2);
        for i in 0..n {
            ys[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        self.field.eval(t + C3 * h, ys, k3);
        for i in 0..n {
            ys[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        self.field.eval(t + C4 * h, ys, k4);
        for i in 0..n {
            ys[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        self.field.eval(t + C5 * h, ys, k5);
        for i in 0..n {
            ys[i] =
                y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        self.field.eval(t + h, ys, k6);
        let yn = &mut self.y_new;
        for i in 0..n {
            yn[i] =
                y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        self.field.eval(t + h, yn, k7);
        let mut err = 0.0;
        for i in 0..n {
            let e =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sk = self.cfg.abs_tol + self.cfg.rel_tol * y[i].abs().max(yn[i].abs());
            err += (e / sk) * (e / sk);
        }
        let err = libm::sqrt(err / n as f64);
        if err.is_finite() && yn.iter().all(|v| v.is_finite()) {
            err
        } else {
            f64::INFINITY
        }
    }

    fn accept(&mut self, h: f64) {
        let n = self.y.len();
        let [k1, _k2, k3, k4, k5, k6, k7] = &self.k;
        let [r1, r2, r3, r4, r5] = &mut self.rcont;
        for i in 0..n {
            let dy = self.y_new[i] - self.y[i];
            let bspl = h * k1[i] - dy;
            r1[i] = self.y[i];
            r2[i] = dy;
            r3[i] = bspl;
            r4[i] = dy - h * k7[i] - bspl;
            r5[i] =
                h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
        self.t_old = self.t;
        self.h_last = h;
        core::mem::swap(&mut self.y, &mut self.y_new);
        let (first, rest) = self.k.split_at_mut(1);
        core::mem::swap(&mut first[0], &mut rest[5]);
    }

    /// Evaluates the continuous extension of the last accepted step at `t`.
    pub fn dense_eval(&self, t: f64, out: &mut [f64]) {
        if self.h_last == 0.0 {
            out.copy_from_slice(&self.y);
            return;
        }
        let theta = (t - self.t_old) / self.h_last;
        let theta1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        for i in 0..out.len() {
            out[i] = r1[i] + theta * (r2[i] + theta1 * (r3[i] + theta * (r4[i] + theta1 * r5[i])));
        }
    }

    /// Start time of the last accepted step.
    pub fn last_step_start(&self) -> f64 {
        self.t_old
    }

    /// Integrates to exactly `t_target`, calling `on_step` after every accepted step.
    pub fn advance_to<C>(&mut self, t_target: f64, mut on_step: C) -> Result<()>
    where
        C: FnMut(&Self),
    {
        if t_target < self.t {
            return Err(Error::invalid(format!(
                "cannot integrate backwards from {} to {}",
                self.t, t_target
            )));
        }
        while self.t < t_target {
            if self.steps >= self.cfg.max_steps {
                return Err(Error::Integration {
                    t: self.t,
                    reason: format!("exceeded {} steps", self.cfg.max_steps),
                });
            }
            let mut h = self.h.min(self.cfg.max_step);
            let unclamped = h;
            let clamped = self.t + 1.01 * h >= t_target;
            if clamped {
                h = t_target - self.t;
            }
            if h <= 4.0 * f64::EPSILON * self.t.abs() || h < f64::MIN_POSITIVE {
                return Err(Error::Integration {
                    t: self.t,
                    reason: "step size underflow".to_string(),
                });
            }
            self.steps += 1;
            let err = self.trial(h);
            if err <= 1.0 {
                let fac11 = libm::pow(err, EXPO1);
                let mut fac = fac11 / libm::pow(self.fac_old, BETA);
                fac = (1.0 / FAC_MAX).max((1.0 / FAC_MIN).min(fac / SAFE));
                let mut h_new = h / fac;
                self.fac_old = err.max(1e-4);
                if self.rejected {
                    h_new = h_new.min(h);
                }
                self.rejected = false;
                self.accept(h);
                if clamped {
                    self.t = t_target;
                    h_new = h_new.max(unclamped);
                } else {
                    self.t += h;
                }
                self.h = h_new.min(self.cfg.max_step);
                on_step(self);
            } else {
                let fac11 = if err.is_finite() {
                    libm::pow(err, EXPO1)
                } else {
                    1.0 / FAC_MIN
                };
                self.h = h / (1.0 / FAC_MIN).min(fac11 / SAFE);
                self.rejected = true;
            }
        }
        Ok(())
    }
}

/// Integrates `field` from `t0` to `t1` and returns states sampled every
/// `config.dense_output_stride` plus the exact endpoint.
pub fn integrate<F: VectorField>(
    field: F,
    initial: &StateVector,
    t0: f64,
    t1: f64,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    if !(t1 > t0) {
        return Err(Error::invalid(format!("need t1 > t0, got [{t0}, {t1}]")));
    }
    let dim = initial.dim();
    let stride = config.dense_output_stride;
    let n_grid = libm::ceil((t1 - t0) / stride) as usize + 1;
    let mut traj = Trajectory::with_capacity(dim, n_grid + 1);
    traj.push(t0, initial)?;
    let mut next_k = 1usize;
    let grid = |k: usize| t0 + k as f64 * stride;
    let mut buf = vec![0.0; dim];
    let mut stepper = Stepper::new(field, t0, initial, *config)?;
    let end_guard = 1e-9 * stride;
    let mut push_err = None;
    stepper.advance_to(t1, |s| {
        while grid(next_k) <= s.t() && grid(next_k) < t1 - end_guard {
            let tk = grid(next_k);
            s.dense_eval(tk, &mut buf);
            if let Err(e) = traj.push(tk, &buf) {
                push_err.get_or_insert(e);
            }
            next_k += 1;
        }
    })?;
    if let Some(e) = push_err {
        return Err(e);
    }
    traj.push(t1, stepper.state())?;
    Ok(traj)
}

/// Integrates from `t0` landing exactly on every entry of `times`
/// (strictly increasing, all ≥ `t0`). A leading `t0` entry yields the initial state.
pub fn integrate_to<F: VectorField>(
    field: F,
    initial: &[f64],
    t0: f64,
    times: &[f64],
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    let dim = initial.len();
    let mut traj = Trajectory::with_capacity(dim, times.len());
    if times.is_empty() {
        return Ok(traj);
    }
    if times[0] < t0 {
        return Err(Error::invalid("output times must not precede t0"));
    }
    let mut stepper = Stepper::new(field, t0, initial, *config)?;
    for &t in times {
        stepper.advance_to(t, |_| {})?;
        traj.push(t, stepper.state())?;
    }
    Ok(traj)
}

/// Fixed-step DOPRI5 (5th-order solution, no error control). Used for
/// convergence-order checks.
pub fn integrate_fixed<F: VectorField>(
    field: F,
    initial: &[f64],
    t0: f64,
    t1: f64,
    n_steps: usize,
) -> Result<Vec<f64>> {
    if n_steps == 0 {
        return Err(Error::invalid("need at least one step"));
    }
    let cfg = IntegratorConfig {
        max_step: f64::INFINITY,
        ..IntegratorConfig::default()
    };
    let mut s = Stepper::new(field, t0, initial, cfg)?;
    let h = (t1 - t0) / n_steps as f64;
    for j in 0..n_steps {
        s.trial(h);
        s.accept(h);
        s.t = if j + 1 == n_steps {
            t1
        } else {
            t0 + (j + 1) as f64 * h
        };
    }
    Ok(s.y)
}

#[inline]
fn sq(x: f64) -> f64 {
    x * x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{FnField, Lorenz63Params};

    #[test]
    fn exponential_decay_matches_analytic() {
        let cfg = IntegratorConfig::default();
        let f = FnField::new(1, |_t, u: &[f64], out: &mut [f64]| out[0] = -u[0]);
        let traj = integrate(f, &StateVector::new(vec![1.0]).unwrap(), 0.0, 1.0, &cfg).unwrap();
        let end = traj.last_state().unwrap()[0];
        assert!((end - libm::exp(-1.0)).abs() <= 10.0 * cfg.rel_tol);
        assert_eq!(*traj.times().last().unwrap(), 1.0);
        // interior samples from dense output are accurate too
        for (t, y) in traj.iter() {
            assert!((y[0] - libm::exp(-t)).abs() < 1e-7, "t={t}");
        }
    }

    #[test]
    fn zero_field_is_constant() {
        let f = FnField::new(3, |_t, _u: &[f64], out: &mut [f64]| out.fill(0.0));
        let init = StateVector::new(vec![1.5, -2.0, 7.0]).unwrap();
        let traj = integrate(f, &init, 0.0, 2.0, &IntegratorConfig::default()).unwrap();
        for (_, y) in traj.iter() {
            assert_eq!(y, init.as_slice());
        }
    }

    #[test]
    fn stride_grid_and_endpoints() {
        let cfg = IntegratorConfig {
            dense_output_stride: 0.25,
            ..Default::default()
        };
        let f = FnField::new(1, |_t, u: &[f64], out: &mut [f64]| out[0] = u[0]);
        let traj = integrate(f, &StateVector::new(vec![1.0]).unwrap(), 0.0, 1.1, &cfg).unwrap();
        assert_eq!(traj.times(), &[0.0, 0.25, 0.5, 0.75, 1.0, 1.1]);
    }

    #[test]
    fn exact_landing_on_requested_times() {
        let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let traj = integrate_to(
            Lorenz63Params::default(),
            &[1.0, 1.0, 1.0],
            0.0,
            &times,
            &IntegratorConfig::default(),
        )
        .unwrap();
        assert_eq!(traj.times(), times.as_slice());
    }

    #[test]
    fn blow_up_reports_failure_time() {
        // du/dt = u^2 blows up at t = 1 from u(0) = 1
        let f = FnField::new(1, |_t, u: &[f64], out: &mut [f64]| out[0] = u[0] * u[0]);
        let cfg = IntegratorConfig {
            max_steps: 100_000,
            ..Default::default()
        };
        let err = integrate(f, &StateVector::new(vec![1.0]).unwrap(), 0.0, 2.0, &cfg).unwrap_err();
        match err {
            Error::Integration { t, .. } => assert!(t > 0.9 && t < 1.01, "t = {t}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_reversed_interval() {
        let f = Lorenz63Params::default();
        let init = StateVector::zeros(3);
        assert!(integrate(f, &init, 1.0, 0.5, &IntegratorConfig::default()).is_err());
    }
}
