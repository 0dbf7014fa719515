//! Limited-memory BFGS with a strong-Wolfe line search (bracketing and zoom
//! with safeguarded cubic interpolation).

use alloc::collections::VecDeque;
use alloc::vec::Vec;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LineSearchConfig {
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_evals: usize,
    pub max_step: f64,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        LineSearchConfig {
            c1: 1e-4,
            c2: 0.9,
            max_evals: 25,
            max_step: 1e10,
        }
    }
}

/// Accepted point of a line search.
#[derive(Debug, Clone)]
pub struct LineSearchStep {
    pub alpha: f64,
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
    pub evals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineSearchFailure {
    /// `d` is not a descent direction at `x`.
    NotDescent,
    /// No point satisfying both conditions within the evaluation budget.
    Exhausted,
}

struct Probe {
    alpha: f64,
    f: f64,
    dg: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

/// Minimiser of the cubic interpolating `(a, fa, da)` and `(b, fb, db)`,
/// safeguarded to lie well inside the interval.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    let fallback = 0.5 * (a + b);
    if !(disc >= 0.0) {
        return fallback;
    }
    let d2 = (b - a).signum() * libm::sqrt(disc);
    let denom = db - da + 2.0 * d2;
    if denom == 0.0 || !denom.is_finite() {
        return fallback;
    }
    let t = b - (b - a) * (db + d2 - d1) / denom;
    let margin = 0.1 * (hi - lo);
    if !t.is_finite() || t < lo + margin || t > hi - margin {
        fallback
    } else {
        t
    }
}

/// Finds `alpha` with `f(x + αd) ≤ f(x) + c1 α ∇f·d` and
/// `|∇f(x + αd)·d| ≤ c2 |∇f(x)·d|`, starting from `alpha0`.
pub fn strong_wolfe<F>(
    mut objective: F,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    d: &[f64],
    alpha0: f64,
    cfg: &LineSearchConfig,
) -> Result<LineSearchStep, LineSearchFailure>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let dg0 = dot(g0, d);
    if !(dg0 < 0.0) {
        return Err(LineSearchFailure::NotDescent);
    }
    let mut evals = 0;
    let mut eval = |alpha: f64, evals: &mut usize| {
        *evals += 1;
        let xa: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        let (f, g) = objective(&xa);
        let dg = dot(&g, d);
        Probe {
            alpha,
            f,
            dg,
            x: xa,
            g,
        }
    };
    let accept = |p: Probe, evals: usize| LineSearchStep {
        alpha: p.alpha,
        x: p.x,
        f: p.f,
        g: p.g,
        evals,
    };
    let sufficient = |p: &Probe| p.f.is_finite() && p.f <= f0 + cfg.c1 * p.alpha * dg0;
    let curvature = |p: &Probe| p.dg.abs() <= -cfg.c2 * dg0;

    let mut prev = Probe {
        alpha: 0.0,
        f: f0,
        dg: dg0,
        x: Vec::new(),
        g: Vec::new(),
    };
    let mut alpha = alpha0.min(cfg.max_step);
    let (mut lo, mut hi);
    loop {
        if evals >= cfg.max_evals {
            return Err(LineSearchFailure::Exhausted);
        }
        let cur = eval(alpha, &mut evals);
        if !sufficient(&cur) || (prev.alpha > 0.0 && cur.f >= prev.f) {
            lo = prev;
            hi = cur;
            break;
        }
        if curvature(&cur) {
            return Ok(accept(cur, evals));
        }
        if cur.dg >= 0.0 {
            lo = cur;
            hi = prev;
            break;
        }
        if alpha >= cfg.max_step {
            return Err(LineSearchFailure::Exhausted);
        }
        let next = (2.0 * alpha).min(cfg.max_step);
        prev = cur;
        alpha = next;
    }
    // zoom: lo satisfies sufficient decrease with the lowest f so far and
    // lo.dg·(hi.alpha − lo.alpha) < 0
    loop {
        if evals >= cfg.max_evals {
            return Err(LineSearchFailure::Exhausted);
        }
        let a = if hi.f.is_finite() {
            cubic_min(lo.alpha, lo.f, lo.dg, hi.alpha, hi.f, hi.dg)
        } else {
            0.5 * (lo.alpha + hi.alpha)
        };
        if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1.0) {
            return Err(LineSearchFailure::Exhausted);
        }
        let cur = eval(a, &mut evals);
        if !sufficient(&cur) || cur.f >= lo.f {
            hi = cur;
            continue;
        }
        if curvature(&cur) {
            return Ok(accept(cur, evals));
        }
        if cur.dg * (hi.alpha - lo.alpha) >= 0.0 {
            hi = lo;
        }
        lo = cur;
    }
}

/// Curvature pairs and the two-loop recursion.
#[derive(Debug, Clone)]
pub struct Lbfgs {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl Lbfgs {
    pub fn new(memory: usize) -> Self {
        Lbfgs {
            memory: memory.max(1),
            pairs: VecDeque::with_capacity(memory),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn reset(&mut self) {
        self.pairs.clear();
    }

    /// Stores the pair `s = x_{k+1} − x_k`, `y = g_{k+1} − g_k`; pairs with
    /// insufficient curvature are skipped. Returns whether it was stored.
    pub fn update(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if !(sy > 1e-12 * yy.max(f64::MIN_POSITIVE)) || !sy.is_finite() {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }

    /// Quasi-Newton direction `−H g`.
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = alloc::vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a)
        ];
        (f, g)
    }

    #[test]
    fn wolfe_step_satisfies_both_conditions() {
        let x = [-1.2, 1.0];
        let (f0, g0) = rosenbrock(&x);
        let d: Vec<f64> = g0.iter().map(|v| -v).collect();
        let cfg = LineSearchConfig::default();
        let step = strong_wolfe(rosenbrock, &x, f0, &g0, &d, 1.0, &cfg).unwrap();
        let dg0 = dot(&g0, &d);
        assert!(step.f <= f0 + cfg.c1 * step.alpha * dg0);
        assert!(dot(&step.g, &d).abs() <= -cfg.c2 * dg0);
    }

    #[test]
    fn ascent_direction_rejected() {
        let x = [0.0, 0.0];
        let (f0, g0) = rosenbrock(&x);
        let d = g0.clone();
        assert_eq!(
            strong_wolfe(
                rosenbrock,
                &x,
                f0,
                &g0,
                &d,
                1.0,
                &LineSearchConfig::default()
            )
            .unwrap_err(),
            LineSearchFailure::NotDescent
        );
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let mut x = alloc::vec![-1.2, 1.0];
        let (mut f, mut g) = rosenbrock(&x);
        let mut mem = Lbfgs::new(10);
        for _ in 0..200 {
            if dot(&g, &g) < 1e-20 {
                break;
            }
            let d = mem.direction(&g);
            let a0 = if mem.is_empty() { 1e-3 } else { 1.0 };
            let step =
                strong_wolfe(rosenbrock, &x, f, &g, &d, a0, &LineSearchConfig::default()).unwrap();
            assert!(step.f <= f);
            let s = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
            mem.update(s, y);
            x = step.x;
            f = step.f;
            g = step.g;
        }
        assert!(
            (x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6,
            "{x:?}"
        );
    }
}
