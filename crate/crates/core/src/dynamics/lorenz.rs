use alloc::format;
use alloc::vec;

use super::{StateVector, VectorField};
use crate::error::{Error, Result};

/// Lorenz 63 parameters. The classic chaotic regime is σ = 10, ρ = 28, β = 8/3.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Lorenz63Params {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl Default for Lorenz63Params {
    fn default() -> Self {
        Lorenz63Params {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }
}

impl Lorenz63Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.rho > 0.0 && self.beta > 0.0) {
            return Err(Error::invalid(format!(
                "Lorenz 63 parameters must be positive, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Uniform bound on x²+y²+z² along attractor trajectories,
    /// `β²(ρ+σ)² / (4(β−1))`. Only defined for β > 1.
    pub fn attractor_bound(&self) -> Result<f64> {
        if self.beta <= 1.0 {
            return Err(Error::Domain(format!(
                "attractor bound requires beta > 1, got {}",
                self.beta
            )));
        }
        let rs = self.rho + self.sigma;
        Ok(self.beta * self.beta * rs * rs / (4.0 * (self.beta - 1.0)))
    }

    #[inline]
    pub(crate) fn rhs_into(&self, s: &[f64], out: &mut [f64]) {
        let (x, y, z) = (s[0], s[1], s[2]);
        out[0] = self.sigma * (y - x);
        out[1] = x * (self.rho - z) - y;
        out[2] = x * y - self.beta * z;
    }
}

impl VectorField for Lorenz63Params {
    fn dim(&self) -> usize {
        3
    }
    fn eval(&self, _t: f64, state: &[f64], out: &mut [f64]) {
        self.rhs_into(state, out)
    }
}

/// Lorenz 63 right-hand side `(σ(y−x), x(ρ−z)−y, xy−βz)`.
pub fn lorenz63_rhs(state: &StateVector, params: &Lorenz63Params) -> Result<StateVector> {
    if state.dim() != 3 {
        return Err(Error::dim("Lorenz 63 state", 3, state.dim()));
    }
    let mut out = vec![0.0; 3];
    params.rhs_into(state, &mut out);
    StateVector::new(out)
}

/// Lorenz 96 forcing and ring size.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Lorenz96Params {
    pub forcing: f64,
    pub dim: usize,
}

impl Default for Lorenz96Params {
    fn default() -> Self {
        Lorenz96Params {
            forcing: 10.0,
            dim: 40,
        }
    }
}

impl Lorenz96Params {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 4 {
            return Err(Error::invalid(format!(
                "Lorenz 96 needs at least 4 components, got {}",
                self.dim
            )));
        }
        if !self.forcing.is_finite() {
            return Err(Error::invalid("Lorenz 96 forcing must be finite"));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn rhs_into(&self, s: &[f64], out: &mut [f64]) {
        let d = s.len();
        for i in 0..d {
            let ip1 = if i + 1 == d { 0 } else { i + 1 };
            let im1 = if i == 0 { d - 1 } else { i - 1 };
            let im2 = (i + d - 2) % d;
            out[i] = (s[ip1] - s[im2]) * s[im1] - s[i] + self.forcing;
        }
    }
}

impl VectorField for Lorenz96Params {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, _t: f64, state: &[f64], out: &mut [f64]) {
        self.rhs_into(state, out)
    }
}

/// Lorenz 96 right-hand side `(x_{i+1} − x_{i−2}) x_{i−1} − x_i + F` with cyclic indices.
pub fn lorenz96_rhs(state: &StateVector, params: &Lorenz96Params) -> Result<StateVector> {
    params.validate()?;
    if state.dim() != params.dim {
        return Err(Error::dim("Lorenz 96 state", params.dim, state.dim()));
    }
    let mut out = vec![0.0; state.dim()];
    params.rhs_into(state, &mut out);
    StateVector::new(out)
}

/// The model systems the pipeline knows how to run.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum System {
    Lorenz63(Lorenz63Params),
    Lorenz96(Lorenz96Params),
}

impl System {
    pub fn validate(&self) -> Result<()> {
        match self {
            System::Lorenz63(p) => p.validate(),
            System::Lorenz96(p) => p.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            System::Lorenz63(_) => "lorenz63",
            System::Lorenz96(_) => "lorenz96",
        }
    }

    /// Whether the state lives on a ring (cyclic component indexing).
    pub fn is_cyclic(&self) -> bool {
        matches!(self, System::Lorenz96(_))
    }
}

impl VectorField for System {
    fn dim(&self) -> usize {
        match self {
            System::Lorenz63(_) => 3,
            System::Lorenz96(p) => p.dim,
        }
    }

    fn eval(&self, _t: f64, state: &[f64], out: &mut [f64]) {
        match self {
            System::Lorenz63(p) => p.rhs_into(state, out),
            System::Lorenz96(p) => p.rhs_into(state, out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn l63() -> Lorenz63Params {
        Lorenz63Params::default()
    }

    #[test]
    fn lorenz63_origin_is_fixed() {
        let out = lorenz63_rhs(&StateVector::zeros(3), &l63()).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn lorenz63_nontrivial_fixed_point() {
        let c = 72f64.sqrt();
        let out = lorenz63_rhs(&[c, c, 27.0].into(), &l63()).unwrap();
        for v in out.iter() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn lorenz63_unit_state() {
        let out = lorenz63_rhs(&[1.0, 1.0, 1.0].into(), &l63()).unwrap();
        assert_abs_diff_eq!(out[0], 0.0);
        assert_abs_diff_eq!(out[1], 26.0);
        assert_abs_diff_eq!(out[2], -5.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn lorenz63_rejects_wrong_dimension() {
        let s = StateVector::zeros(4);
        assert!(matches!(
            lorenz63_rhs(&s, &l63()),
            Err(Error::Dimension {
                expected: 3,
                actual: 4,
                ..
            })
        ));
    }

    #[test]
    fn attractor_bound_value() {
        let k = l63().attractor_bound().unwrap();
        assert_abs_diff_eq!(k, 1540.2666666666667, epsilon = 1e-9);
        let bad = Lorenz63Params { beta: 1.0, ..l63() };
        assert!(matches!(bad.attractor_bound(), Err(Error::Domain(_))));
    }

    #[test]
    fn lorenz96_uniform_state_is_fixed() {
        let p = Lorenz96Params::default();
        let s = StateVector::new(vec![10.0; 40]).unwrap();
        let out = lorenz96_rhs(&s, &p).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lorenz96_zero_state_gives_forcing() {
        let p = Lorenz96Params::default();
        let out = lorenz96_rhs(&StateVector::zeros(40), &p).unwrap();
        assert!(out.iter().all(|v| *v == 10.0));
    }

    #[test]
    fn lorenz96_cyclic_stencil() {
        let p = Lorenz96Params {
            forcing: 0.0,
            dim: 5,
        };
        let s = StateVector::new(vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let out = lorenz96_rhs(&s, &p).unwrap();
        // component 1: (x2 - x4) * x5 - x1
        assert_eq!(out[0], -11.0);
    }

    #[test]
    fn lorenz96_rejects_small_ring() {
        let p = Lorenz96Params {
            forcing: 8.0,
            dim: 3,
        };
        assert!(lorenz96_rhs(&StateVector::zeros(3), &p).is_err());
    }
}
