//! Constants from the Lorenz 63 nudging convergence results: the attractor
//! bound `K`, the nudged-solution bound `K̃ = 5K`, admissible `μ` and `δ`,
//! the decay rate `c` and the per-window contraction factor `γ`.

use crate::dynamics::Lorenz63Params;
use crate::error::Result;

/// Which observation pattern / time regime the bounds refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TheoryCase {
    /// x observed continuously in time.
    ContinuousX,
    /// x observed every δ time units.
    DiscreteX,
    /// y and z observed every δ time units.
    DiscreteYz,
}

impl TheoryCase {
    /// Observed components (1-based) for this case.
    pub fn observed_indices(&self) -> &'static [usize] {
        match self {
            TheoryCase::ContinuousX | TheoryCase::DiscreteX => &[1],
            TheoryCase::DiscreteYz => &[2, 3],
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, TheoryCase::ContinuousX)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TheoryBounds {
    pub case: TheoryCase,
    pub mu: f64,
    pub delta: f64,
    /// Attractor bound on x²+y²+z².
    pub k: f64,
    /// Bound on the squared norm of the nudged solution (yz case), `5K`.
    pub k_tilde: f64,
    pub mu_min: f64,
    /// Largest admissible observation spacing for the supplied `mu`
    /// (infinite for the continuous case).
    pub delta_max: f64,
    pub c: f64,
    /// Contraction of V over one window of length `delta`.
    pub gamma: f64,
}

impl TheoryBounds {
    pub fn mu_admissible(&self) -> bool {
        self.mu >= self.mu_min
    }

    pub fn delta_admissible(&self) -> bool {
        !self.case.is_discrete() || self.delta <= self.delta_max
    }

    /// Both hypotheses of the matching convergence result hold.
    pub fn hypotheses_satisfied(&self) -> bool {
        self.mu_admissible() && self.delta_admissible()
    }

    /// `V(t) ≤ e^{−ct} V(0)` envelope (continuous case).
    pub fn envelope(&self, t: f64, v0: f64) -> f64 {
        libm::exp(-self.c * t) * v0
    }
}

fn discrete_gamma(c: f64, delta: f64) -> f64 {
    (1.0 + (2.0 * c - 1.0) * libm::exp(-c * delta)) / (2.0 * c)
}

/// Smallest admissible nudging parameter for `case`.
pub fn mu_min(params: &Lorenz63Params, case: TheoryCase) -> Result<f64> {
    let k = params.attractor_bound()?;
    let Lorenz63Params { sigma, rho, beta } = *params;
    let rs2 = (rho + sigma) * (rho + sigma);
    Ok(match case {
        TheoryCase::ContinuousX => f64::max(2.0, 0.5 + rs2 - sigma + k + k / (2.0 * beta)),
        TheoryCase::DiscreteX => 2.0 * rs2 - 2.0 * sigma + 2.0 * k + k / beta,
        TheoryCase::DiscreteYz => 4.0 * f64::max(rs2 / sigma + k - 1.0, k - beta),
    })
}

/// Largest admissible observation spacing for `case` at nudging parameter `mu`.
pub fn delta_max(params: &Lorenz63Params, case: TheoryCase, mu: f64) -> Result<f64> {
    let k = params.attractor_bound()?;
    let k_tilde = 5.0 * k;
    let Lorenz63Params { sigma, rho, beta } = *params;
    Ok(match case {
        TheoryCase::ContinuousX => f64::INFINITY,
        TheoryCase::DiscreteX => {
            let a = 1.0 / (2.0 * mu);
            let b = 1.0 / (64.0 * (sigma + mu) * (sigma + mu));
            let c = 1.0 / (32.0 * mu * sigma * sigma);
            a.min(b).min(c)
        }
        TheoryCase::DiscreteYz => {
            let rk = rho + libm::sqrt(k);
            let a = sigma / (2.0 * mu * (rk * rk + k));
            let b = 1.0 / ((1.0 + mu) * (1.0 + mu) + k_tilde);
            let c = 1.0 / ((beta + mu) * (beta + mu) + k_tilde);
            a.min(b).min(c) / 64.0
        }
    })
}

/// All convergence constants for `case` at the supplied `(mu, delta)`.
///
/// Fails with a domain error when `beta <= 1`, where `K` is undefined.
pub fn theory_bounds(
    params: &Lorenz63Params,
    case: TheoryCase,
    mu: f64,
    delta: f64,
) -> Result<TheoryBounds> {
    params.validate()?;
    let k = params.attractor_bound()?;
    let mu_min = mu_min(params, case)?;
    let delta_max = delta_max(params, case, mu)?;
    let (c, gamma) = match case {
        TheoryCase::ContinuousX => {
            let c = f64::min(1.0, params.beta);
            (c, libm::exp(-c * delta))
        }
        TheoryCase::DiscreteX => {
            let c = (mu / 2.0).min(1.0).min(params.beta);
            (c, discrete_gamma(c, delta))
        }
        TheoryCase::DiscreteYz => {
            let c = (params.sigma / 2.0).min(mu);
            (c, discrete_gamma(c, delta))
        }
    };
    Ok(TheoryBounds {
        case,
        mu,
        delta,
        k,
        k_tilde: 5.0 * k,
        mu_min,
        delta_max,
        c,
        gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use approx::assert_abs_diff_eq;

    fn p() -> Lorenz63Params {
        Lorenz63Params::default()
    }

    #[test]
    fn attractor_bound_rounds_to_1540_27() {
        let b = theory_bounds(&p(), TheoryCase::ContinuousX, 1.0, 0.1).unwrap();
        assert_abs_diff_eq!(b.k, 1540.27, epsilon = 0.005);
    }

    #[test]
    fn continuous_mu_min() {
        let b = theory_bounds(&p(), TheoryCase::ContinuousX, 1.0, 0.1).unwrap();
        // 0.5 + 1444 - 10 + 1540.2667 + 288.8
        assert_abs_diff_eq!(b.mu_min, 3263.5667, epsilon = 0.01);
        assert_abs_diff_eq!(b.c, 1.0);
        assert!(!b.hypotheses_satisfied());
    }

    #[test]
    fn yz_k_tilde() {
        let b = theory_bounds(&p(), TheoryCase::DiscreteYz, 1.0, 0.1).unwrap();
        assert_abs_diff_eq!(b.k_tilde, 7701.33, epsilon = 0.01);
        assert_abs_diff_eq!(b.k_tilde, 5.0 * b.k);
        assert_abs_diff_eq!(b.c, 1.0);
    }

    #[test]
    fn discrete_x_experimental_setting_is_inadmissible() {
        let b = theory_bounds(&p(), TheoryCase::DiscreteX, 30.0, 0.1).unwrap();
        assert!(!b.mu_admissible());
        assert!(!b.delta_admissible());
        // 1/(64 * 40^2) is the binding spacing constraint at mu = 30
        assert_abs_diff_eq!(b.delta_max, 1.0 / (64.0 * 1600.0), epsilon = 1e-18);
    }

    #[test]
    fn admissible_discrete_x_gamma_below_one() {
        let mu = 1.05 * mu_min(&p(), TheoryCase::DiscreteX).unwrap();
        let dmax = delta_max(&p(), TheoryCase::DiscreteX, mu).unwrap();
        let b = theory_bounds(&p(), TheoryCase::DiscreteX, mu, dmax).unwrap();
        assert!(b.hypotheses_satisfied());
        assert!(b.gamma < 1.0);
        assert_abs_diff_eq!(b.gamma, 0.5 * (1.0 + libm::exp(-dmax)), epsilon = 1e-16);
    }

    #[test]
    fn beta_at_most_one_is_domain_error() {
        let q = Lorenz63Params { beta: 0.5, ..p() };
        assert!(matches!(
            theory_bounds(&q, TheoryCase::DiscreteX, 10.0, 0.1),
            Err(Error::Domain(_))
        ));
    }
}
