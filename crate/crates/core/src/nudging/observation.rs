use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dynamics::{StateVector, Trajectory};
use crate::error::{Error, Result};

/// Interpolant `I_M` realised as a projection onto a set of state components.
///
/// Indices are 1-based, sorted and distinct.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObservationOperator {
    observed_indices: Vec<usize>,
    state_dim: usize,
}

impl ObservationOperator {
    pub fn new(observed_indices: Vec<usize>, state_dim: usize) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::invalid("state_dim must be positive"));
        }
        if observed_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "observed indices must be sorted and distinct",
            ));
        }
        if let Some(&bad) = observed_indices.iter().find(|&&i| i == 0 || i > state_dim) {
            return Err(Error::invalid(format!(
                "observed index {bad} outside [1, {state_dim}]"
            )));
        }
        Ok(ObservationOperator {
            observed_indices,
            state_dim,
        })
    }

    /// Every `step`-th component starting at 1-based `first`.
    pub fn every(state_dim: usize, first: usize, step: usize) -> Result<Self> {
        if step == 0 {
            return Err(Error::invalid("step must be positive"));
        }
        Self::new((first..=state_dim).step_by(step).collect(), state_dim)
    }

    pub fn observed_indices(&self) -> &[usize] {
        &self.observed_indices
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Number of observed components.
    pub fn len(&self) -> usize {
        self.observed_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed_indices.is_empty()
    }

    /// 0-based positions of the observed components.
    pub fn positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.observed_indices.iter().map(|i| i - 1)
    }

    pub fn observes(&self, index_1based: usize) -> bool {
        self.observed_indices.binary_search(&index_1based).is_ok()
    }

    pub(crate) fn check_state(&self, len: usize) -> Result<()> {
        if len != self.state_dim {
            return Err(Error::dim("observed state", self.state_dim, len));
        }
        Ok(())
    }

    /// Writes the observed components of `state` into `out` in index order.
    pub fn apply_into(&self, state: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_state(state.len())?;
        if out.len() != self.len() {
            return Err(Error::dim("observation buffer", self.len(), out.len()));
        }
        for (o, p) in out.iter_mut().zip(self.positions()) {
            *o = state[p];
        }
        Ok(())
    }

    pub fn apply(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.apply_into(state, &mut out)?;
        Ok(out)
    }

    /// Zero-filled state whose observed components are `obs`.
    pub fn embed(&self, obs: &[f64]) -> Result<StateVector> {
        if obs.len() != self.len() {
            return Err(Error::dim("observation", self.len(), obs.len()));
        }
        let mut s = StateVector::zeros(self.state_dim);
        for (v, p) in obs.iter().zip(self.positions()) {
            s[p] = *v;
        }
        Ok(s)
    }
}

/// Applies `op` to `state`.
pub fn apply_observation(op: &ObservationOperator, state: &StateVector) -> Result<Vec<f64>> {
    op.apply(state)
}

/// Observations `I_M(u(t_n))` at uniformly spaced times.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    times: Vec<f64>,
    values: Vec<f64>,
    operator: ObservationOperator,
}

/// Relative tolerance on the uniformity of observation spacing.
pub const SPACING_TOL: f64 = 1e-12;

impl ObservationSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, operator: ObservationOperator) -> Result<Self> {
        let m = operator.len();
        if values.len() != times.len() * m {
            return Err(Error::dim(
                "observation values",
                times.len() * m,
                values.len(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                "observation times must be strictly increasing",
            ));
        }
        if times.len() >= 3 {
            let delta = times[1] - times[0];
            for w in times.windows(2) {
                let d = w[1] - w[0];
                // Spacing is compared relative to the time magnitude as well, since
                // times of the form t0 + n*delta carry rounding of order eps*|t|.
                let scale = delta
                    .abs()
                    .max(w[1].abs() * 4.0 * f64::EPSILON / SPACING_TOL);
                if (d - delta).abs() > SPACING_TOL * scale {
                    return Err(Error::invalid(format!(
                        "observation spacing is not uniform: {d} vs {delta}"
                    )));
                }
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observations must be finite"));
        }
        Ok(ObservationSeries {
            times,
            values,
            operator,
        })
    }

    /// Observes every stored state of `reference`.
    pub fn from_trajectory(reference: &Trajectory, operator: ObservationOperator) -> Result<Self> {
        operator.check_state(reference.dim())?;
        let m = operator.len();
        let mut values = vec![0.0; reference.len() * m];
        for (k, chunk) in values
            .chunks_exact_mut(m.max(1))
            .enumerate()
            .take(reference.len())
        {
            operator.apply_into(reference.state(k), &mut chunk[..m])?;
        }
        Self::new(reference.times().to_vec(), values, operator)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, k: usize) -> &[f64] {
        let m = self.operator.len();
        &self.values[k * m..(k + 1) * m]
    }

    pub fn operator(&self) -> &ObservationOperator {
        &self.operator
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Observation spacing, if at least two observations exist.
    pub fn delta(&self) -> Option<f64> {
        (self.times.len() >= 2).then(|| self.times[1] - self.times[0])
    }

    /// The first `n` observations.
    pub fn truncated(&self, n: usize) -> ObservationSeries {
        let n = n.min(self.len());
        let m = self.operator.len();
        ObservationSeries {
            times: self.times[..n].to_vec(),
            values: self.values[..n * m].to_vec(),
            operator: self.operator.clone(),
        }
    }

    /// The observations from index `start` onwards.
    pub fn suffix(&self, start: usize) -> ObservationSeries {
        let start = start.min(self.len());
        let m = self.operator.len();
        ObservationSeries {
            times: self.times[start..].to_vec(),
            values: self.values[start * m..].to_vec(),
            operator: self.operator.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[f64]) -> StateVector {
        StateVector::from_slice(v).unwrap()
    }

    #[test]
    fn projects_single_components() {
        let x = ObservationOperator::new(vec![1], 3).unwrap();
        let y = ObservationOperator::new(vec![2], 3).unwrap();
        assert_eq!(
            apply_observation(&x, &s(&[7.0, 8.0, 9.0])).unwrap(),
            vec![7.0]
        );
        assert_eq!(
            apply_observation(&y, &s(&[7.0, 8.0, 9.0])).unwrap(),
            vec![8.0]
        );
    }

    #[test]
    fn even_components_of_forty() {
        let op = ObservationOperator::every(40, 2, 2).unwrap();
        assert_eq!(op.len(), 20);
        let state: Vec<f64> = (1..=40).map(|i| i as f64).collect();
        let obs = op.apply(&state).unwrap();
        let expect: Vec<f64> = (1..=20).map(|j| (2 * j) as f64).collect();
        assert_eq!(obs, expect);
    }

    #[test]
    fn every_third_gives_thirteen() {
        let op = ObservationOperator::every(40, 1, 3).unwrap();
        assert_eq!(op.len(), 14);
        let op = ObservationOperator::every(40, 2, 3).unwrap();
        assert_eq!(op.len(), 13);
    }

    #[test]
    fn rejects_bad_indices() {
        assert!(ObservationOperator::new(vec![0], 3).is_err());
        assert!(ObservationOperator::new(vec![4], 3).is_err());
        assert!(ObservationOperator::new(vec![2, 2], 3).is_err());
        assert!(ObservationOperator::new(vec![3, 1], 3).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let op = ObservationOperator::new(vec![1], 3).unwrap();
        assert!(matches!(
            op.apply(&[1.0, 2.0]),
            Err(Error::Dimension {
                expected: 3,
                actual: 2,
                ..
            })
        ));
    }

    #[test]
    fn series_requires_uniform_spacing() {
        let op = ObservationOperator::new(vec![1], 1).unwrap();
        assert!(ObservationSeries::new(vec![0.0, 0.1, 0.3], vec![0.0; 3], op.clone()).is_err());
        let times: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        assert!(ObservationSeries::new(times, vec![0.0; 100], op).is_ok());
    }
}
