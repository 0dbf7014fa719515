use alloc::vec::Vec;

use super::StateVector;
use crate::error::{Error, Result};

/// Time-stamped states of constant dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    times: Vec<f64>,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn new(dim: usize) -> Self {
        Trajectory {
            dim,
            times: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        Trajectory {
            dim,
            times: Vec::with_capacity(n),
            data: Vec::with_capacity(n * dim),
        }
    }

    /// Builds a trajectory from raw parts, checking the invariants.
    pub fn from_parts(dim: usize, times: Vec<f64>, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("trajectory dimension must be positive"));
        }
        if data.len() != times.len() * dim {
            return Err(Error::dim("trajectory data", times.len() * dim, data.len()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                "trajectory times must be strictly increasing",
            ));
        }
        Ok(Trajectory { dim, times, data })
    }

    /// Appends a sample. Times must be strictly increasing.
    pub fn push(&mut self, t: f64, state: &[f64]) -> Result<()> {
        if state.len() != self.dim {
            return Err(Error::dim("trajectory sample", self.dim, state.len()));
        }
        if let Some(&last) = self.times.last() {
            if !(t > last) {
                return Err(Error::invalid(
                    "trajectory times must be strictly increasing",
                ));
            }
        }
        self.times.push(t);
        self.data.extend_from_slice(state);
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Flat row-major state storage.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn state(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn state_vector(&self, k: usize) -> StateVector {
        StateVector::from_slice(self.state(k)).expect("trajectory dim is positive")
    }

    pub fn last_state(&self) -> Option<&[f64]> {
        if self.is_empty() {
            None
        } else {
            Some(self.state(self.len() - 1))
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        self.times
            .iter()
            .copied()
            .zip(self.data.chunks_exact(self.dim))
    }

    /// Copy with all times shifted by `-offset`.
    pub fn shifted(&self, offset: f64) -> Trajectory {
        Trajectory {
            dim: self.dim,
            times: self.times.iter().map(|t| t - offset).collect(),
            data: self.data.clone(),
        }
    }

    /// Index of the sample whose time equals `t` to within `tol`, if any.
    pub fn index_of_time(&self, t: f64, tol: f64) -> Option<usize> {
        let pos = self.times.partition_point(|&s| s < t - tol);
        (pos < self.len() && (self.times[pos] - t).abs() <= tol).then_some(pos)
    }
}
