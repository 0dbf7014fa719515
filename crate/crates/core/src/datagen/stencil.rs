//! Per-component reduction for cyclic systems: component `i` is predicted
//! from the states at `i−2, i−1, i, i+1` plus whichever of those components
//! are observed.

use alloc::format;
use alloc::vec::Vec;

use super::{Dataset, TrainingSample};
use crate::error::{Error, Result};
use crate::nudging::ObservationOperator;

/// Input layout for one component's reduced network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stencil {
    component: usize,
    /// 0-based state positions of `i−2, i−1, i, i+1`.
    state_positions: [usize; 4],
    /// Slots in the observation vector of the observed stencil members, in
    /// stencil order.
    obs_slots: Vec<usize>,
}

impl Stencil {
    /// Stencil of 1-based `component` under `op`. Needs a ring of at least 4.
    pub fn new(op: &ObservationOperator, component: usize) -> Result<Self> {
        let d = op.state_dim();
        if d < 4 {
            return Err(Error::Unsupported(format!(
                "stencil reduction needs a ring of at least 4 components, got {d}"
            )));
        }
        if component == 0 || component > d {
            return Err(Error::invalid(format!(
                "component {component} outside [1, {d}]"
            )));
        }
        let p = component - 1;
        let state_positions = [(p + d - 2) % d, (p + d - 1) % d, p, (p + 1) % d];
        let obs_slots = state_positions
            .iter()
            .filter_map(|&q| op.observed_indices().binary_search(&(q + 1)).ok())
            .collect();
        Ok(Stencil {
            component,
            state_positions,
            obs_slots,
        })
    }

    /// 1-based component this stencil predicts.
    pub fn component(&self) -> usize {
        self.component
    }

    pub fn state_positions(&self) -> &[usize; 4] {
        &self.state_positions
    }

    pub fn obs_slots(&self) -> &[usize] {
        &self.obs_slots
    }

    pub fn input_width(&self) -> usize {
        4 + self.obs_slots.len()
    }

    /// Writes the reduced input for full `state` and observation vector `obs`.
    pub fn gather(&self, state: &[f64], obs: &[f64], out: &mut [f64]) {
        for (o, &p) in out.iter_mut().zip(&self.state_positions) {
            *o = state[p];
        }
        for (o, &s) in out[4..].iter_mut().zip(&self.obs_slots) {
            *o = obs[s];
        }
    }
}

/// Stencils of every component, in component order.
pub fn stencils(op: &ObservationOperator) -> Result<Vec<Stencil>> {
    (1..=op.state_dim()).map(|i| Stencil::new(op, i)).collect()
}

/// A scalar-output sample for one component.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSample {
    pub input: Vec<f64>,
    pub output: f64,
    pub ref_id: usize,
    pub window_index: usize,
}

/// Restricts a full sample to the stencil of 1-based `component`.
pub fn reduce_sample(
    sample: &TrainingSample,
    component: usize,
    op: &ObservationOperator,
) -> Result<ReducedSample> {
    let d = op.state_dim();
    if sample.input.len() != d + op.len() {
        return Err(Error::dim("sample input", d + op.len(), sample.input.len()));
    }
    if sample.output.len() != d {
        return Err(Error::dim("sample output", d, sample.output.len()));
    }
    let stencil = Stencil::new(op, component)?;
    let mut input = alloc::vec![0.0; stencil.input_width()];
    stencil.gather(&sample.input[..d], &sample.input[d..], &mut input);
    Ok(ReducedSample {
        input,
        output: sample.output[component - 1],
        ref_id: sample.ref_id,
        window_index: sample.window_index,
    })
}

/// The per-component dataset for 1-based `component` of a full dataset.
pub fn reduce_dataset(dataset: &Dataset, component: usize) -> Result<Dataset> {
    let meta = &dataset.meta;
    if !meta.system.is_cyclic() {
        return Err(Error::Unsupported(format!(
            "stencil reduction needs a cyclic system, got {}",
            meta.system.name()
        )));
    }
    if meta.reduced_component.is_some() {
        return Err(Error::invalid("dataset is already reduced"));
    }
    let op = ObservationOperator::new(meta.observed_indices.clone(), meta.state_dim)?;
    let stencil = Stencil::new(&op, component)?;
    let d = meta.state_dim;
    let width = stencil.input_width();
    let n = dataset.len();
    let mut inputs = alloc::vec![0.0; n * width];
    let mut outputs = Vec::with_capacity(n);
    for (i, row) in inputs.chunks_exact_mut(width).enumerate() {
        let x = dataset.input(i);
        stencil.gather(&x[..d], &x[d..], row);
        outputs.push(dataset.output(i)[component - 1]);
    }
    let mut meta = meta.clone();
    meta.reduced_component = Some(component);
    Dataset::from_parts(
        meta,
        width,
        1,
        inputs,
        outputs,
        dataset.ref_ids().to_vec(),
        dataset.window_indices().to_vec(),
    )
}
