//! Full-batch L-BFGS training of the ResNet surrogate with validation-based
//! early stopping and a continuation schedule on the bias-ordering penalty.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::datagen::{reduce_dataset, Dataset};
use crate::error::{Error, Result};
use crate::optim::{strong_wolfe, Lbfgs, LineSearchConfig};
use crate::par::map_indexed;
use crate::resnet::{
    bias_order_violation, box_init, data_loss, forward_batch, loss_and_gradient, Batch, InitScheme,
    LossConfig, ResNetArch, ResNetParams,
};
use crate::rng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LineSearchKind {
    #[default]
    StrongWolfe,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    /// Fraction of references assigned to the training side.
    pub split_fraction: f64,
    pub patience: usize,
    pub max_iters: usize,
    pub lbfgs_memory: usize,
    pub seed: u64,
    pub line_search: LineSearchKind,
    /// Iterations between doublings of the bias-ordering penalty; 0 disables
    /// continuation.
    pub continuation_interval: usize,
    pub continuation_factor: f64,
    pub init: InitScheme,
    /// Consecutive line-search failures that abort training.
    pub max_line_search_failures: usize,
    /// Stop once the relative objective decrease over an iteration stays below
    /// this value for ten consecutive iterations.
    pub ftol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            split_fraction: 0.8,
            patience: 400,
            max_iters: 4000,
            lbfgs_memory: 20,
            seed: 0,
            line_search: LineSearchKind::StrongWolfe,
            continuation_interval: 2000,
            continuation_factor: 2.0,
            init: InitScheme::Box,
            max_line_search_failures: 10,
            ftol: 1e-12,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::invalid("split_fraction must lie in (0, 1)"));
        }
        if self.patience == 0 || self.max_iters == 0 || self.lbfgs_memory == 0 {
            return Err(Error::invalid(
                "patience, max_iters and lbfgs_memory must be positive",
            ));
        }
        if !(self.continuation_factor >= 1.0) {
            return Err(Error::invalid("continuation_factor must be at least 1"));
        }
        if self.max_line_search_failures == 0 {
            return Err(Error::invalid("max_line_search_failures must be positive"));
        }
        Ok(())
    }
}

/// Per-column affine standardisation of inputs and targets. Fitted on the
/// training side and stored with the model; the network sees standardised
/// data only.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Normalizer {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
}

fn column_stats(data: &[f64], width: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (data.len() / width).max(1) as f64;
    let mut mean = vec![0.0; width];
    for row in data.chunks_exact(width) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; width];
    for row in data.chunks_exact(width) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|s| {
            let sd = libm::sqrt(s / n);
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

fn standardize(data: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    let w = mean.len();
    data.chunks_exact(w)
        .flat_map(|row| row.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s))
        .collect()
}

impl Normalizer {
    pub fn identity(input: usize, output: usize) -> Self {
        Normalizer {
            input_mean: vec![0.0; input],
            input_std: vec![1.0; input],
            output_mean: vec![0.0; output],
            output_std: vec![1.0; output],
        }
    }

    pub fn fit(dataset: &Dataset) -> Self {
        let (input_mean, input_std) = column_stats(dataset.inputs(), dataset.input_dim());
        let (output_mean, output_std) = column_stats(dataset.outputs(), dataset.output_dim());
        Normalizer {
            input_mean,
            input_std,
            output_mean,
            output_std,
        }
    }

    pub fn inputs(&self, raw: &[f64]) -> Vec<f64> {
        standardize(raw, &self.input_mean, &self.input_std)
    }

    pub fn outputs(&self, raw: &[f64]) -> Vec<f64> {
        standardize(raw, &self.output_mean, &self.output_std)
    }

    /// Maps standardised network outputs back to data units.
    pub fn denormalize_outputs(&self, scaled: &mut [f64]) {
        let w = self.output_mean.len();
        for row in scaled.chunks_exact_mut(w) {
            for ((v, m), s) in row.iter_mut().zip(&self.output_mean).zip(&self.output_std) {
                *v = *v * s + m;
            }
        }
    }
}

/// A trained surrogate: architecture, parameters and data transform.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainedModel {
    pub arch: ResNetArch,
    pub params: ResNetParams,
    pub normalizer: Normalizer,
}

impl TrainedModel {
    pub fn input_width(&self) -> usize {
        self.arch.input_width()
    }

    pub fn output_width(&self) -> usize {
        self.arch.output_width()
    }

    /// Outputs in data units for row-major raw inputs.
    pub fn predict_batch(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        if !inputs.len().is_multiple_of(self.input_width()) {
            return Err(Error::dim("model input", self.input_width(), inputs.len()));
        }
        let mut out = forward_batch(&self.params, &self.arch, &self.normalizer.inputs(inputs))?;
        self.normalizer.denormalize_outputs(&mut out);
        Ok(out)
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_width() {
            return Err(Error::dim("model input", self.input_width(), input.len()));
        }
        self.predict_batch(input)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StopReason {
    Patience,
    MaxIters,
    Converged,
    LineSearchFailures,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainReport {
    pub iterations_run: usize,
    pub best_iteration: usize,
    /// Standardised validation data loss of the returned parameters.
    pub best_validation_loss: f64,
    /// Standardised training data loss of the returned parameters.
    pub final_training_loss: f64,
    /// Validation RMSE per output component, in data units.
    pub validation_rmse: f64,
    /// `½ Σ min{b^{j+1} − b^j, 0}²` of the returned parameters.
    pub bias_order_violation: f64,
    pub final_gamma_penalty: f64,
    pub line_search_failures: usize,
    pub stop_reason: StopReason,
    pub train_samples: usize,
    pub validation_samples: usize,
    /// Filled by callers that have a clock.
    pub wallclock_seconds: Option<f64>,
    /// `(objective, validation data loss)` after every iteration; entry 0 is
    /// the initial point.
    pub loss_history: Vec<(f64, f64)>,
}

/// Splits by whole references: the distinct reference ids are shuffled with
/// the seed and the first `round(fraction · refs)` go to the training side.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("split fraction must lie in (0, 1)"));
    }
    let mut refs = dataset.distinct_refs();
    refs.sort_unstable();
    let n_train = libm::round(fraction * refs.len() as f64) as usize;
    if n_train == 0 || n_train == refs.len() {
        return Err(Error::invalid(format!(
            "fraction {fraction} of {} references leaves one side empty",
            refs.len()
        )));
    }
    let mut rng = rng::stream(seed, rng::domain::SPLIT, 0);
    refs.shuffle(&mut rng);
    let mut train_refs = refs[..n_train].to_vec();
    train_refs.sort_unstable();
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (i, r) in dataset.ref_ids().iter().enumerate() {
        if train_refs.binary_search(r).is_ok() {
            train.push(i);
        } else {
            valid.push(i);
        }
    }
    Ok((dataset.subset(&train), dataset.subset(&valid)))
}

/// Patience-based stopping on a validation series.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_iter: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_iter: 0,
        }
    }

    /// Records the validation loss of iteration `iter`; returns true when the
    /// loss has not improved for `patience` iterations.
    pub fn observe(&mut self, iter: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_iter = iter;
        }
        iter >= self.best_iter + self.patience
    }

    /// Whether the most recent observation was a new best.
    pub fn improved_at(&self, iter: usize) -> bool {
        self.best_iter == iter
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_iter, self.best)
    }
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum::<f64>())
}

/// Trains on an explicit train/validation pair.
pub fn train_split(
    train: &Dataset,
    valid: &Dataset,
    arch: &ResNetArch,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, TrainReport)> {
    arch.validate()?;
    loss_cfg.validate()?;
    cfg.validate()?;
    for (name, d) in [("training", train), ("validation", valid)] {
        if d.is_empty() {
            return Err(Error::invalid(format!("{name} set is empty")));
        }
        if d.input_dim() != arch.input_width() || d.output_dim() != arch.output_width() {
            return Err(Error::invalid(format!(
                "{name} set is {} -> {}, network is {} -> {}",
                d.input_dim(),
                d.output_dim(),
                arch.input_width(),
                arch.output_width()
            )));
        }
    }
    let normalizer = Normalizer::fit(train);
    let (tx, ty) = (
        normalizer.inputs(train.inputs()),
        normalizer.outputs(train.outputs()),
    );
    let (vx, vy) = (
        normalizer.inputs(valid.inputs()),
        normalizer.outputs(valid.outputs()),
    );
    let tb = Batch::new(&tx, &ty, arch)?;
    let vb = Batch::new(&vx, &vy, arch)?;

    let mut lcfg = *loss_cfg;
    let objective = |p: &[f64], lcfg: &LossConfig| -> (f64, Vec<f64>) {
        let params = ResNetParams { values: p.to_vec() };
        match loss_and_gradient(&params, arch, &tb, lcfg) {
            Ok((f, g)) => (f, g.values),
            Err(_) => (f64::NAN, vec![0.0; p.len()]),
        }
    };
    let validation = |p: &[f64]| -> f64 {
        data_loss(&ResNetParams { values: p.to_vec() }, arch, &vb).unwrap_or(f64::NAN)
    };

    let mut x = box_init(arch, cfg.seed, cfg.init).values;
    let (mut f, mut g) = objective(&x, &lcfg);
    if !f.is_finite() {
        return Err(Error::Optimizer(
            "objective is not finite at the initial point".into(),
        ));
    }
    let mut stopper = EarlyStopping::new(cfg.patience);
    let v0 = validation(&x);
    stopper.observe(0, v0);
    let mut best_x = x.clone();
    let mut history = vec![(f, v0)];
    let mut memory = Lbfgs::new(cfg.lbfgs_memory);
    let ls = LineSearchConfig::default();
    let mut failures = 0usize;
    let mut total_failures = 0usize;
    let mut stalls = 0usize;
    let mut stop = StopReason::MaxIters;
    let mut iters = 0;

    for iter in 1..=cfg.max_iters {
        if lcfg.bias_ordering
            && cfg.continuation_interval > 0
            && iter > 1
            && (iter - 1) % cfg.continuation_interval == 0
        {
            lcfg.gamma_penalty *= cfg.continuation_factor;
            (f, g) = objective(&x, &lcfg);
            memory.reset();
        }
        let mut d = memory.direction(&g);
        if d.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() >= 0.0 {
            memory.reset();
            d = g.iter().map(|v| -v).collect();
        }
        let alpha0 = if memory.is_empty() {
            (1.0 / norm(&g).max(1e-300)).min(1.0)
        } else {
            1.0
        };
        let mut result = strong_wolfe(|p| objective(p, &lcfg), &x, f, &g, &d, alpha0, &ls);
        if result.is_err() && !memory.is_empty() {
            // restart from steepest descent
            memory.reset();
            d = g.iter().map(|v| -v).collect();
            let a0 = (1.0 / norm(&g).max(1e-300)).min(1.0);
            result = strong_wolfe(|p| objective(p, &lcfg), &x, f, &g, &d, a0, &ls);
        }
        iters = iter;
        match result {
            Ok(step) => {
                failures = 0;
                let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
                memory.update(s, y);
                let rel = (f - step.f) / f.abs().max(1e-300);
                stalls = if rel < cfg.ftol { stalls + 1 } else { 0 };
                x = step.x;
                f = step.f;
                g = step.g;
            }
            Err(_) => {
                failures += 1;
                total_failures += 1;
                memory.reset();
                if failures >= cfg.max_line_search_failures {
                    stop = StopReason::LineSearchFailures;
                    history.push((f, validation(&x)));
                    break;
                }
            }
        }
        let v = validation(&x);
        history.push((f, v));
        let patience_hit = stopper.observe(iter, v);
        if stopper.improved_at(iter) {
            best_x.clone_from(&x);
        }
        if patience_hit {
            stop = StopReason::Patience;
            break;
        }
        if stalls >= 10 || norm(&g) == 0.0 {
            stop = StopReason::Converged;
            break;
        }
    }

    let (best_iteration, best_validation_loss) = stopper.best();
    let params = ResNetParams { values: best_x };
    let final_training_loss = data_loss(&params, arch, &tb)?;
    let model = TrainedModel {
        arch: arch.clone(),
        params,
        normalizer,
    };
    let pred = model.predict_batch(valid.inputs())?;
    let sse: f64 = pred
        .iter()
        .zip(valid.outputs())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    let validation_rmse = libm::sqrt(sse / valid.outputs().len() as f64);
    let report = TrainReport {
        iterations_run: iters,
        best_iteration,
        best_validation_loss,
        final_training_loss,
        validation_rmse,
        bias_order_violation: 0.5 * bias_order_violation(&model.params, arch),
        final_gamma_penalty: lcfg.gamma_penalty,
        line_search_failures: total_failures,
        stop_reason: stop,
        train_samples: train.len(),
        validation_samples: valid.len(),
        wallclock_seconds: None,
        loss_history: history,
    };
    Ok((model, report))
}

/// Splits `dataset` by reference and trains on the training side.
pub fn train(
    dataset: &Dataset,
    arch: &ResNetArch,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
) -> Result<(TrainedModel, TrainReport)> {
    cfg.validate()?;
    let (tr, va) = split(dataset, cfg.split_fraction, cfg.seed)?;
    #[cfg(feature = "std")]
    let start = std::time::Instant::now();
    #[allow(unused_mut)]
    let (model, mut report) = train_split(&tr, &va, arch, loss_cfg, cfg)?;
    #[cfg(feature = "std")]
    {
        report.wallclock_seconds = Some(start.elapsed().as_secs_f64());
    }
    Ok((model, report))
}

/// Outcome of one component in [`train_reduced_family`].
pub type ComponentResult = Result<(TrainedModel, TrainReport)>;

/// One network per component of a cyclic system, trained independently on
/// that component's stencil dataset. `arch_for_input` builds the
/// architecture from the stencil input width. Failures are isolated per
/// component.
pub fn train_reduced_family<A>(
    dataset: &Dataset,
    arch_for_input: A,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
) -> Result<Vec<ComponentResult>>
where
    A: Fn(usize) -> Result<ResNetArch> + Sync + Send,
{
    if !dataset.meta.system.is_cyclic() {
        return Err(Error::Unsupported(String::from(
            "per-component training needs a cyclic system",
        )));
    }
    cfg.validate()?;
    let d = dataset.meta.state_dim;
    Ok(map_indexed(d, |c| {
        let reduced = reduce_dataset(dataset, c + 1)?;
        let arch = arch_for_input(reduced.input_dim())?;
        train(&reduced, &arch, loss_cfg, cfg)
    }))
}
