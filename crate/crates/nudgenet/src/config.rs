//! Pipeline configuration. The file is TOML; every section and field is
//! optional and falls back to the defaults below. See `docs/config.md`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use nudgenet_core::datagen::EnsembleSpec;
use nudgenet_core::dynamics::{IntegratorConfig, Lorenz63Params, Lorenz96Params, System};
use nudgenet_core::evaluate::{ComponentReduction, RmseOptions};
use nudgenet_core::nudging::{Innovation, NudgingConfig, ObservationOperator};
use nudgenet_core::resnet::{InitScheme, LossConfig, ResNetArch};
use nudgenet_core::rng::domain;
use nudgenet_core::trainer::TrainConfig;

use crate::error::{AppError, InModule, Result};
use crate::hash::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root of every random stream in the pipeline.
    pub seed: u64,
    pub system: System,
    pub integrator: IntegratorConfig,
    pub ensemble: EnsembleSection,
    pub observations: ObservationSection,
    pub nudging: NudgingSection,
    pub dataset: DatasetSection,
    pub arch: ArchSection,
    pub loss: LossConfig,
    pub training: TrainingSection,
    pub evaluation: EvaluationSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            system: System::Lorenz63(Lorenz63Params::default()),
            integrator: IntegratorConfig::default(),
            ensemble: EnsembleSection::default(),
            observations: ObservationSection::default(),
            nudging: NudgingSection::default(),
            dataset: DatasetSection::default(),
            arch: ArchSection::default(),
            loss: LossConfig::default(),
            training: TrainingSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

/// Reference trajectories used for training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_refs: usize,
    pub init_mean: f64,
    pub init_std: f64,
    pub spin_up: f64,
    /// Recorded length after spin-up; samples are `nudging.delta` apart.
    pub horizon: f64,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection {
            n_refs: 1000,
            init_mean: 0.0,
            init_std: 10.0,
            spin_up: 100.0,
            horizon: 10.0,
        }
    }
}

/// Observed components, either listed or as an arithmetic pattern. Only an
/// absent section defaults to observing component 1; a present section must
/// say which form it uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSection {
    /// 1-based observed components.
    #[serde(default)]
    pub indices: Option<Vec<usize>>,
    /// `first, first + every, ...` up to the state dimension.
    #[serde(default)]
    pub every: Option<usize>,
    #[serde(default)]
    pub first: Option<usize>,
}

impl Default for ObservationSection {
    fn default() -> Self {
        ObservationSection {
            indices: Some(vec![1]),
            every: None,
            first: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NudgingSection {
    pub mu: f64,
    pub delta: f64,
    pub innovation: Innovation,
}

impl Default for NudgingSection {
    fn default() -> Self {
        NudgingSection {
            mu: 30.0,
            delta: 0.1,
            innovation: Innovation::HeldObservation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Windows per reference turned into samples.
    pub windows: usize,
    /// Train one network per component on stencil inputs (cyclic systems).
    pub reduced: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            windows: 15,
            reduced: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSection {
    pub hidden_layers: usize,
    pub width: usize,
    pub tau: f64,
    pub eps: f64,
    pub init: InitScheme,
}

impl Default for ArchSection {
    fn default() -> Self {
        ArchSection {
            hidden_layers: 3,
            width: 50,
            tau: 1.0,
            eps: 0.01,
            init: InitScheme::Box,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub split_fraction: f64,
    pub patience: usize,
    pub max_iters: usize,
    pub lbfgs_memory: usize,
    pub continuation_interval: usize,
    pub continuation_factor: f64,
    pub max_line_search_failures: usize,
    pub ftol: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingSection {
            split_fraction: t.split_fraction,
            patience: t.patience,
            max_iters: t.max_iters,
            lbfgs_memory: t.lbfgs_memory,
            continuation_interval: t.continuation_interval,
            continuation_factor: t.continuation_factor,
            max_line_search_failures: t.max_line_search_failures,
            ftol: t.ftol,
        }
    }
}

/// Test references and scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub n_refs: usize,
    pub init_mean: f64,
    pub init_std: f64,
    pub spin_up: f64,
    pub horizon: f64,
    pub k0_time: f64,
    pub reduction: ComponentReduction,
    pub observed_only: bool,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            n_refs: 100,
            init_mean: 0.0,
            init_std: 50.0,
            spin_up: 100.0,
            horizon: 10.0,
            k0_time: 5.0,
            reduction: ComponentReduction::Mean,
            observed_only: false,
        }
    }
}

/// Named end-to-end recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipe {
    /// Lorenz 63 with x observed, μ = 30.
    Lorenz63X,
    /// Lorenz 63 with y observed, μ = 10.
    Lorenz63Y,
    /// Lorenz 96 with the given number of observed components (20, 13 or 4).
    Lorenz96(usize),
}

impl Recipe {
    pub fn name(&self) -> String {
        match self {
            Recipe::Lorenz63X => "lorenz63-x".into(),
            Recipe::Lorenz63Y => "lorenz63-y".into(),
            Recipe::Lorenz96(n) => format!("lorenz96-{n}obs"),
        }
    }

    /// Benchmark RMSE values `(nudging, dnn)` this recipe is compared against.
    pub fn benchmark(&self) -> (f64, f64) {
        match self {
            Recipe::Lorenz63X => (6.0782, 6.4456),
            Recipe::Lorenz63Y => (5.7953, 5.8000),
            Recipe::Lorenz96(20) => (11.9754, 17.6243),
            Recipe::Lorenz96(13) => (25.1511, 39.2055),
            Recipe::Lorenz96(_) => (36.4937, 39.7268),
        }
    }

    pub fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        cfg.evaluation.reduction = ComponentReduction::Sum;
        cfg.training.max_iters = 2000;
        match *self {
            Recipe::Lorenz63X => {}
            Recipe::Lorenz63Y => {
                cfg.observations.indices = Some(vec![2]);
                cfg.nudging.mu = 10.0;
            }
            Recipe::Lorenz96(n) => {
                cfg.system = System::Lorenz96(Lorenz96Params::default());
                cfg.nudging.mu = 10.0;
                cfg.dataset.reduced = true;
                cfg.ensemble.horizon = 1.5;
                // 40 networks per recipe; keeps one recipe near 20 minutes
                // on a single core.
                cfg.training.max_iters = 300;
                cfg.evaluation.horizon = 20.0;
                cfg.observations = match n {
                    20 => ObservationSection::every(2, 2),
                    13 => ObservationSection::every(3, 3),
                    4 => ObservationSection::every(10, 10),
                    _ => {
                        return Err(AppError::Config(format!(
                            "no Lorenz 96 recipe for {n} observations"
                        )))
                    }
                };
                if n == 4 {
                    cfg.arch.hidden_layers = 15;
                    cfg.arch.width = 10;
                }
            }
        }
        Ok(cfg)
    }
}

impl ObservationSection {
    pub fn every(first: usize, every: usize) -> Self {
        ObservationSection {
            indices: None,
            every: Some(every),
            first: Some(first),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            AppError::Config(m) => AppError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// The fully resolved config, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the resolved TOML.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate().in_module("dynamics")?;
        self.integrator.validate().in_module("dynamics")?;
        self.ensemble_spec().validate().in_module("datagen")?;
        self.test_spec().validate().in_module("datagen")?;
        self.nudging_config()?.validate().in_module("nudging")?;
        self.loss.validate().in_module("trainer")?;
        self.train_config().validate().in_module("trainer")?;
        if self.dataset.windows == 0 {
            return Err(AppError::Config("dataset.windows must be positive".into()));
        }
        let needed = self.dataset.windows as f64 * self.nudging.delta;
        if self.ensemble.horizon < needed * (1.0 - 1e-12) {
            return Err(AppError::Config(format!(
                "ensemble.horizon {} is shorter than {} windows of {}",
                self.ensemble.horizon, self.dataset.windows, self.nudging.delta
            )));
        }
        if self.dataset.reduced && !self.system.is_cyclic() {
            return Err(AppError::Config(
                "dataset.reduced needs a cyclic system".into(),
            ));
        }
        if self.arch.hidden_layers == 0 || self.arch.width == 0 {
            return Err(AppError::Config(
                "arch needs at least one hidden layer of positive width".into(),
            ));
        }
        let ev = &self.evaluation;
        if !(ev.k0_time >= 0.0 && ev.k0_time <= ev.horizon) {
            return Err(AppError::Config(
                "evaluation.k0_time must lie in [0, horizon]".into(),
            ));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        use nudgenet_core::dynamics::VectorField;
        self.system.dim()
    }

    pub fn operator(&self) -> Result<ObservationOperator> {
        let d = self.state_dim();
        let o = &self.observations;
        match (&o.indices, o.every) {
            (Some(idx), None) if o.first.is_none() => {
                ObservationOperator::new(idx.clone(), d).in_module("nudging")
            }
            (None, Some(step)) => {
                ObservationOperator::every(d, o.first.unwrap_or(1), step).in_module("nudging")
            }
            _ => Err(AppError::Config(
                "observations: give either `indices` or `every` (with optional `first`)".into(),
            )),
        }
    }

    pub fn nudging_config(&self) -> Result<NudgingConfig> {
        Ok(
            NudgingConfig::new(self.nudging.mu, self.nudging.delta, self.operator()?)
                .with_innovation(self.nudging.innovation),
        )
    }

    pub fn ensemble_spec(&self) -> EnsembleSpec {
        let e = &self.ensemble;
        EnsembleSpec {
            n_refs: e.n_refs,
            init_mean: e.init_mean,
            init_std: e.init_std,
            seed: self.seed,
            spin_up: e.spin_up,
            horizon: e.horizon,
            sample_interval: self.nudging.delta,
            stream_domain: domain::ENSEMBLE,
        }
    }

    pub fn test_spec(&self) -> EnsembleSpec {
        let e = &self.evaluation;
        EnsembleSpec {
            n_refs: e.n_refs,
            init_mean: e.init_mean,
            init_std: e.init_std,
            seed: self.seed,
            spin_up: e.spin_up,
            horizon: e.horizon,
            sample_interval: self.nudging.delta,
            stream_domain: domain::TEST_ENSEMBLE,
        }
    }

    pub fn arch(&self, input: usize, output: usize) -> Result<ResNetArch> {
        let a = &self.arch;
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(a.width, a.hidden_layers));
        widths.push(output);
        ResNetArch::new(widths, a.tau, a.eps).in_module("resnet")
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            split_fraction: t.split_fraction,
            patience: t.patience,
            max_iters: t.max_iters,
            lbfgs_memory: t.lbfgs_memory,
            seed: self.seed,
            continuation_interval: t.continuation_interval,
            continuation_factor: t.continuation_factor,
            init: self.arch.init,
            max_line_search_failures: t.max_line_search_failures,
            ftol: t.ftol,
            ..TrainConfig::default()
        }
    }

    pub fn rmse_options(&self) -> Result<RmseOptions> {
        let e = &self.evaluation;
        let opts = RmseOptions {
            k0_time: e.k0_time,
            horizon: e.horizon,
            reduction: e.reduction,
            components: None,
        };
        Ok(if e.observed_only {
            opts.observed_only(&self.operator()?)
        } else {
            opts
        })
    }
}
