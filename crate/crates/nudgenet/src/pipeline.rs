//! Pipeline stages shared by the CLI and the integration tests.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use nudgenet_core::assimilate::{
    assimilate_dnn_all, assimilate_nudging_all, AssimilationRun, FullMap, ReducedMap,
};
use nudgenet_core::datagen::{build_dataset, generate_ensemble, Dataset, Ensemble};
use nudgenet_core::dynamics::Trajectory;
use nudgenet_core::evaluate::{rmse, RmseReport};
use nudgenet_core::nudging::ObservationSeries;
use nudgenet_core::resnet::BOX_INIT_NOTE;
use nudgenet_core::trainer::{train, train_reduced_family, TrainReport, TrainedModel};

use crate::config::{PipelineConfig, Recipe};
use crate::error::{AppError, InModule, Result};
use crate::formats::{self, ModelHeader, ObservationSidecar, RunSidecar};
use crate::hash::{file_sha256, sha256_hex};

/// Creates `<out>/<command>-<UTC timestamp>-<config hash prefix>`, adding a
/// numeric suffix if that directory already exists, and writes the resolved
/// config into it.
pub fn create_run_dir(out: &Path, command: &str, cfg: &PipelineConfig) -> Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("{command}-{stamp}-{}", &cfg.hash()[..12]);
    let mut dir = out.join(&base);
    let mut n = 1;
    while dir.exists() {
        dir = out.join(format!("{base}-{n}"));
        n += 1;
    }
    std::fs::create_dir_all(&dir).map_err(|e| AppError::io(&dir, e))?;
    formats::write_file(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    Ok(dir)
}

fn checked_ensemble(ens: Ensemble, what: &str) -> Result<Ensemble> {
    if let Some((i, e)) = ens.failures.first() {
        return Err(AppError::Numerical {
            module: "datagen",
            source: nudgenet_core::Error::InvalidInput(format!(
                "{what} member {i} failed ({} failures in total): {e}",
                ens.failures.len()
            )),
        });
    }
    Ok(ens)
}

pub fn training_ensemble(cfg: &PipelineConfig) -> Result<Ensemble> {
    let ens = generate_ensemble(&cfg.ensemble_spec(), &cfg.system, &cfg.integrator)
        .in_module("datagen")?;
    checked_ensemble(ens, "training ensemble")
}

pub fn test_ensemble(cfg: &PipelineConfig) -> Result<Ensemble> {
    let ens =
        generate_ensemble(&cfg.test_spec(), &cfg.system, &cfg.integrator).in_module("datagen")?;
    checked_ensemble(ens, "test ensemble")
}

pub fn dataset(cfg: &PipelineConfig, ensemble: &Ensemble) -> Result<Dataset> {
    let nudge = cfg.nudging_config()?;
    let mut ds = build_dataset(
        &cfg.system,
        &ensemble.trajectories,
        &nudge,
        cfg.dataset.windows,
        &cfg.integrator,
    )
    .in_module("datagen")?;
    ds.meta.seed = Some(cfg.seed);
    ds.meta.provenance = format!("config sha256 {}", cfg.hash());
    Ok(ds)
}

/// Trained networks: one full-state model or one model per component.
#[derive(Debug, Clone)]
pub enum Models {
    Full(TrainedModel),
    Reduced(Vec<TrainedModel>),
}

impl Models {
    pub fn all(&self) -> Vec<&TrainedModel> {
        match self {
            Models::Full(m) => vec![m],
            Models::Reduced(ms) => ms.iter().collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub models: Models,
    /// One report per network, in component order.
    pub reports: Vec<TrainReport>,
}

pub fn train_models(cfg: &PipelineConfig, ds: &Dataset) -> Result<Trained> {
    let tc = cfg.train_config();
    if cfg.dataset.reduced {
        let results = train_reduced_family(
            ds,
            |width| cfg.arch(width, 1).map_err(into_core),
            &cfg.loss,
            &tc,
        )
        .in_module("trainer")?;
        let mut models = Vec::new();
        let mut reports = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            let (m, rep) = r.map_err(|source| AppError::Numerical {
                module: "trainer",
                source: nudgenet_core::Error::InvalidInput(format!(
                    "component {}: {source}",
                    i + 1
                )),
            })?;
            models.push(m);
            reports.push(rep);
        }
        Ok(Trained {
            models: Models::Reduced(models),
            reports,
        })
    } else {
        let arch = cfg.arch(ds.input_dim(), ds.output_dim())?;
        let (m, rep) = train(ds, &arch, &cfg.loss, &tc).in_module("trainer")?;
        Ok(Trained {
            models: Models::Full(m),
            reports: vec![rep],
        })
    }
}

fn into_core(e: AppError) -> nudgenet_core::Error {
    nudgenet_core::Error::InvalidInput(e.to_string())
}

fn training_header(cfg: &PipelineConfig) -> serde_json::Value {
    serde_json::json!({
        "loss": cfg.loss,
        "training": cfg.training,
        "seed": cfg.seed,
        "config_sha256": cfg.hash(),
    })
}

fn model_file_name(component: Option<usize>) -> String {
    match component {
        Some(c) => format!("models/component_{c:03}.nnm"),
        None => "model.nnm".into(),
    }
}

/// Writes every model plus the training reports; returns the model paths
/// and their hashes.
pub fn write_models(
    dir: &Path,
    cfg: &PipelineConfig,
    trained: &Trained,
    dataset_hash: &str,
) -> Result<Vec<(PathBuf, String)>> {
    let mut out = Vec::new();
    let reduced = matches!(trained.models, Models::Reduced(_));
    for (i, m) in trained.models.all().into_iter().enumerate() {
        let component = reduced.then_some(i + 1);
        let header = ModelHeader {
            arch: m.arch.clone(),
            normalizer: m.normalizer.clone(),
            component,
            dataset_hash: dataset_hash.into(),
            init: BOX_INIT_NOTE.into(),
            training: training_header(cfg),
            param_count: m.params.values.len(),
        };
        let bytes = formats::model_to_bytes(m, &header);
        let path = dir.join(model_file_name(component));
        formats::write_file(&path, &bytes)?;
        out.push((path, sha256_hex(&bytes)));
    }
    formats::write_json(&dir.join("train_report.json"), &trained.reports)?;
    for (i, rep) in trained.reports.iter().enumerate() {
        let name = if reduced {
            format!("loss_history/component_{:03}.csv", i + 1)
        } else {
            "loss_history.csv".into()
        };
        let rows: Vec<Vec<f64>> = rep
            .loss_history
            .iter()
            .enumerate()
            .map(|(k, (f, v))| vec![k as f64, *f, *v])
            .collect();
        formats::write_table_csv(
            &dir.join(name),
            &["iteration", "objective", "validation_loss"],
            &rows,
        )?;
    }
    Ok(out)
}

/// Loads `model.nnm`, or `models/component_*.nnm` in component order, from
/// `dir`; a file path is loaded as a single full model.
pub fn load_models(path: &Path) -> Result<(Models, Vec<String>)> {
    if path.is_file() {
        let bytes = formats::read_file(path)?;
        let (m, _) = formats::model_from_bytes(&bytes, path)?;
        return Ok((Models::Full(m), vec![sha256_hex(&bytes)]));
    }
    let single = path.join("model.nnm");
    if single.is_file() {
        return load_models(&single);
    }
    let dir = path.join("models");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| AppError::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "nnm"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(AppError::format(path, "no model files found"));
    }
    let mut models = Vec::new();
    let mut hashes = Vec::new();
    for (i, f) in files.iter().enumerate() {
        let bytes = formats::read_file(f)?;
        let (m, h) = formats::model_from_bytes(&bytes, f)?;
        if h.component != Some(i + 1) {
            return Err(AppError::format(f, format!("expected component {}", i + 1)));
        }
        models.push(m);
        hashes.push(sha256_hex(&bytes));
    }
    Ok((Models::Reduced(models), hashes))
}

pub fn observation_series(
    cfg: &PipelineConfig,
    refs: &[Trajectory],
) -> Result<Vec<ObservationSeries>> {
    let op = cfg.operator()?;
    refs.iter()
        .map(|r| ObservationSeries::from_trajectory(r, op.clone()).in_module("nudging"))
        .collect()
}

/// Runs in input order; a failed run is reported with its index.
pub type RunResults = Vec<std::result::Result<AssimilationRun, String>>;

fn collect_runs(results: Vec<nudgenet_core::Result<AssimilationRun>>) -> RunResults {
    results
        .into_iter()
        .map(|r| r.map_err(|e| e.to_string()))
        .collect()
}

pub fn run_nudging(cfg: &PipelineConfig, obs: &[ObservationSeries]) -> Result<RunResults> {
    let nudge = cfg.nudging_config()?;
    Ok(collect_runs(assimilate_nudging_all(
        obs,
        &cfg.system,
        &nudge,
        &cfg.integrator,
    )))
}

pub fn run_dnn(
    cfg: &PipelineConfig,
    models: &Models,
    obs: &[ObservationSeries],
    provenance: &str,
) -> Result<RunResults> {
    let d = cfg.state_dim();
    let w0 = vec![0.0; d];
    let results = match models {
        Models::Full(m) => {
            let map = FullMap::new(m, d).in_module("assimilate")?;
            assimilate_dnn_all(&map, obs, &w0, provenance)
        }
        Models::Reduced(ms) => {
            let map = ReducedMap::new(ms, &cfg.operator()?).in_module("assimilate")?;
            assimilate_dnn_all(&map, obs, &w0, provenance)
        }
    };
    Ok(collect_runs(results))
}

/// Scores the successful runs against their references.
pub fn score(
    cfg: &PipelineConfig,
    runs: &RunResults,
    refs: &[Trajectory],
) -> Result<(Option<RmseReport>, Vec<usize>)> {
    let mut ok_runs = Vec::new();
    let mut ok_refs = Vec::new();
    let mut failed = Vec::new();
    for (i, (r, u)) in runs.iter().zip(refs).enumerate() {
        match r {
            Ok(run) => {
                ok_runs.push(run.clone());
                ok_refs.push(u.clone());
            }
            Err(_) => failed.push(i),
        }
    }
    if ok_runs.is_empty() {
        return Ok((None, failed));
    }
    let report = rmse(&ok_runs, &ok_refs, &cfg.rmse_options()?).in_module("evaluate")?;
    Ok((Some(report), failed))
}

/// Summary of one scored method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodScore {
    pub method: String,
    pub rmse: Option<f64>,
    pub n_runs: usize,
    pub failed_runs: Vec<usize>,
    pub first_failure: Option<String>,
}

fn method_score(
    method: &str,
    report: &Option<RmseReport>,
    runs: &RunResults,
    failed: Vec<usize>,
) -> MethodScore {
    MethodScore {
        method: method.into(),
        rmse: report.as_ref().map(|r| r.rmse),
        n_runs: runs.len(),
        first_failure: failed
            .first()
            .and_then(|&i| runs[i].as_ref().err().cloned()),
        failed_runs: failed,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub networks: usize,
    pub iterations: Vec<usize>,
    pub validation_rmse: Vec<f64>,
    pub bias_order_violation: Vec<f64>,
    pub seconds: f64,
}

/// Outcome of an end-to-end recipe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecipeOutcome {
    pub recipe: String,
    pub config_sha256: String,
    pub dataset_samples: usize,
    pub dataset_sha256: String,
    pub nudging: MethodScore,
    pub dnn: MethodScore,
    /// DNN RMSE over nudging RMSE.
    pub ratio: Option<f64>,
    pub benchmark_nudging: f64,
    pub benchmark_dnn: f64,
    pub reduction: String,
    pub training: TrainingSummary,
    pub seconds: f64,
}

/// Everything produced by [`run_recipe`], for callers that inspect the
/// intermediate artifacts.
pub struct RecipeArtifacts {
    pub dataset: Dataset,
    pub trained: Trained,
    pub test_refs: Vec<Trajectory>,
    pub nudging_runs: RunResults,
    pub dnn_runs: RunResults,
    pub outcome: RecipeOutcome,
}

/// Generates data, trains, assimilates the test ensemble with nudging and
/// with the networks, and scores both. Artifacts go to `dir` when given.
pub fn run_recipe(
    cfg: &PipelineConfig,
    recipe: Recipe,
    dir: Option<&Path>,
) -> Result<RecipeArtifacts> {
    let start = Instant::now();
    let log = |msg: String| {
        eprintln!(
            "[{}] {msg} ({:.1}s)",
            recipe.name(),
            start.elapsed().as_secs_f64()
        )
    };
    let ens = training_ensemble(cfg)?;
    log(format!(
        "generated {} training references",
        ens.trajectories.len()
    ));
    let ds = dataset(cfg, &ens)?;
    drop(ens);
    let ds_bytes = formats::dataset_to_bytes(&ds);
    let ds_hash = sha256_hex(&ds_bytes);
    log(format!("built {} samples", ds.len()));
    if let Some(dir) = dir {
        formats::write_file(&dir.join("dataset.bin"), &ds_bytes)?;
    }
    let t_train = Instant::now();
    let trained = train_models(cfg, &ds)?;
    let train_secs = t_train.elapsed().as_secs_f64();
    log(format!("trained {} network(s)", trained.reports.len()));
    let mut model_hashes = Vec::new();
    if let Some(dir) = dir {
        model_hashes = write_models(dir, cfg, &trained, &ds_hash)?
            .into_iter()
            .map(|p| p.1)
            .collect();
    }
    let test = test_ensemble(cfg)?;
    let obs = observation_series(cfg, &test.trajectories)?;
    let nudging_runs = run_nudging(cfg, &obs)?;
    let dnn_runs = run_dnn(cfg, &trained.models, &obs, &model_hashes.join(","))?;
    log("assimilated test references".into());
    let (nud_rep, nud_failed) = score(cfg, &nudging_runs, &test.trajectories)?;
    let (dnn_rep, dnn_failed) = score(cfg, &dnn_runs, &test.trajectories)?;
    let nudging = method_score("nudging", &nud_rep, &nudging_runs, nud_failed);
    let dnn_method = match trained.models {
        Models::Full(_) => "dnn_full",
        Models::Reduced(_) => "dnn_reduced",
    };
    let dnn = method_score(dnn_method, &dnn_rep, &dnn_runs, dnn_failed);
    let (benchmark_nudging, benchmark_dnn) = recipe.benchmark();
    let outcome = RecipeOutcome {
        recipe: recipe.name(),
        config_sha256: cfg.hash(),
        dataset_samples: ds.len(),
        dataset_sha256: ds_hash,
        ratio: nudging.rmse.zip(dnn.rmse).map(|(n, d)| d / n),
        nudging,
        dnn,
        benchmark_nudging,
        benchmark_dnn,
        reduction: format!("{:?}", cfg.evaluation.reduction).to_lowercase(),
        training: TrainingSummary {
            networks: trained.reports.len(),
            iterations: trained.reports.iter().map(|r| r.iterations_run).collect(),
            validation_rmse: trained.reports.iter().map(|r| r.validation_rmse).collect(),
            bias_order_violation: trained
                .reports
                .iter()
                .map(|r| r.bias_order_violation)
                .collect(),
            seconds: train_secs,
        },
        seconds: start.elapsed().as_secs_f64(),
    };
    if let Some(dir) = dir {
        formats::write_json(&dir.join("report.json"), &outcome)?;
        formats::write_file(
            &dir.join("report.txt"),
            crate::report::recipe_table(&[&outcome]).as_bytes(),
        )?;
    }
    log(format!(
        "nudging {:?}, dnn {:?}",
        outcome.nudging.rmse, outcome.dnn.rmse
    ));
    Ok(RecipeArtifacts {
        dataset: ds,
        trained,
        test_refs: test.trajectories,
        nudging_runs,
        dnn_runs,
        outcome,
    })
}

/// Acceptance thresholds for a recipe.
#[derive(Debug, Clone, Copy)]
pub struct Thresholds {
    /// Allowed relative deviation of the nudging RMSE from its benchmark.
    pub nudging_tolerance: f64,
    /// Largest allowed DNN / nudging RMSE ratio.
    pub max_ratio: f64,
}

impl Thresholds {
    pub fn for_recipe(recipe: Recipe) -> Self {
        match recipe {
            Recipe::Lorenz63X | Recipe::Lorenz63Y => Thresholds {
                nudging_tolerance: 0.25,
                max_ratio: 1.25,
            },
            Recipe::Lorenz96(_) => Thresholds {
                nudging_tolerance: 0.30,
                max_ratio: 1.8,
            },
        }
    }

    /// Named checks with their outcome.
    pub fn check(&self, o: &RecipeOutcome) -> Vec<(String, bool)> {
        let nud_ok = o.nudging.rmse.is_some_and(|r| {
            (r - o.benchmark_nudging).abs() <= self.nudging_tolerance * o.benchmark_nudging
        });
        vec![
            (
                format!(
                    "nudging RMSE {} within {:.0}% of {}",
                    fmt_opt(o.nudging.rmse),
                    self.nudging_tolerance * 100.0,
                    o.benchmark_nudging
                ),
                nud_ok && o.nudging.failed_runs.is_empty(),
            ),
            (
                format!(
                    "DNN/nudging ratio {} <= {}",
                    fmt_opt(o.ratio),
                    self.max_ratio
                ),
                o.ratio.is_some_and(|r| r <= self.max_ratio) && o.dnn.failed_runs.is_empty(),
            ),
        ]
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

/// Writes references, observations and runs for later `evaluate`.
pub fn write_runs(
    dir: &Path,
    cfg: &PipelineConfig,
    refs: &[Trajectory],
    obs: &[ObservationSeries],
    runs: &[(&str, &RunResults, Vec<String>)],
) -> Result<()> {
    let cfg_hash = cfg.hash();
    for (i, (r, o)) in refs.iter().zip(obs).enumerate() {
        let ref_file = format!("references/ref_{i:04}.csv");
        formats::write_trajectory_csv(&dir.join(&ref_file), r)?;
        let ref_hash = file_sha256(&dir.join(&ref_file))?;
        let obs_file = format!("observations/obs_{i:04}.csv");
        formats::write_observations_csv(&dir.join(&obs_file), o)?;
        let obs_hash = file_sha256(&dir.join(&obs_file))?;
        formats::write_json(
            &dir.join(format!("observations/obs_{i:04}.json")),
            &ObservationSidecar {
                observed_indices: o.operator().observed_indices().to_vec(),
                state_dim: o.operator().state_dim(),
                delta: cfg.nudging.delta,
                mu: Some(cfg.nudging.mu),
                seed: Some(cfg.seed),
                reference_hash: Some(ref_hash.clone()),
            },
        )?;
        for (method, results, model_hashes) in runs {
            let Some(Ok(run)) = results.get(i) else {
                continue;
            };
            let stem = format!("runs/{method}_{i:04}");
            formats::write_run_csv(&dir.join(format!("{stem}.csv")), &run.states)?;
            formats::write_json(
                &dir.join(format!("{stem}.json")),
                &RunSidecar {
                    method: run.method.name().into(),
                    provenance: run.provenance.clone(),
                    model_hashes: model_hashes.clone(),
                    observations_file: obs_file.clone(),
                    observations_hash: obs_hash.clone(),
                    reference_file: ref_file.clone(),
                    reference_hash: ref_hash.clone(),
                    config_hash: cfg_hash.clone(),
                },
            )?;
        }
    }
    Ok(())
}
