use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nudgenet::config::{PipelineConfig, Recipe};
use nudgenet::error::{AppError, InModule, Result};
use nudgenet::formats::{self, ObservationSidecar, RunSidecar};
use nudgenet::hash::{sha256_hex, verify_file};
use nudgenet::pipeline::{self, Models, Thresholds};
use nudgenet::report;
use nudgenet_core::assimilate::{AssimilationRun, Method};
use nudgenet_core::dynamics::{Lorenz63Params, System};
use nudgenet_core::evaluate::{error_energy, rmse, verify_theorem, VerifyOptions};
use nudgenet_core::nudging::{delta_max, mu_min, TheoryCase};

#[derive(Parser)]
#[command(
    name = "nudgenet",
    version,
    about = "Nudging data assimilation and ResNet surrogates for Lorenz systems"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Parent directory for run directories.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training and test reference ensembles.
    Generate,
    /// Nudge the test references and write the runs.
    Nudge {
        /// Test ensemble written by `generate`; regenerated when absent.
        #[arg(long)]
        ensemble: Option<PathBuf>,
    },
    /// Build the training dataset.
    BuildDataset {
        /// Training ensemble written by `generate`; regenerated when absent.
        #[arg(long)]
        ensemble: Option<PathBuf>,
    },
    /// Train the network(s) on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Run the trained network(s) on the test references.
    Assimilate {
        /// Model file or training run directory.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        ensemble: Option<PathBuf>,
    },
    /// Score the runs in one or more run directories.
    Evaluate {
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
    },
    /// Check a convergence result numerically.
    VerifyTheory {
        #[arg(long, value_enum)]
        case: CaseArg,
        /// Nudging strength; defaults to 1.05 times the theoretical minimum.
        #[arg(long)]
        mu: Option<f64>,
        /// Window length for the discrete cases; defaults to the largest
        /// admissible value.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 100)]
        windows: usize,
        #[arg(long, default_value_t = 10)]
        refs: usize,
    },
    /// Run a benchmark recipe end to end.
    Reproduce {
        #[command(subcommand)]
        system: ReproduceTarget,
        /// Exit with status 4 when the results miss the acceptance thresholds.
        #[arg(long, global = true)]
        check: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseArg {
    ContinuousX,
    DiscreteX,
    DiscreteYz,
}

#[derive(Subcommand)]
enum ReproduceTarget {
    Lorenz63 {
        #[arg(long, value_enum, default_value = "x")]
        obs: L63Obs,
    },
    Lorenz96 {
        #[arg(long, value_parser = ["20", "13", "4"])]
        obs: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum L63Obs {
    X,
    Y,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| AppError::Config("--config <path> is required".into()))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    if let Some(n) = g.jobs {
        if n == 0 {
            return Err(AppError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| AppError::Config(format!("--jobs: {e}")))?;
    }
    match cli.command {
        Command::Generate => generate(&g),
        Command::Nudge { ensemble } => nudge(&g, ensemble.as_deref()),
        Command::BuildDataset { ensemble } => build_dataset(&g, ensemble.as_deref()),
        Command::Train { dataset } => train(&g, &dataset),
        Command::Assimilate { models, ensemble } => assimilate(&g, &models, ensemble.as_deref()),
        Command::Evaluate { runs } => evaluate(&g, &runs),
        Command::VerifyTheory {
            case,
            mu,
            delta,
            windows,
            refs,
        } => verify(&g, case, mu, delta, windows, refs),
        Command::Reproduce { system, check } => {
            let recipe = match system {
                ReproduceTarget::Lorenz63 { obs: L63Obs::X } => Recipe::Lorenz63X,
                ReproduceTarget::Lorenz63 { obs: L63Obs::Y } => Recipe::Lorenz63Y,
                ReproduceTarget::Lorenz96 { obs } => {
                    Recipe::Lorenz96(obs.parse().expect("validated by clap"))
                }
            };
            reproduce(&g, recipe, check)
        }
    }
}

fn generate(g: &Global) -> Result<()> {
    let cfg = load_config(g)?;
    let train = pipeline::training_ensemble(&cfg)?;
    let test = pipeline::test_ensemble(&cfg)?;
    let dir = pipeline::create_run_dir(&g.out, "generate", &cfg)?;
    formats::write_file(
        &dir.join("ensemble.nne"),
        &formats::ensemble_to_bytes(&train.ids, &train.trajectories),
    )?;
    formats::write_file(
        &dir.join("test_ensemble.nne"),
        &formats::ensemble_to_bytes(&test.ids, &test.trajectories),
    )?;
    eprintln!(
        "wrote {} training and {} test references",
        train.trajectories.len(),
        test.trajectories.len()
    );
    println!("{}", dir.display());
    Ok(())
}

fn load_ensemble(path: &Path) -> Result<Vec<nudgenet_core::dynamics::Trajectory>> {
    let bytes = formats::read_file(path)?;
    Ok(formats::ensemble_from_bytes(&bytes, path)?.1)
}

fn test_refs(
    cfg: &PipelineConfig,
    ensemble: Option<&Path>,
) -> Result<Vec<nudgenet_core::dynamics::Trajectory>> {
    match ensemble {
        Some(p) => load_ensemble(p),
        None => Ok(pipeline::test_ensemble(cfg)?.trajectories),
    }
}

fn nudge(g: &Global, ensemble: Option<&Path>) -> Result<()> {
    let cfg = load_config(g)?;
    let refs = test_refs(&cfg, ensemble)?;
    let obs = pipeline::observation_series(&cfg, &refs)?;
    let runs = pipeline::run_nudging(&cfg, &obs)?;
    let dir = pipeline::create_run_dir(&g.out, "nudge", &cfg)?;
    pipeline::write_runs(&dir, &cfg, &refs, &obs, &[("nudging", &runs, Vec::new())])?;
    report_failures("nudging", &runs);
    println!("{}", dir.display());
    Ok(())
}

fn report_failures(method: &str, runs: &pipeline::RunResults) {
    for (i, r) in runs.iter().enumerate() {
        if let Err(e) = r {
            eprintln!("{method} run {i} failed: {e}");
        }
    }
}

fn build_dataset(g: &Global, ensemble: Option<&Path>) -> Result<()> {
    let cfg = load_config(g)?;
    let refs = match ensemble {
        Some(p) => load_ensemble(p)?,
        None => pipeline::training_ensemble(&cfg)?.trajectories,
    };
    let ens = nudgenet_core::datagen::Ensemble {
        ids: (0..refs.len()).collect(),
        trajectories: refs,
        failures: Vec::new(),
    };
    let ds = pipeline::dataset(&cfg, &ens)?;
    let dir = pipeline::create_run_dir(&g.out, "build-dataset", &cfg)?;
    let bytes = formats::dataset_to_bytes(&ds);
    formats::write_file(&dir.join("dataset.bin"), &bytes)?;
    eprintln!(
        "{} samples, {} dropped windows",
        ds.len(),
        ds.meta.dropped.len()
    );
    println!("{}", dir.display());
    Ok(())
}

fn train(g: &Global, dataset: &Path) -> Result<()> {
    let cfg = load_config(g)?;
    let bytes = formats::read_file(dataset)?;
    let ds = formats::dataset_from_bytes(&bytes, dataset)?;
    let trained = pipeline::train_models(&cfg, &ds)?;
    let dir = pipeline::create_run_dir(&g.out, "train", &cfg)?;
    pipeline::write_models(&dir, &cfg, &trained, &sha256_hex(&bytes))?;
    for (i, r) in trained.reports.iter().enumerate() {
        eprintln!(
            "network {}: {} iterations ({:?}), validation RMSE {:.4}",
            i + 1,
            r.iterations_run,
            r.stop_reason,
            r.validation_rmse
        );
    }
    println!("{}", dir.display());
    Ok(())
}

fn assimilate(g: &Global, models: &Path, ensemble: Option<&Path>) -> Result<()> {
    let cfg = load_config(g)?;
    let (models, hashes) = pipeline::load_models(models)?;
    if cfg.dataset.reduced != matches!(models, Models::Reduced(_)) {
        return Err(AppError::Config(
            "dataset.reduced does not match the kind of model supplied".into(),
        ));
    }
    let refs = test_refs(&cfg, ensemble)?;
    let obs = pipeline::observation_series(&cfg, &refs)?;
    let runs = pipeline::run_dnn(&cfg, &models, &obs, &hashes.join(","))?;
    let method = match models {
        Models::Full(_) => Method::DnnFull,
        Models::Reduced(_) => Method::DnnReduced,
    };
    let dir = pipeline::create_run_dir(&g.out, "assimilate", &cfg)?;
    pipeline::write_runs(&dir, &cfg, &refs, &obs, &[(method.name(), &runs, hashes)])?;
    report_failures(method.name(), &runs);
    println!("{}", dir.display());
    Ok(())
}

fn method_from_name(name: &str, path: &Path) -> Result<Method> {
    [Method::Nudging, Method::DnnFull, Method::DnnReduced]
        .into_iter()
        .find(|m| m.name() == name)
        .ok_or_else(|| AppError::Format {
            path: path.into(),
            reason: format!("unknown method {name:?}"),
        })
}

// method, runs, refs, labels
type Group = (
    Method,
    Vec<AssimilationRun>,
    Vec<nudgenet_core::dynamics::Trajectory>,
    Vec<String>,
);

fn evaluate(g: &Global, run_dirs: &[PathBuf]) -> Result<()> {
    let cfg = load_config(g)?;
    let opts = cfg.rmse_options()?;
    let mut groups: Vec<Group> = Vec::new();
    for root in run_dirs {
        let runs_dir = root.join("runs");
        let mut sidecars: Vec<PathBuf> = std::fs::read_dir(&runs_dir)
            .map_err(|e| AppError::Io {
                path: runs_dir.clone(),
                source: e,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        sidecars.sort();
        for side_path in sidecars {
            let side: RunSidecar = formats::read_json(&side_path)?;
            let obs_path = root.join(&side.observations_file);
            let ref_path = root.join(&side.reference_file);
            verify_file(&obs_path, &side.observations_hash)?;
            verify_file(&ref_path, &side.reference_hash)?;
            let obs_side: ObservationSidecar =
                formats::read_json(&obs_path.with_extension("json"))?;
            if let Some(h) = &obs_side.reference_hash {
                if *h != side.reference_hash {
                    return Err(AppError::HashMismatch {
                        path: obs_path,
                        expected: side.reference_hash.clone(),
                        actual: h.clone(),
                    });
                }
            }
            let states = formats::read_run_csv(&side_path.with_extension("csv"))?;
            let reference = formats::read_trajectory_csv(&ref_path)?;
            let method = method_from_name(&side.method, &side_path)?;
            let label = side_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let run = AssimilationRun {
                method,
                provenance: side.provenance,
                states,
            };
            match groups.iter_mut().find(|g| g.0 == method) {
                Some(gr) => {
                    gr.1.push(run);
                    gr.2.push(reference);
                    gr.3.push(label);
                }
                None => groups.push((method, vec![run], vec![reference], vec![label])),
            }
        }
    }
    if groups.is_empty() {
        return Err(AppError::Config("no runs found".into()));
    }
    let dir = pipeline::create_run_dir(&g.out, "evaluate", &cfg)?;
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for (method, runs, refs, labels) in &groups {
        let rep = rmse(runs, refs, &opts).in_module("evaluate")?;
        for ((run, reference), label) in runs.iter().zip(refs).zip(labels) {
            let energy = error_energy(&run.states, reference).in_module("evaluate")?;
            formats::write_series_csv(
                &dir.join(format!("energy/{label}.csv")),
                "energy",
                run.states.times(),
                &energy,
            )?;
        }
        rows.push(vec![
            method.name().to_string(),
            rep.n_runs.to_string(),
            format!("{:.4}", rep.rmse),
        ]);
        reports.push(rep);
    }
    formats::write_json(&dir.join("report.json"), &reports)?;
    let text = report::table(&["method", "runs", "rmse"], &rows);
    formats::write_file(&dir.join("report.txt"), text.as_bytes())?;
    print!("{text}");
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn verify(
    g: &Global,
    case: CaseArg,
    mu: Option<f64>,
    delta: Option<f64>,
    windows: usize,
    refs: usize,
) -> Result<()> {
    let case = match case {
        CaseArg::ContinuousX => TheoryCase::ContinuousX,
        CaseArg::DiscreteX => TheoryCase::DiscreteX,
        CaseArg::DiscreteYz => TheoryCase::DiscreteYz,
    };
    let (params, integrator, seed) = match &g.config {
        Some(_) => {
            let cfg = load_config(g)?;
            let System::Lorenz63(p) = cfg.system else {
                return Err(AppError::Config(
                    "verify-theory needs a lorenz63 system".into(),
                ));
            };
            (p, cfg.integrator, cfg.seed)
        }
        None => (
            Lorenz63Params::default(),
            VerifyOptions::default().integrator,
            g.seed.unwrap_or(0),
        ),
    };
    let mu = match mu {
        Some(m) => m,
        None => 1.05 * mu_min(&params, case).in_module("nudging")?,
    };
    let delta = match (delta, case.is_discrete()) {
        (Some(d), _) => d,
        (None, true) => delta_max(&params, case, mu).in_module("nudging")?,
        (None, false) => 0.0,
    };
    let opts = VerifyOptions {
        n_refs: refs,
        seed,
        integrator,
        ..VerifyOptions::default()
    };
    let rep = verify_theorem(case, &params, mu, delta, windows, &opts).in_module("evaluate")?;
    let text = format!(
        "{}\n{:?}: {}\n",
        report::theorem_table(&rep),
        case,
        if rep.passed { "PASS" } else { "FAIL" }
    );
    print!("{text}");
    if !rep.passed {
        return Err(AppError::Regression(format!("{case:?} check failed")));
    }
    Ok(())
}

fn reproduce(g: &Global, recipe: Recipe, check: bool) -> Result<()> {
    let mut cfg = match &g.config {
        Some(path) => PipelineConfig::load(path)?,
        None => recipe.config()?,
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let dir = pipeline::create_run_dir(&g.out, &format!("reproduce-{}", recipe.name()), &cfg)?;
    let art = pipeline::run_recipe(&cfg, recipe, Some(&dir))?;
    let o = &art.outcome;
    print!("{}", report::recipe_table(&[o]));
    eprintln!("wrote {}", dir.display());
    if check {
        let failed: Vec<String> = Thresholds::for_recipe(recipe)
            .check(o)
            .into_iter()
            .filter(|(_, ok)| !ok)
            .map(|(name, _)| name)
            .collect();
        if !failed.is_empty() {
            return Err(AppError::Regression(failed.join("; ")));
        }
    }
    Ok(())
}
