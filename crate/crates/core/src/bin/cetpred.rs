use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cetpred::config::PipelineConfig;
use cetpred::error::{CetError, Result};
use cetpred::learners::{Family, Params};
use cetpred::pipeline::{self, TrainRequest};

/// Environment variable holding the worker thread count.
const WORKERS_ENV: &str = "CETPRED_WORKERS";

#[derive(Parser)]
#[command(
    name = "cetpred",
    version,
    about = "ICU care-escalation trigger prediction pipeline"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; also the default location of inputs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RawInputs {
    #[arg(long)]
    stays: Option<PathBuf>,
    #[arg(long)]
    events: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic stays.csv, events.csv and truth.csv.
    Synth {
        #[arg(long)]
        n_stays: Option<usize>,
        #[arg(long)]
        signal_strength: Option<f64>,
        /// Four comma-separated target prevalences.
        #[arg(long, value_delimiter = ',', num_args = 4)]
        prevalence: Option<Vec<f64>>,
        #[arg(long)]
        label_noise: Option<f64>,
    },
    /// Apply the cohort rules and write the retained stays and events.
    Ingest(RawInputs),
    /// Write features.csv for the cohort.
    Featurize(RawInputs),
    /// Write labels.csv for the cohort.
    Label(RawInputs),
    /// Write split.csv and folds.csv from labels.csv.
    Split {
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        test_fraction: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Fit one model family on the training split.
    Train {
        #[arg(long)]
        family: Option<Family>,
        /// Select hyperparameters by cross-validated grid search.
        #[arg(long)]
        grid: bool,
        /// Override the number of trees (forest, gbt).
        #[arg(long)]
        n_estimators: Option<usize>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        folds: Option<PathBuf>,
    },
    /// Score models and write metrics.csv and ROC curves.
    Evaluate {
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Labels to score against (default: labels.csv).
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Restrict to the test side of this split file.
        #[arg(long)]
        split: Option<PathBuf>,
        /// Score every row instead of the test split.
        #[arg(long, conflicts_with = "split")]
        all_rows: bool,
    },
    /// Permutation importance per label on the test split.
    Importance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Join metrics and importances into report.csv.
    Report {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

struct Ctx {
    cfg: PipelineConfig,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, given: Option<PathBuf>, configured: Option<&PathBuf>, default: &str) -> PathBuf {
        given
            .or_else(|| configured.cloned())
            .unwrap_or_else(|| self.out.join(default))
    }

    fn raw(&self, inputs: RawInputs) -> (PathBuf, PathBuf) {
        (
            self.path(inputs.stays, self.cfg.paths.stays.as_ref(), pipeline::STAYS_FILE),
            self.path(
                inputs.events,
                self.cfg.paths.events.as_ref(),
                pipeline::EVENTS_FILE,
            ),
        )
    }

    fn file(&self, given: Option<PathBuf>, default: &str) -> PathBuf {
        given.unwrap_or_else(|| self.out.join(default))
    }
}

fn configure_workers() -> Result<()> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize =
        raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            CetError::Config(format!("{WORKERS_ENV} must be a positive integer, got `{raw}`"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CetError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    configure_workers()?;
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.paths.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    let ctx = Ctx { cfg, out };
    let cfg = &ctx.cfg;

    match cli.command {
        Command::Synth {
            n_stays,
            signal_strength,
            prevalence,
            label_noise,
        } => {
            let mut s = cfg.synth.clone();
            s.seed = cfg.seed;
            if let Some(n) = n_stays {
                s.n_stays = n;
            }
            if let Some(v) = signal_strength {
                s.signal_strength = v;
            }
            if let Some(p) = prevalence {
                s.prevalence = p
                    .try_into()
                    .map_err(|_| CetError::Config("expected four prevalences".into()))?;
            }
            if let Some(v) = label_noise {
                s.label_noise = v;
            }
            pipeline::run_synth(&s, &ctx.out)?;
            eprintln!("synth: wrote {} stays to {}", s.n_stays, ctx.out.display());
        }
        Command::Ingest(inputs) => {
            let (stays, events) = ctx.raw(inputs);
            let summary = pipeline::run_ingest(&stays, &events, &ctx.out)?;
            eprintln!("{summary}");
        }
        Command::Featurize(inputs) => {
            let (stays, events) = ctx.raw(inputs);
            let summary = pipeline::run_featurize(&stays, &events, &ctx.out)?;
            eprintln!("{summary}");
        }
        Command::Label(inputs) => {
            let (stays, events) = ctx.raw(inputs);
            let summary = pipeline::run_label(&stays, &events, &cfg.rules, &ctx.out)?;
            eprintln!("{summary}");
        }
        Command::Split {
            labels,
            test_fraction,
            k,
        } => {
            let labels = ctx.file(labels, pipeline::LABELS_FILE);
            pipeline::run_split(
                &labels,
                test_fraction.unwrap_or(cfg.split.test_fraction),
                k.unwrap_or(cfg.split.k),
                cfg.seed,
                &ctx.out,
            )?;
        }
        Command::Train {
            family,
            grid,
            n_estimators,
            features,
            labels,
            split,
            folds,
        } => {
            let family = family.or(cfg.model.family).ok_or_else(|| {
                CetError::Config("no model family given (--family or [model] family)".into())
            })?;
            let mut params = cfg.model.params_for(family);
            if let Some(n) = n_estimators {
                match &mut params {
                    Params::Forest(p) => p.n_estimators = n,
                    Params::Gbt(p) => p.n_estimators = n,
                    _ => {
                        return Err(CetError::Config(format!(
                            "--n-estimators does not apply to {family}"
                        )))
                    }
                }
            }
            let use_grid = grid || cfg.model.use_grid;
            let features = ctx.file(features, pipeline::FEATURES_FILE);
            let labels = ctx.file(labels, pipeline::LABELS_FILE);
            let split = ctx.file(split, pipeline::SPLIT_FILE);
            let folds = ctx.file(folds, pipeline::FOLDS_FILE);
            let outcome = pipeline::run_train(&TrainRequest {
                features: &features,
                labels: &labels,
                split: &split,
                folds: Some(&folds),
                k: cfg.split.k,
                params,
                grid: use_grid.then(|| cfg.grid.candidates(family)),
                rules: cfg.rules.clone(),
                seed: cfg.seed,
                out: &ctx.out,
            })?;
            if let Some(cv) = &outcome.cv {
                let best = &cv.candidates[cv.best];
                eprintln!(
                    "grid: best {} (mean macro-F1 {:.4})",
                    best.params.describe(),
                    best.mean
                );
            }
            eprintln!("train: wrote {}", outcome.model_path.display());
        }
        Command::Evaluate {
            models,
            features,
            truth,
            split,
            all_rows,
        } => {
            let features = ctx.file(features, pipeline::FEATURES_FILE);
            let truth = ctx.file(truth, pipeline::LABELS_FILE);
            let split = (!all_rows).then(|| ctx.file(split, pipeline::SPLIT_FILE));
            let reports = pipeline::run_evaluate(&models, &features, &truth, split.as_deref(), &ctx.out)?;
            for r in &reports {
                let (m, auc) = r.macro_metrics();
                println!(
                    "{}: n={} macro_f1={:.4} macro_auc={} hamming_loss={:.4}",
                    r.model,
                    r.n,
                    m.f1,
                    auc.map_or_else(|| "-".to_string(), |a| format!("{a:.4}")),
                    r.hamming_loss
                );
            }
        }
        Command::Importance {
            model,
            features,
            labels,
            split,
            repeats,
        } => {
            let features = ctx.file(features, pipeline::FEATURES_FILE);
            let labels = ctx.file(labels, pipeline::LABELS_FILE);
            let split = ctx.file(split, pipeline::SPLIT_FILE);
            let report = pipeline::run_importance(
                &model,
                &features,
                &labels,
                Some(&split),
                repeats.unwrap_or(cfg.importance.repeats),
                cfg.seed,
                &ctx.out,
            )?;
            for l in cetpred::labeler::Label::ALL {
                let top = report.ranked(l);
                println!("{l}: top feature {} ({:.4})", top[0].feature, top[0].mean);
            }
        }
        Command::Report { dir } => {
            let dir = dir.unwrap_or_else(|| ctx.out.clone());
            for row in pipeline::run_report(Path::new(&dir))? {
                println!("{}", row.join(","));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: Usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
