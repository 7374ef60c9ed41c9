//! `cxseg`: config-driven experiment runner for the abnormality
//! localization pipeline.
//!
//! Verbs: `synth`, `ingest`, `split`, `train`, `eval`, `report`.
//! Exit codes: 0 success, 2 config error, 3 missing dependency, 4 data
//! error, 1 anything else.

pub mod commands;
pub mod dataset;
pub mod plots;
pub mod run;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use cxseg_core::config::ExperimentConfig;
use cxseg_core::error::{Error, Result};

use commands::{EvalModel, Family};
use run::RunDirectory;

#[derive(Parser)]
#[command(name = "cxseg", about = "Chest X-ray abnormality localization experiments")]
pub struct Cli {
    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory holding checkpoints, predictions, and reports.
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Subcommand)]
pub enum Verb {
    /// Generate the seeded synthetic dataset.
    Synth {
        /// Output dataset directory; defaults to the config's dataset.dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ingest DICOM scans plus an annotation CSV into a dataset directory.
    Ingest {
        /// Directory of .dcm files.
        #[arg(long)]
        input: PathBuf,
        /// Annotation CSV (VinDr-CXR layout).
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the split manifest of an existing dataset.
    Split {
        /// Dataset directory; defaults to the config's dataset.dir.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train one model family into the run directory.
    Train {
        #[arg(long, value_enum)]
        family: Family,
        /// Run directory holding the siamese checkpoint (family=chexnomaly);
        /// defaults to this run directory.
        #[arg(long)]
        siamese_run: Option<PathBuf>,
    },
    /// Evaluate a trained model on the test + unseen protocol.
    Eval {
        /// Checkpoint name (supermodel, chexnomaly, class_<k>, siamese) or
        /// ensemble scheme (max_ensemble, model_ensemble).
        #[arg(long)]
        model: String,
    },
    /// Emit plots and a cross-run comparison table.
    Report {
        /// Run directories to compare.
        #[arg(long, required = true, num_args = 1..)]
        run_dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli, fallback: Option<&Path>) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_deref()
        .or(fallback)
        .ok_or_else(|| Error::config("--config is required for this verb"))?;
    if !path.exists() {
        return Err(Error::config(format!("config file {} not found", path.display())));
    }
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn require_run_dir(cli: &Cli) -> Result<RunDirectory> {
    cli.run_dir
        .clone()
        .map(RunDirectory::new)
        .ok_or_else(|| Error::config("--run-dir is required for this verb"))
}

/// Execute one parsed invocation.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.verb {
        Verb::Synth { out } => {
            let config = load_config(cli, None)?;
            let out = out.clone().unwrap_or_else(|| config.dataset.dir.clone());
            commands::cmd_synth(&config, &out)
        }
        Verb::Ingest {
            input,
            annotations,
            out,
        } => {
            let config = load_config(cli, None)?;
            let out = out.clone().unwrap_or_else(|| config.dataset.dir.clone());
            commands::cmd_ingest(&config, input, annotations, &out)
        }
        Verb::Split { dataset } => {
            let config = load_config(cli, None)?;
            let dataset = dataset.clone().unwrap_or_else(|| config.dataset.dir.clone());
            commands::cmd_split(&config, &dataset)
        }
        Verb::Train {
            family,
            siamese_run,
        } => {
            let run = require_run_dir(cli)?;
            let config = load_config(cli, None)?;
            commands::cmd_train(&config, *family, &run, siamese_run.as_deref())
        }
        Verb::Eval { model } => {
            let run = require_run_dir(cli)?;
            // default to the run's config snapshot
            let snapshot = run.config_path();
            let config = load_config(cli, Some(&snapshot))?;
            commands::cmd_eval(&config, &run, &EvalModel::parse(model))
        }
        Verb::Report { run_dirs, out } => {
            let dirs: Vec<&Path> = run_dirs.iter().map(PathBuf::as_path).collect();
            commands::cmd_report(&dirs, out)
        }
    }
}

/// Parse arguments, run, and map errors to the exit-code contract.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with code 0
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            run::exit_code(&e)
        }
    }
}
