//! `xicli` — reproducible experiment pipeline for level-set-augmented
//! operator networks on elliptic interface problems: dataset generation,
//! training, evaluation, and field export, driven by sectioned `key = value`
//! config files.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use run::CliError;

#[derive(Parser)]
#[command(
    name = "xicli",
    version,
    about = "Operator-network experiments on parametric elliptic interface problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train/test dataset directories of an experiment.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train a network on the generated train split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Worker threads for loss evaluation; results are bit-reproducible
        /// per fixed worker count.
        #[arg(long)]
        workers: Option<usize>,
        /// Continue from the newest checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on the test split and write errors.csv.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (default: <out>/run/checkpoint.ckpt).
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Write the predicted/reference field table of one test sample.
    Export {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (default: <out>/run/checkpoint.ckpt).
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Test-sample index to dump.
        #[arg(long)]
        sample: usize,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Experiment output directory.
    #[arg(long)]
    out: PathBuf,
    /// Master seed; when set, every dataset and training seed derives from
    /// it and the derived values are written to the resolved config.
    #[arg(long)]
    seed: Option<u64>,
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(&common.config).map_err(|e| CliError::ConfigRead {
        path: common.config.display().to_string(),
        source: e,
    })?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(master) = common.seed {
        cfg.apply_master_seed(master);
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { common } => run::cmd_gen(&load(&common)?, &common.out),
        Command::Train {
            common,
            workers,
            resume,
        } => {
            let mut cfg = load(&common)?;
            if let Some(w) = workers {
                cfg.train.workers = w;
            }
            run::cmd_train(&cfg, &common.out, resume)
        }
        Command::Eval { common, ckpt } => run::cmd_eval(&load(&common)?, &common.out, ckpt),
        Command::Export {
            common,
            ckpt,
            sample,
        } => run::cmd_export(&load(&common)?, &common.out, ckpt, sample),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
