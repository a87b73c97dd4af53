//! Command implementations. Every command works inside one experiment
//! directory: `gen` fills `<out>/data/{train,test}`, `train` fills
//! `<out>/run`, and `eval`/`export` fill `<out>/eval`. Each writes the
//! resolved configuration next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;
use xionet::dataset::{read_dataset, write_dataset, DatasetError, TrainSet};
use xionet::report::{eval_operator, EvalReport, ReportError};
use xionet::trainer::{load_checkpoint, train, Checkpoint, TrainError};

use crate::config::{ConfigError, ExperimentConfig, Split};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {source}")]
    ConfigRead {
        path: String,
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("training: {0}")]
    Train(#[from] TrainError),
    #[error("evaluation: {0}")]
    Report(#[from] ReportError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("no dataset at {path}; run `gen` into this --out directory first")]
    MissingDataset { path: String },
    #[error("no checkpoint at {path}; pass --ckpt or run `train` first")]
    MissingCheckpoint { path: String },
    #[error("--sample {sample} is out of range; the test split has {available} samples")]
    SampleOutOfRange { sample: usize, available: usize },
    #[error("config/dataset mismatch: {what}")]
    Mismatch { what: String },
}

fn read_split(cfg: &ExperimentConfig, out: &Path, split: Split) -> Result<TrainSet, CliError> {
    let name = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    let dir = out.join("data").join(name);
    if !dir.join("meta").exists() {
        return Err(CliError::MissingDataset {
            path: dir.display().to_string(),
        });
    }
    let set = read_dataset(&dir)?;
    if set.config != cfg.gen_config(split) {
        return Err(CliError::Mismatch {
            what: format!(
                "the {name} split under {} was generated from a different configuration",
                dir.display()
            ),
        });
    }
    Ok(set)
}

pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let data = out.join("data");
    write_dataset(&data.join("train"), &cfg.gen_config(Split::Train))?;
    write_dataset(&data.join("test"), &cfg.gen_config(Split::Test))?;
    fs::write(data.join("config.resolved.txt"), cfg.resolved_text())?;
    println!(
        "gen: {} train and {} test samples of {} under {}",
        cfg.n_train,
        cfg.n_test,
        cfg.example.as_str(),
        data.display()
    );
    Ok(())
}

/// The resumable checkpoint with the most finished steps in `dir`: the final
/// `checkpoint.ckpt` if present, else the newest periodic snapshot.
fn latest_checkpoint(dir: &Path) -> Result<Option<Checkpoint>, CliError> {
    let done = dir.join("checkpoint.ckpt");
    if done.exists() {
        return Ok(Some(load_checkpoint(&done)?));
    }
    let mut best: Option<PathBuf> = None;
    if dir.is_dir() {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            if name.starts_with("checkpoint_") && name.ends_with(".ckpt") {
                // Zero-padded step counts sort lexicographically.
                if best.as_ref().map(|b| path > *b).unwrap_or(true) {
                    best = Some(path);
                }
            }
        }
    }
    match best {
        Some(path) => Ok(Some(load_checkpoint(&path)?)),
        None => Ok(None),
    }
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, resume: bool) -> Result<(), CliError> {
    let set = read_split(cfg, out, Split::Train)?;
    let op = cfg.operator_spec();
    let run_dir = out.join("run");
    let start = if resume {
        let found = latest_checkpoint(&run_dir)?;
        if found.is_none() {
            println!("train: nothing to resume under {}, starting fresh", run_dir.display());
        }
        found
    } else {
        None
    };
    let ck = train(&cfg.train, &op, &set, start, Some(&run_dir))?;
    fs::write(run_dir.join("config.resolved.txt"), cfg.resolved_text())?;
    let final_loss = ck.history.last().map(|h| h.total).unwrap_or(f64::NAN);
    println!(
        "train: {} steps done, final loss {final_loss:.6e}, checkpoint at {}",
        ck.steps_done,
        run_dir.join("checkpoint.ckpt").display()
    );
    Ok(())
}

fn run_eval(
    cfg: &ExperimentConfig,
    out: &Path,
    ckpt: Option<PathBuf>,
    export: &[usize],
) -> Result<EvalReport, CliError> {
    let ckpt_path = ckpt.unwrap_or_else(|| out.join("run").join("checkpoint.ckpt"));
    if !ckpt_path.exists() {
        return Err(CliError::MissingCheckpoint {
            path: ckpt_path.display().to_string(),
        });
    }
    let ck = load_checkpoint(&ckpt_path)?;
    let set = read_split(cfg, out, Split::Test)?;
    let eval_dir = out.join("eval");
    let report = eval_operator(&ck, &set, cfg.resolution, Some(&eval_dir), export)?;
    fs::write(eval_dir.join("config.resolved.txt"), cfg.resolved_text())?;
    Ok(report)
}

pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path, ckpt: Option<PathBuf>) -> Result<(), CliError> {
    let report = run_eval(cfg, out, ckpt, &cfg.export)?;
    println!(
        "eval: mean rel L2 {:.6e} (max {:.6e}) over {} samples, {} grid points",
        report.mean,
        report.max,
        report.per_sample.len(),
        report.grid_points
    );
    Ok(())
}

pub fn cmd_export(
    cfg: &ExperimentConfig,
    out: &Path,
    ckpt: Option<PathBuf>,
    sample: usize,
) -> Result<(), CliError> {
    if sample >= cfg.n_test {
        return Err(CliError::SampleOutOfRange {
            sample,
            available: cfg.n_test,
        });
    }
    let report = run_eval(cfg, out, ckpt, &[sample])?;
    println!(
        "export: wrote field_{sample}.csv (sample rel L2 {:.6e}) under {}",
        report.per_sample[sample],
        out.join("eval").display()
    );
    Ok(())
}
