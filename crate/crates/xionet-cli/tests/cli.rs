//! End-to-end tests of the `xicli` binary: exit codes, error naming, the
//! gen → train → eval → export pipeline, and file-level reproducibility.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::tempdir;

fn xicli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xicli"))
        .args(args)
        .output()
        .expect("spawn xicli")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// A deliberately tiny interval experiment so the whole pipeline runs in
/// seconds.
const TINY: &str = "\
[problem]
example = ex1

[data]
n_train = 6
n_test = 3
p_interior = 8
p_boundary = 2
p_interface = 1

[net]
width = 8
depth = 2

[train]
mode = pi
iterations = 20
functions_per_step = 3
checkpoint_every = 10

[eval]
resolution = 101
";

fn write_tiny(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.cfg");
    fs::write(&path, TINY).unwrap();
    path
}

#[test]
fn unknown_command_fails_with_usage() {
    let out = xicli(&["frobnicate"]);
    assert!(!out.status.success());
    assert!(stderr_of(&out).contains("Usage"), "{}", stderr_of(&out));
}

#[test]
fn unreadable_config_is_an_error() {
    let dir = tempdir().unwrap();
    let missing = dir.path().join("nope.cfg");
    let out = xicli(&[
        "gen",
        "--config",
        missing.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(stderr_of(&out).contains("cannot read config"));
}

#[test]
fn missing_required_key_is_named() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, TINY.replace("mode = pi", "")).unwrap();
    let out = xicli(&[
        "gen",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = stderr_of(&out);
    assert!(err.contains("train.mode"), "{err}");
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, TINY.replace("[eval]", "[eval]\nfluxcapacitor = 1")).unwrap();
    let out = xicli(&[
        "gen",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(stderr_of(&out).contains("fluxcapacitor"));
}

#[test]
fn missing_checkpoint_names_the_flag() {
    let dir = tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let out = xicli(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = stderr_of(&out);
    assert!(err.contains("--ckpt"), "{err}");
}

#[test]
fn pipeline_smoke_writes_all_outputs() {
    let dir = tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let out_dir = dir.path().join("exp");
    let c = cfg.to_str().unwrap();
    let o = out_dir.to_str().unwrap();

    let out = xicli(&["gen", "--config", c, "--out", o]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    for name in ["meta", "sensors.csv", "colloc.csv"] {
        assert!(out_dir.join("data/train").join(name).exists(), "{name}");
        assert!(out_dir.join("data/test").join(name).exists(), "{name}");
    }
    assert!(out_dir.join("data/config.resolved.txt").exists());

    let out = xicli(&["train", "--config", c, "--out", o]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(out_dir.join("run/checkpoint.ckpt").exists());
    assert!(out_dir.join("run/checkpoint_000010.ckpt").exists());
    assert!(out_dir.join("run/config.resolved.txt").exists());
    let history = fs::read_to_string(out_dir.join("run/history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(
        lines.next(),
        Some("step,lr,total_loss,loss_interior,loss_boundary,loss_interface")
    );
    assert_eq!(lines.count(), 20);

    let out = xicli(&["eval", "--config", c, "--out", o]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(out_dir.join("eval/config.resolved.txt").exists());
    let errors = fs::read_to_string(out_dir.join("eval/errors.csv")).unwrap();
    let mut lines = errors.lines();
    assert_eq!(lines.next(), Some("sample,rel_l2"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let (_, val) = row.split_once(',').unwrap();
        assert!(val.parse::<f64>().unwrap().is_finite());
    }

    // A second eval writes byte-identical results.
    let first = fs::read(out_dir.join("eval/errors.csv")).unwrap();
    let out = xicli(&["eval", "--config", c, "--out", o]);
    assert!(out.status.success());
    assert_eq!(first, fs::read(out_dir.join("eval/errors.csv")).unwrap());

    let out = xicli(&["export", "--config", c, "--out", o, "--sample", "1"]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let table = fs::read_to_string(out_dir.join("eval/field_1.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("x1,pred,ref,abs_err"));
    assert!(lines.count() > 0);

    let out = xicli(&["export", "--config", c, "--out", o, "--sample", "9"]);
    assert!(!out.status.success());
    assert!(stderr_of(&out).contains("--sample"));
}

#[test]
fn master_seed_and_resolved_config_reproduce_datasets() {
    let dir = tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let c = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c_dir = dir.path().join("c");

    for out_dir in [&a, &b] {
        let out = xicli(&["gen", "--config", c, "--out", out_dir.to_str().unwrap(), "--seed", "42"]);
        assert!(out.status.success(), "{}", stderr_of(&out));
    }
    for name in ["train/colloc.csv", "train/sensors.csv", "test/colloc.csv"] {
        let fa = fs::read(a.join("data").join(name)).unwrap();
        let fb = fs::read(b.join("data").join(name)).unwrap();
        assert_eq!(fa, fb, "{name}");
    }

    // Re-running from the resolved config (without --seed) reproduces the
    // same bytes: the derived seeds were materialized into it.
    let resolved = a.join("data/config.resolved.txt");
    let out = xicli(&[
        "gen",
        "--config",
        resolved.to_str().unwrap(),
        "--out",
        c_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    for name in ["train/colloc.csv", "train/sensors.csv", "test/colloc.csv"] {
        let fa = fs::read(a.join("data").join(name)).unwrap();
        let fc = fs::read(c_dir.join("data").join(name)).unwrap();
        assert_eq!(fa, fc, "{name}");
    }
    // Distinct master seeds give distinct draws.
    let d = dir.path().join("d");
    let out = xicli(&["gen", "--config", c, "--out", d.to_str().unwrap(), "--seed", "43"]);
    assert!(out.status.success());
    let fa = fs::read(a.join("data/train/colloc.csv")).unwrap();
    let fd = fs::read(d.join("data/train/colloc.csv")).unwrap();
    assert_ne!(fa, fd);
}

#[test]
fn resume_reproduces_the_uninterrupted_history() {
    let dir = tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let out_dir = dir.path().join("exp");
    let c = cfg.to_str().unwrap();
    let o = out_dir.to_str().unwrap();

    let out = xicli(&["gen", "--config", c, "--out", o]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let out = xicli(&["train", "--config", c, "--out", o]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    let full_history = fs::read(out_dir.join("run/history.csv")).unwrap();
    let full_ckpt = fs::read(out_dir.join("run/checkpoint.ckpt")).unwrap();

    // Simulate an interrupted run: only the step-10 snapshot survives.
    fs::remove_file(out_dir.join("run/checkpoint.ckpt")).unwrap();
    fs::remove_file(out_dir.join("run/history.csv")).unwrap();
    let out = xicli(&["train", "--config", c, "--out", o, "--resume"]);
    assert!(out.status.success(), "{}", stderr_of(&out));

    assert_eq!(full_history, fs::read(out_dir.join("run/history.csv")).unwrap());
    assert_eq!(full_ckpt, fs::read(out_dir.join("run/checkpoint.ckpt")).unwrap());
}
