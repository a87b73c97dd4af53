//! Strict sectioned `key = value` experiment configuration.
//!
//! A config file drives one experiment end to end: problem family and
//! parameter pinning, dataset sizes and seeds, network architecture, training
//! schedule, and evaluation resolution. Parsing is strict — unknown sections
//! or keys and duplicate keys are errors — and every command writes the fully
//! resolved configuration (all defaults and derived seeds materialized) next
//! to its outputs, so a run can be reproduced from that file alone.

use std::collections::HashSet;
use std::fmt::Write as _;

use thiserror::Error;
use xionet::dataset::{params_from_vec, params_to_vec, GenConfig};
use xionet::fieldgen::{self, mix_seed, ExampleId, ExampleParams};
use xionet::opnet::{Activation, NetMode, OperatorSpec};
use xionet::trainer::{TrainConfig, TrainMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value` or `[section]`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown section `[{name}]`")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: unknown key `{key}` in section [{section}]")]
    UnknownKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: key `{key}` appears before any [section] header")]
    KeyOutsideSection { line: usize, key: String },
    #[error("missing required key `{section}.{key}`")]
    MissingKey {
        section: &'static str,
        key: &'static str,
    },
    #[error("line {line}: bad value for `{key}`: {what}")]
    BadValue {
        line: usize,
        key: String,
        what: String,
    },
    #[error("key `{key}` disagrees with the compiled-in value: {what}")]
    Inconsistent { key: String, what: String },
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    // [problem]
    pub example: ExampleId,
    /// Shift the unknown so the solution jump vanishes before training.
    pub homogenized: bool,
    /// Fix the family parameters of every sample (input-function seeds still
    /// vary where the family has random sources).
    pub pinned: Option<ExampleParams>,
    // [sensors]
    pub sensor_count: usize,
    // [data]
    pub n_train: usize,
    pub n_test: usize,
    pub p_interior: usize,
    pub p_boundary: usize,
    pub p_interface: usize,
    pub with_targets: bool,
    ///`pinned` override for the test split only (e.g. evaluate at the
    /// closed-form parameter point while training on random draws).
    pub pinned_test: Option<ExampleParams>,
    pub seed_params_train: u64,
    pub seed_points_train: u64,
    pub seed_params_test: u64,
    pub seed_points_test: u64,
    // [net]
    pub net_mode: NetMode,
    pub width: usize,
    pub depth: usize,
    pub activation: Activation,
    // [train]
    pub train: TrainConfig,
    // [eval]
    pub resolution: Option<usize>,
    pub export: Vec<usize>,
}

/// Which half of the generated dataset a command works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

const SECTIONS: [&str; 6] = ["problem", "sensors", "data", "net", "train", "eval"];

struct RawEntry {
    section: String,
    key: String,
    value: String,
    line: usize,
    used: bool,
}

struct Entries(Vec<RawEntry>);

impl Entries {
    fn scan(text: &str) -> Result<Entries, ConfigError> {
        let mut out = Vec::new();
        let mut seen: HashSet<(String, String)> = HashSet::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(name) = body.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::UnknownSection {
                        line,
                        name: name.to_string(),
                    });
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line,
                    text: body.to_string(),
                });
            };
            let key = k.trim().to_string();
            let value = v.trim().to_string();
            let Some(sec) = &section else {
                return Err(ConfigError::KeyOutsideSection { line, key });
            };
            if !seen.insert((sec.clone(), key.clone())) {
                return Err(ConfigError::DuplicateKey { line, key });
            }
            out.push(RawEntry {
                section: sec.clone(),
                key,
                value,
                line,
                used: false,
            });
        }
        Ok(Entries(out))
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        for e in &mut self.0 {
            if !e.used && e.section == section && e.key == key {
                e.used = true;
                return Some((e.value.clone(), e.line));
            }
        }
        None
    }

    fn first_unused(&self) -> Option<&RawEntry> {
        self.0.iter().find(|e| !e.used)
    }
}

fn require(
    entries: &mut Entries,
    section: &'static str,
    key: &'static str,
) -> Result<(String, usize), ConfigError> {
    entries
        .take(section, key)
        .ok_or(ConfigError::MissingKey { section, key })
}

fn bad(key: &str, line: usize, what: &str) -> ConfigError {
    ConfigError::BadValue {
        line,
        key: key.to_string(),
        what: what.to_string(),
    }
}

fn parse_usize(v: &str, key: &str, line: usize) -> Result<usize, ConfigError> {
    v.parse().map_err(|_| bad(key, line, "expected an unsigned integer"))
}

fn parse_u64(v: &str, key: &str, line: usize) -> Result<u64, ConfigError> {
    v.parse().map_err(|_| bad(key, line, "expected an unsigned integer"))
}

fn parse_f64(v: &str, key: &str, line: usize) -> Result<f64, ConfigError> {
    v.parse().map_err(|_| bad(key, line, "expected a number"))
}

fn parse_bool(v: &str, key: &str, line: usize) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, line, "expected `true` or `false`")),
    }
}

fn parse_params(
    example: ExampleId,
    v: &str,
    key: &str,
    line: usize,
) -> Result<ExampleParams, ConfigError> {
    let nums: Vec<f64> = v
        .split_whitespace()
        .map(|t| parse_f64(t, key, line))
        .collect::<Result<_, _>>()?;
    let params = params_from_vec(example, &nums)
        .ok_or_else(|| bad(key, line, "wrong number of values for this family"))?;
    params
        .validate()
        .map_err(|e| bad(key, line, &e.to_string()))?;
    Ok(params)
}

/// The parameter-range provenance keys of a family with their canonical
/// values; accepted in [problem] and validated against the compiled ranges.
fn range_entries(example: ExampleId) -> Vec<(&'static str, String)> {
    let pair = |(lo, hi): (f64, f64)| format!("{lo} {hi}");
    match example {
        ExampleId::Rod1d => vec![("range_interface", pair(fieldgen::ROD_INTERFACE))],
        ExampleId::Disk2d => vec![
            ("range_strength", pair(fieldgen::DISK_STRENGTH)),
            ("range_radius", pair(fieldgen::DISK_RADIUS)),
        ],
        ExampleId::SquareStar2d => vec![
            ("range_p1", pair(fieldgen::STAR_AMPLITUDE)),
            ("range_p2", pair(fieldgen::STAR_SHARPNESS)),
            ("range_r1", pair(fieldgen::STAR_BASE_RADIUS)),
            ("range_r2", pair(fieldgen::STAR_WOBBLE_INV)),
        ],
        ExampleId::ShellStar3d => vec![
            ("range_radius", pair(fieldgen::SHELL_RADIUS)),
            ("range_amp", format!("{:?}", fieldgen::SHELL_AMP)),
            ("range_freq", format!("{:?}", fieldgen::SHELL_FREQ)),
            ("range_phase", format!("{:?}", fieldgen::SHELL_PHASE)),
        ],
        ExampleId::Ball6d => vec![("range_radius", pair(fieldgen::BALL_RADIUS))],
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let mut e = Entries::scan(text)?;

        // [problem]
        let (v, line) = require(&mut e, "problem", "example")?;
        let example = ExampleId::parse(&v)
            .ok_or_else(|| bad("example", line, "expected one of ex1, ex2, ex3, ex3d, ex6d"))?;
        let homogenized = match e.take("problem", "homogenized") {
            Some((v, line)) => parse_bool(&v, "homogenized", line)?,
            None => false,
        };
        let pinned = match e.take("problem", "pinned") {
            Some((v, line)) => Some(parse_params(example, &v, "pinned", line)?),
            None => None,
        };
        for (key, canonical) in range_entries(example) {
            if let Some((v, _)) = e.take("problem", key) {
                if v != canonical {
                    return Err(ConfigError::Inconsistent {
                        key: key.to_string(),
                        what: format!("expected `{canonical}`, got `{v}`"),
                    });
                }
            }
        }

        // [sensors]
        let sensor_count = match e.take("sensors", "count") {
            Some((v, line)) => {
                let n = parse_usize(&v, "count", line)?;
                if n != example.sensor_count() {
                    return Err(ConfigError::Inconsistent {
                        key: "count".to_string(),
                        what: format!(
                            "family {} uses {} sensors",
                            example.as_str(),
                            example.sensor_count()
                        ),
                    });
                }
                n
            }
            None => example.sensor_count(),
        };

        // [data]
        let (v, line) = require(&mut e, "data", "n_train")?;
        let n_train = parse_usize(&v, "n_train", line)?;
        let (v, line) = require(&mut e, "data", "n_test")?;
        let n_test = parse_usize(&v, "n_test", line)?;
        let (v, line) = require(&mut e, "data", "p_interior")?;
        let p_interior = parse_usize(&v, "p_interior", line)?;
        let (v, line) = require(&mut e, "data", "p_boundary")?;
        let p_boundary = parse_usize(&v, "p_boundary", line)?;
        let (v, line) = require(&mut e, "data", "p_interface")?;
        let p_interface = parse_usize(&v, "p_interface", line)?;
        let with_targets_opt = match e.take("data", "with_targets") {
            Some((v, line)) => Some(parse_bool(&v, "with_targets", line)?),
            None => None,
        };
        let pinned_test = match e.take("data", "pinned_test") {
            Some((v, line)) => Some(parse_params(example, &v, "pinned_test", line)?),
            None => None,
        };
        let seed = |e: &mut Entries, key: &'static str, default: u64| -> Result<u64, ConfigError> {
            match e.take("data", key) {
                Some((v, line)) => parse_u64(&v, key, line),
                None => Ok(default),
            }
        };
        let seed_params_train = seed(&mut e, "seed_params_train", 1)?;
        let seed_points_train = seed(&mut e, "seed_points_train", 2)?;
        let seed_params_test = seed(&mut e, "seed_params_test", 3)?;
        let seed_points_test = seed(&mut e, "seed_points_test", 4)?;

        // [net]
        let net_mode = match e.take("net", "mode") {
            Some((v, line)) => match v.as_str() {
                "xi" => NetMode::Xi,
                "baseline" => NetMode::Baseline,
                _ => return Err(bad("mode", line, "expected `xi` or `baseline`")),
            },
            None => NetMode::Xi,
        };
        let width = match e.take("net", "width") {
            Some((v, line)) => parse_usize(&v, "width", line)?,
            None => 64,
        };
        let depth = match e.take("net", "depth") {
            Some((v, line)) => parse_usize(&v, "depth", line)?,
            None => 4,
        };
        let activation = match e.take("net", "activation") {
            Some((v, line)) => match v.as_str() {
                "tanh" => Activation::Tanh,
                "relu" => Activation::Relu,
                _ => return Err(bad("activation", line, "expected `tanh` or `relu`")),
            },
            None => Activation::Tanh,
        };

        // [train]
        let mut train = TrainConfig::default();
        let (v, line) = require(&mut e, "train", "mode")?;
        train.mode =
            TrainMode::parse(&v).ok_or_else(|| bad("mode", line, "expected `dd` or `pi`"))?;
        if let Some((v, line)) = e.take("train", "iterations") {
            train.iterations = parse_usize(&v, "iterations", line)?;
        }
        if let Some((v, line)) = e.take("train", "lr0") {
            train.lr0 = parse_f64(&v, "lr0", line)?;
        }
        if let Some((v, line)) = e.take("train", "decay_factor") {
            train.decay_factor = parse_f64(&v, "decay_factor", line)?;
        }
        if let Some((v, line)) = e.take("train", "decay_interval") {
            train.decay_interval = parse_usize(&v, "decay_interval", line)?;
        }
        if let Some((v, line)) = e.take("train", "functions_per_step") {
            train.functions_per_step = parse_usize(&v, "functions_per_step", line)?;
        }
        if let Some((v, line)) = e.take("train", "points_per_class") {
            train.points_per_class = parse_usize(&v, "points_per_class", line)?;
        }
        if let Some((v, line)) = e.take("train", "beta_interior") {
            train.weights.interior = parse_f64(&v, "beta_interior", line)?;
        }
        if let Some((v, line)) = e.take("train", "beta_boundary") {
            train.weights.boundary = parse_f64(&v, "beta_boundary", line)?;
        }
        if let Some((v, line)) = e.take("train", "beta_interface") {
            train.weights.interface = parse_f64(&v, "beta_interface", line)?;
        }
        if let Some((v, line)) = e.take("train", "seed_init") {
            train.seed_init = parse_u64(&v, "seed_init", line)?;
        }
        if let Some((v, line)) = e.take("train", "seed_shuffle") {
            train.seed_shuffle = parse_u64(&v, "seed_shuffle", line)?;
        }
        if let Some((v, line)) = e.take("train", "checkpoint_every") {
            train.checkpoint_every = parse_usize(&v, "checkpoint_every", line)?;
        }
        if let Some((v, line)) = e.take("train", "resample_points") {
            train.resample_points = parse_bool(&v, "resample_points", line)?;
        }
        if let Some((v, line)) = e.take("train", "workers") {
            train.workers = parse_usize(&v, "workers", line)?;
        }

        // [eval]
        let resolution = match e.take("eval", "resolution") {
            Some((v, line)) => Some(parse_usize(&v, "resolution", line)?),
            None => None,
        };
        let export = match e.take("eval", "export") {
            Some((v, line)) => v
                .split_whitespace()
                .map(|t| parse_usize(t, "export", line))
                .collect::<Result<_, _>>()?,
            None => Vec::new(),
        };

        if let Some(left) = e.first_unused() {
            return Err(ConfigError::UnknownKey {
                line: left.line,
                section: left.section.clone(),
                key: left.key.clone(),
            });
        }

        // Data-driven training needs stored targets; the physics loss does not.
        let with_targets = with_targets_opt.unwrap_or(train.mode == TrainMode::Data);

        Ok(ExperimentConfig {
            example,
            homogenized,
            pinned,
            sensor_count,
            n_train,
            n_test,
            p_interior,
            p_boundary,
            p_interface,
            with_targets,
            pinned_test,
            seed_params_train,
            seed_points_train,
            seed_params_test,
            seed_points_test,
            net_mode,
            width,
            depth,
            activation,
            train,
            resolution,
            export,
        })
    }

    /// Canonical serialization with every default materialized;
    /// `parse(resolved_text(c)) == c`.
    pub fn resolved_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[problem]");
        let _ = writeln!(s, "example = {}", self.example.as_str());
        let _ = writeln!(s, "homogenized = {}", self.homogenized);
        if let Some(p) = &self.pinned {
            let nums: Vec<String> = params_to_vec(p).iter().map(f64::to_string).collect();
            let _ = writeln!(s, "pinned = {}", nums.join(" "));
        }
        for (key, canonical) in range_entries(self.example) {
            let _ = writeln!(s, "{key} = {canonical}");
        }
        let _ = writeln!(s, "\n[sensors]");
        let _ = writeln!(s, "count = {}", self.sensor_count);
        let _ = writeln!(s, "\n[data]");
        let _ = writeln!(s, "n_train = {}", self.n_train);
        let _ = writeln!(s, "n_test = {}", self.n_test);
        let _ = writeln!(s, "p_interior = {}", self.p_interior);
        let _ = writeln!(s, "p_boundary = {}", self.p_boundary);
        let _ = writeln!(s, "p_interface = {}", self.p_interface);
        let _ = writeln!(s, "with_targets = {}", self.with_targets);
        if let Some(p) = &self.pinned_test {
            let nums: Vec<String> = params_to_vec(p).iter().map(f64::to_string).collect();
            let _ = writeln!(s, "pinned_test = {}", nums.join(" "));
        }
        let _ = writeln!(s, "seed_params_train = {}", self.seed_params_train);
        let _ = writeln!(s, "seed_points_train = {}", self.seed_points_train);
        let _ = writeln!(s, "seed_params_test = {}", self.seed_params_test);
        let _ = writeln!(s, "seed_points_test = {}", self.seed_points_test);
        let _ = writeln!(s, "\n[net]");
        let mode = match self.net_mode {
            NetMode::Xi => "xi",
            NetMode::Baseline => "baseline",
        };
        let _ = writeln!(s, "mode = {mode}");
        let _ = writeln!(s, "width = {}", self.width);
        let _ = writeln!(s, "depth = {}", self.depth);
        let act = match self.activation {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        };
        let _ = writeln!(s, "activation = {act}");
        let _ = writeln!(s, "\n[train]");
        let t = &self.train;
        let _ = writeln!(s, "mode = {}", t.mode.as_str());
        let _ = writeln!(s, "iterations = {}", t.iterations);
        let _ = writeln!(s, "lr0 = {}", t.lr0);
        let _ = writeln!(s, "decay_factor = {}", t.decay_factor);
        let _ = writeln!(s, "decay_interval = {}", t.decay_interval);
        let _ = writeln!(s, "functions_per_step = {}", t.functions_per_step);
        let _ = writeln!(s, "points_per_class = {}", t.points_per_class);
        let _ = writeln!(s, "beta_interior = {}", t.weights.interior);
        let _ = writeln!(s, "beta_boundary = {}", t.weights.boundary);
        let _ = writeln!(s, "beta_interface = {}", t.weights.interface);
        let _ = writeln!(s, "seed_init = {}", t.seed_init);
        let _ = writeln!(s, "seed_shuffle = {}", t.seed_shuffle);
        let _ = writeln!(s, "checkpoint_every = {}", t.checkpoint_every);
        let _ = writeln!(s, "resample_points = {}", t.resample_points);
        let _ = writeln!(s, "workers = {}", t.workers);
        let _ = writeln!(s, "\n[eval]");
        if let Some(r) = self.resolution {
            let _ = writeln!(s, "resolution = {r}");
        }
        if !self.export.is_empty() {
            let nums: Vec<String> = self.export.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "export = {}", nums.join(" "));
        }
        s
    }

    /// Derives every dataset and training seed from one master seed.
    pub fn apply_master_seed(&mut self, master: u64) {
        self.seed_params_train = mix_seed(master, 0);
        self.seed_points_train = mix_seed(master, 1);
        self.seed_params_test = mix_seed(master, 2);
        self.seed_points_test = mix_seed(master, 3);
        self.train.seed_init = mix_seed(master, 4);
        self.train.seed_shuffle = mix_seed(master, 5);
    }

    /// Generation request of one split.
    pub fn gen_config(&self, split: Split) -> GenConfig {
        let (n_samples, seed_params, seed_points, with_targets, pinned) = match split {
            Split::Train => (
                self.n_train,
                self.seed_params_train,
                self.seed_points_train,
                self.with_targets,
                self.pinned,
            ),
            // The evaluator computes its own references; test targets are
            // never stored.
            Split::Test => (
                self.n_test,
                self.seed_params_test,
                self.seed_points_test,
                false,
                self.pinned_test.or(self.pinned),
            ),
        };
        GenConfig {
            example: self.example,
            n_samples,
            n_interior: self.p_interior,
            n_boundary: self.p_boundary,
            n_interface: self.p_interface,
            seed_params,
            seed_points,
            with_targets,
            homogenized: self.homogenized,
            pinned,
        }
    }

    /// Network architecture described by the [net] section.
    pub fn operator_spec(&self) -> OperatorSpec {
        let dim = self.example.dim();
        match self.net_mode {
            NetMode::Xi => OperatorSpec::xi(
                dim,
                self.sensor_count,
                self.width,
                self.depth,
                self.activation,
            ),
            NetMode::Baseline => OperatorSpec::baseline(
                dim,
                self.sensor_count,
                self.width,
                self.depth,
                self.activation,
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[problem]
example = ex1

[data]
n_train = 8
n_test = 2
p_interior = 10
p_boundary = 2
p_interface = 1

[train]
mode = pi
";

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.example, ExampleId::Rod1d);
        assert_eq!(cfg.sensor_count, 100);
        assert!(!cfg.homogenized);
        assert!(cfg.pinned.is_none());
        assert!(!cfg.with_targets); // pi mode needs no targets
        assert_eq!(cfg.seed_params_train, 1);
        assert_eq!(cfg.seed_points_test, 4);
        assert_eq!(cfg.net_mode, NetMode::Xi);
        assert_eq!((cfg.width, cfg.depth), (64, 4));
        assert_eq!(cfg.activation, Activation::Tanh);
        assert_eq!(cfg.train.iterations, TrainConfig::default().iterations);
        assert_eq!(cfg.train.weights.boundary, 100.0);
        assert_eq!(cfg.resolution, None);
        assert!(cfg.export.is_empty());
    }

    #[test]
    fn data_driven_mode_defaults_to_stored_targets() {
        let dd = MINIMAL.replace("mode = pi", "mode = dd");
        assert!(ExperimentConfig::parse(&dd).unwrap().with_targets);
        // An explicit key still wins.
        let explicit = dd.replace("p_interface = 1", "p_interface = 1\nwith_targets = false");
        assert!(!ExperimentConfig::parse(&explicit).unwrap().with_targets);
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        cfg.pinned = Some(ExampleParams::Rod1d { interface: 0.5 });
        cfg.resolution = Some(501);
        cfg.export = vec![0, 3];
        cfg.apply_master_seed(42);
        let text = cfg.resolved_text();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        // And serializing again is byte-stable.
        assert_eq!(back.resolved_text(), text);
    }

    #[test]
    fn master_seed_is_deterministic_and_spread() {
        let mut a = ExperimentConfig::parse(MINIMAL).unwrap();
        let mut b = ExperimentConfig::parse(MINIMAL).unwrap();
        a.apply_master_seed(7);
        b.apply_master_seed(7);
        assert_eq!(a, b);
        let seeds = [
            a.seed_params_train,
            a.seed_points_train,
            a.seed_params_test,
            a.seed_points_test,
            a.train.seed_init,
            a.train.seed_shuffle,
        ];
        let distinct: HashSet<u64> = seeds.iter().copied().collect();
        assert_eq!(distinct.len(), seeds.len());
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        let text = MINIMAL.replace("[train]", "[train]\nfluxcapacitor = 1");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { ref key, .. } if key == "fluxcapacitor"));
        let text = format!("{MINIMAL}\n[magic]\nx = 1\n");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownSection { ref name, .. } if name == "magic"));
        let text = MINIMAL.replace("example = ex1", "example = ex1\nexample = ex2");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(matches!(err, ConfigError::DuplicateKey { ref key, .. } if key == "example"));
    }

    #[test]
    fn missing_and_malformed_keys_are_named() {
        let text = MINIMAL.replace("mode = pi", "");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(matches!(
            err,
            ConfigError::MissingKey { section: "train", key: "mode" }
        ));
        let text = MINIMAL.replace("n_train = 8", "n_train eight");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Malformed { .. }));
        let text = MINIMAL.replace("n_train = 8", "n_train = eight");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { ref key, .. } if key == "n_train"));
    }

    #[test]
    fn pinned_values_are_validated() {
        let text = MINIMAL.replace("example = ex1", "example = ex1\npinned = 0.5");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(cfg.pinned, Some(ExampleParams::Rod1d { interface: 0.5 }));
        // Wrong arity.
        let text = MINIMAL.replace("example = ex1", "example = ex1\npinned = 0.5 0.6");
        assert!(matches!(
            ExperimentConfig::parse(&text),
            Err(ConfigError::BadValue { .. })
        ));
        // Out of the admissible range.
        let text = MINIMAL.replace("example = ex1", "example = ex1\npinned = 0.95");
        assert!(matches!(
            ExperimentConfig::parse(&text),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn provenance_keys_must_match_compiled_ranges() {
        let text = MINIMAL.replace("example = ex1", "example = ex1\nrange_interface = 0.4 0.7");
        assert!(ExperimentConfig::parse(&text).is_ok());
        let text = MINIMAL.replace("example = ex1", "example = ex1\nrange_interface = 0 1");
        assert!(matches!(
            ExperimentConfig::parse(&text),
            Err(ConfigError::Inconsistent { .. })
        ));
        let text = MINIMAL.replace("example = ex1", "example = ex1\nrange_radius = 0.4 0.8");
        assert!(matches!(
            ExperimentConfig::parse(&text),
            Err(ConfigError::UnknownKey { .. })
        ));
    }

    #[test]
    fn sensor_count_must_match_the_family() {
        let text = format!("{MINIMAL}\n[sensors]\ncount = 100\n");
        assert!(ExperimentConfig::parse(&text).is_ok());
        let text = format!("{MINIMAL}\n[sensors]\ncount = 64\n");
        assert!(matches!(
            ExperimentConfig::parse(&text),
            Err(ConfigError::Inconsistent { .. })
        ));
    }

    #[test]
    fn split_requests_differ_only_where_expected() {
        let text = MINIMAL.replace(
            "p_interface = 1",
            "p_interface = 1\npinned_test = 0.55",
        );
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let train = cfg.gen_config(Split::Train);
        let test = cfg.gen_config(Split::Test);
        assert_eq!(train.n_samples, 8);
        assert_eq!(test.n_samples, 2);
        assert_eq!(train.pinned, None);
        assert_eq!(test.pinned, Some(ExampleParams::Rod1d { interface: 0.55 }));
        assert!(!test.with_targets);
        assert_ne!(train.seed_params, test.seed_params);
        assert_eq!(train.n_interior, test.n_interior);
    }
}
