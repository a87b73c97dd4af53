//! Adam training loop: minibatched physics/data losses, exponential
//! learning-rate decay, deterministic shuffling, and checkpoints that resume
//! bit-exactly.

use std::fs;
use std::io;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::TrainSet;
use crate::diffcore::{Tape, TapeError};
use crate::fieldgen::{mix_seed, ProblemSpec};
use crate::opnet::{init_params, register_network, Activation, NetMode, OperatorSpec};
use crate::physres::{
    loss_data_normalized, loss_physics_normalized, sample_collocation, ClassCounts,
    CollocationSet, DataSample, LossWeights, PhysError,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("gradient component {index} is not finite")]
    NonFiniteGradient { index: usize },
    #[error("invalid training configuration: {what}")]
    InvalidConfig { what: &'static str },
    #[error("sample {sample} has no reference targets (data-driven mode needs them)")]
    MissingTargets { sample: usize },
    #[error("checkpoint architecture does not match: {what}")]
    ArchitectureMismatch { what: String },
    #[error("bad checkpoint: {what}")]
    BadCheckpoint { what: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Phys(#[from] PhysError),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

/// Which loss drives the parameter updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Supervised regression onto reference solution values.
    Data,
    /// Residual/boundary/flux physics loss; no solution data.
    Physics,
}

impl TrainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Data => "dd",
            TrainMode::Physics => "pi",
        }
    }

    pub fn parse(s: &str) -> Option<TrainMode> {
        match s {
            "dd" => Some(TrainMode::Data),
            "pi" => Some(TrainMode::Physics),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub iterations: usize,
    /// Initial learning rate.
    pub lr0: f64,
    /// Multiplicative decay applied every `decay_interval` steps.
    pub decay_factor: f64,
    pub decay_interval: usize,
    /// Input functions per minibatch (clamped to the dataset size).
    pub functions_per_step: usize,
    /// Points drawn per class per selected function; 0 keeps all points.
    pub points_per_class: usize,
    pub weights: LossWeights,
    /// Seed for the parameter initialization.
    pub seed_init: u64,
    /// Seed stream for per-step minibatch selection.
    pub seed_shuffle: u64,
    /// Steps between checkpoint snapshots when an output directory is given;
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Loss-evaluation chunks per step. Histories are reproducible for a
    /// fixed worker count; different counts regroup floating-point sums.
    pub workers: usize,
    /// Redraw collocation points every step instead of reusing the fixed
    /// dataset point sets.
    pub resample_points: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Physics,
            iterations: 40_000,
            lr0: 1e-3,
            decay_factor: 0.95,
            decay_interval: 1000,
            functions_per_step: 100,
            points_per_class: 0,
            weights: LossWeights::default(),
            seed_init: 0,
            seed_shuffle: 1,
            checkpoint_every: 0,
            workers: 1,
            resample_points: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |what| Err(TrainError::InvalidConfig { what });
        if self.iterations < 1 {
            return fail("iterations must be at least 1");
        }
        if !(self.lr0 > 0.0) {
            return fail("learning rate must be positive");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return fail("decay factor must lie in (0, 1]");
        }
        if self.decay_interval < 1 {
            return fail("decay interval must be at least 1");
        }
        if self.functions_per_step < 1 {
            return fail("need at least one function per step");
        }
        if self.workers < 1 {
            return fail("need at least one worker");
        }
        Ok(())
    }
}

/// Stepped exponential decay: lr₀·γ^⌊step/interval⌋; exact lr₀ at step 0.
pub fn lr_at(cfg: &TrainConfig, step: usize) -> f64 {
    cfg.lr0 * cfg.decay_factor.powi((step / cfg.decay_interval) as i32)
}

/// Adam moment estimates plus hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Completed updates.
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update in place:
/// m ← β₁m + (1−β₁)g, v ← β₂v + (1−β₂)g², with m̂ = m/(1−β₁ᵗ),
/// v̂ = v/(1−β₂ᵗ) and p ← p − lr·m̂/(√v̂ + ε).
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grads: &[f64],
    lr: f64,
) -> Result<(), TrainError> {
    assert_eq!(params.len(), grads.len(), "gradient length mismatch");
    assert_eq!(params.len(), state.m.len(), "moment length mismatch");
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient { index });
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t.min(i32::MAX as u64) as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t.min(i32::MAX as u64) as i32);
    for i in 0..params.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (vhat.sqrt() + state.eps);
    }
    Ok(())
}

/// One appended loss record per optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub interior: f64,
    pub boundary: f64,
    pub interface: f64,
}

/// A resumable training snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: OperatorSpec,
    pub params: Vec<f64>,
    pub adam: Option<AdamState>,
    pub steps_done: usize,
    pub history: Vec<HistoryRow>,
}

fn mode_str(mode: NetMode) -> &'static str {
    match mode {
        NetMode::Xi => "xi",
        NetMode::Baseline => "baseline",
    }
}

fn activation_str(a: Activation) -> &'static str {
    match a {
        Activation::Tanh => "tanh",
        Activation::Relu => "relu",
    }
}

/// Uniform (width, depth) of the architecture, or an error when the spec was
/// built with non-uniform layers the descriptor line cannot express.
fn uniform_width_depth(arch: &OperatorSpec) -> Result<(usize, usize), TrainError> {
    let widths = &arch.trunk.widths;
    let depth = widths.len() - 1;
    let width = *widths.last().expect("trunk has layers");
    let rebuilt = match arch.mode {
        NetMode::Xi => OperatorSpec::xi(arch.dim, arch.sensors, width, depth, arch.trunk.activation),
        NetMode::Baseline => {
            OperatorSpec::baseline(arch.dim, arch.sensors, width, depth, arch.trunk.activation)
        }
    };
    if rebuilt != *arch {
        return Err(TrainError::BadCheckpoint {
            what: "only uniform-width architectures are checkpointable".into(),
        });
    }
    Ok((width, depth))
}

/// Writes `xionet-ckpt v1`: three text header lines, a byte-length line,
/// then one little-endian f64 block holding parameters, optional Adam
/// moments, and the loss history.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), TrainError> {
    let (width, depth) = uniform_width_depth(&ck.arch)?;
    let mut doubles: Vec<f64> = Vec::new();
    doubles.extend_from_slice(&ck.params);
    if let Some(a) = &ck.adam {
        doubles.extend_from_slice(&a.m);
        doubles.extend_from_slice(&a.v);
        doubles.extend_from_slice(&[a.t as f64, a.beta1, a.beta2, a.eps]);
    }
    for r in &ck.history {
        doubles.extend_from_slice(&[r.step as f64, r.lr, r.total, r.interior, r.boundary, r.interface]);
    }
    let mut bytes = format!(
        "xionet-ckpt v1\narch mode={} activation={} dim={} sensors={} width={} depth={} latent={}\ncounts steps={} params={} adam={} history={}\nbinary bytes={}\n",
        mode_str(ck.arch.mode),
        activation_str(ck.arch.trunk.activation),
        ck.arch.dim,
        ck.arch.sensors,
        width,
        depth,
        ck.arch.latent(),
        ck.steps_done,
        ck.params.len(),
        u8::from(ck.adam.is_some()),
        ck.history.len(),
        doubles.len() * 8,
    )
    .into_bytes();
    for v in doubles {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn bad(what: impl Into<String>) -> TrainError {
    TrainError::BadCheckpoint { what: what.into() }
}

/// Splits `key=value` tokens of one header line.
fn header_fields(line: &str, expect: &str) -> Result<Vec<(String, String)>, TrainError> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(expect) {
        return Err(bad(format!("expected `{expect}` header line")));
    }
    parts
        .map(|tok| {
            tok.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| bad(format!("malformed token `{tok}`")))
        })
        .collect()
}

fn field<'a>(fields: &'a [(String, String)], key: &str) -> Result<&'a str, TrainError> {
    fields
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| bad(format!("missing field `{key}`")))
}

fn field_num(fields: &[(String, String)], key: &str) -> Result<usize, TrainError> {
    field(fields, key)?
        .parse()
        .map_err(|_| bad(format!("bad number for `{key}`")))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let raw = fs::read(path)?;
    // Four text lines precede the binary block.
    let mut offset = 0usize;
    let mut lines = Vec::with_capacity(4);
    for _ in 0..4 {
        let end = raw[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header"))?;
        let line = std::str::from_utf8(&raw[offset..offset + end])
            .map_err(|_| bad("header is not text"))?;
        lines.push(line.to_string());
        offset += end + 1;
    }
    if lines[0] != "xionet-ckpt v1" {
        return Err(bad(format!("unknown format `{}`", lines[0])));
    }
    let arch_f = header_fields(&lines[1], "arch")?;
    let counts_f = header_fields(&lines[2], "counts")?;
    let binary_f = header_fields(&lines[3], "binary")?;

    let activation = match field(&arch_f, "activation")? {
        "tanh" => Activation::Tanh,
        "relu" => Activation::Relu,
        other => return Err(bad(format!("unknown activation `{other}`"))),
    };
    let dim = field_num(&arch_f, "dim")?;
    let sensors = field_num(&arch_f, "sensors")?;
    let width = field_num(&arch_f, "width")?;
    let depth = field_num(&arch_f, "depth")?;
    let arch = match field(&arch_f, "mode")? {
        "xi" => OperatorSpec::xi(dim, sensors, width, depth, activation),
        "baseline" => OperatorSpec::baseline(dim, sensors, width, depth, activation),
        other => return Err(bad(format!("unknown mode `{other}`"))),
    };
    if field_num(&arch_f, "latent")? != arch.latent() {
        return Err(bad("latent dimension disagrees with width/depth"));
    }

    let steps_done = field_num(&counts_f, "steps")?;
    let n_params = field_num(&counts_f, "params")?;
    let has_adam = field_num(&counts_f, "adam")? != 0;
    let n_history = field_num(&counts_f, "history")?;
    if n_params != arch.param_count() {
        return Err(bad("parameter count disagrees with architecture"));
    }
    let n_bytes = field_num(&binary_f, "bytes")?;
    let expect = 8 * (n_params + if has_adam { 2 * n_params + 4 } else { 0 } + 6 * n_history);
    if n_bytes != expect || raw.len() != offset + n_bytes {
        return Err(bad("binary block length mismatch"));
    }
    let mut doubles = raw[offset..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take = |n: usize| -> Vec<f64> { doubles.by_ref().take(n).collect() };
    let params = take(n_params);
    let adam = if has_adam {
        let m = take(n_params);
        let v = take(n_params);
        let extra = take(4);
        Some(AdamState {
            m,
            v,
            t: extra[0] as u64,
            beta1: extra[1],
            beta2: extra[2],
            eps: extra[3],
        })
    } else {
        None
    };
    let history = (0..n_history)
        .map(|_| {
            let r = take(6);
            HistoryRow {
                step: r[0] as usize,
                lr: r[1],
                total: r[2],
                interior: r[3],
                boundary: r[4],
                interface: r[5],
            }
        })
        .collect();
    Ok(Checkpoint {
        arch,
        params,
        adam,
        steps_done,
        history,
    })
}

/// Writes `history.csv` with one row per optimization step.
pub fn write_history(path: &Path, history: &[HistoryRow]) -> io::Result<()> {
    let mut s = String::from("step,lr,total_loss,loss_interior,loss_boundary,loss_interface\n");
    for r in history {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.lr, r.total, r.interior, r.boundary, r.interface
        ));
    }
    fs::write(path, s)
}

/// Draws `k` distinct indices from `0..n` (all of them, in order, when the
/// budget covers the range).
fn pick(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        (0..n).collect()
    } else {
        rand::seq::index::sample(rng, n, k).into_vec()
    }
}

/// Per-class point subset of one sample's collocation.
fn subset_colloc(rng: &mut ChaCha8Rng, colloc: &CollocationSet, per_class: usize) -> CollocationSet {
    if per_class == 0 {
        return colloc.clone();
    }
    let interior = pick(rng, colloc.interior.len(), per_class)
        .into_iter()
        .map(|i| colloc.interior[i].clone())
        .collect();
    let boundary = pick(rng, colloc.boundary.len(), per_class)
        .into_iter()
        .map(|i| colloc.boundary[i].clone())
        .collect();
    let interface = pick(rng, colloc.interface.len(), per_class)
        .into_iter()
        .map(|i| colloc.interface[i].clone())
        .collect();
    CollocationSet {
        interior,
        boundary,
        interface,
    }
}

/// Splits a batch into at most `workers` contiguous chunks.
fn chunk_len(total: usize, workers: usize) -> usize {
    total.div_ceil(workers).max(1)
}

struct StepLoss {
    grads: Vec<f64>,
    total: f64,
    interior: f64,
    boundary: f64,
    interface: f64,
}

fn physics_step(
    op: &OperatorSpec,
    params: &[f64],
    weights: &LossWeights,
    batch: &[(&ProblemSpec, &CollocationSet)],
    workers: usize,
) -> Result<StepLoss, TrainError> {
    let counts = ClassCounts::of(batch);
    let chunks: Vec<&[(&ProblemSpec, &CollocationSet)]> =
        batch.chunks(chunk_len(batch.len(), workers)).collect();
    let eval = |chunk: &[(&ProblemSpec, &CollocationSet)]| -> Result<StepLoss, TrainError> {
        let mut tape = Tape::new();
        let net = register_network(&mut tape, op, params);
        let loss = loss_physics_normalized(&mut tape, &net, op, weights, chunk, &counts)?;
        let total = tape.value(loss.total)[0];
        let interior = tape.value(loss.interior)[0];
        let boundary = tape.value(loss.boundary)[0];
        let interface = tape.value(loss.interface)[0];
        let grads = tape.gradient(loss.total, op.param_count())?;
        Ok(StepLoss {
            grads,
            total,
            interior,
            boundary,
            interface,
        })
    };
    let parts: Vec<StepLoss> = if chunks.len() == 1 {
        vec![eval(chunks[0])?]
    } else {
        chunks
            .par_iter()
            .map(|c| eval(c))
            .collect::<Result<Vec<_>, _>>()?
    };
    // Fixed-order reduction over chunks.
    let mut acc = StepLoss {
        grads: vec![0.0; op.param_count()],
        total: 0.0,
        interior: 0.0,
        boundary: 0.0,
        interface: 0.0,
    };
    for p in parts {
        for (g, pg) in acc.grads.iter_mut().zip(&p.grads) {
            *g += pg;
        }
        acc.total += p.total;
        acc.interior += p.interior;
        acc.boundary += p.boundary;
        acc.interface += p.interface;
    }
    Ok(acc)
}

/// Owned per-sample buffers behind the borrowed [`DataSample`] views.
struct DataBuffers {
    f: Vec<f64>,
    phi: Option<Vec<f64>>,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

fn data_step(
    op: &OperatorSpec,
    params: &[f64],
    buffers: &[DataBuffers],
    workers: usize,
) -> Result<StepLoss, TrainError> {
    let samples: Vec<DataSample<'_>> = buffers
        .iter()
        .map(|b| DataSample {
            f_sensors: &b.f,
            phi_sensors: b.phi.as_deref(),
            trunk_inputs: &b.inputs,
            targets: &b.targets,
        })
        .collect();
    let total_points: usize = samples.iter().map(|s| s.targets.len()).sum();
    let chunks: Vec<&[DataSample<'_>]> =
        samples.chunks(chunk_len(samples.len(), workers)).collect();
    let eval = |chunk: &[DataSample<'_>]| -> Result<StepLoss, TrainError> {
        let mut tape = Tape::new();
        let net = register_network(&mut tape, op, params);
        let loss = loss_data_normalized(&mut tape, &net, op, chunk, total_points)?;
        let total = tape.value(loss)[0];
        let grads = tape.gradient(loss, op.param_count())?;
        Ok(StepLoss {
            grads,
            total,
            interior: 0.0,
            boundary: 0.0,
            interface: 0.0,
        })
    };
    let parts: Vec<StepLoss> = if chunks.len() == 1 {
        vec![eval(chunks[0])?]
    } else {
        chunks
            .par_iter()
            .map(|c| eval(c))
            .collect::<Result<Vec<_>, _>>()?
    };
    let mut acc = StepLoss {
        grads: vec![0.0; op.param_count()],
        total: 0.0,
        interior: 0.0,
        boundary: 0.0,
        interface: 0.0,
    };
    for p in parts {
        for (g, pg) in acc.grads.iter_mut().zip(&p.grads) {
            *g += pg;
        }
        acc.total += p.total;
    }
    Ok(acc)
}

/// Assembles one sample's supervised minibatch: trunk inputs per network
/// mode (with or without the augmented coordinate) and target values.
fn data_buffers(
    op: &OperatorSpec,
    set: &TrainSet,
    sample: usize,
    point_idx: &[usize],
) -> Result<DataBuffers, TrainError> {
    let s = &set.samples[sample];
    let t = s
        .targets
        .as_ref()
        .ok_or(TrainError::MissingTargets { sample })?;
    let d = s.problem.dim();
    let mut inputs = Vec::with_capacity(point_idx.len() * op.trunk_input_dim());
    let mut targets = Vec::with_capacity(point_idx.len());
    for &j in point_idx {
        inputs.extend_from_slice(&t.points[j * d..(j + 1) * d]);
        if op.mode == NetMode::Xi {
            inputs.push(t.phi[j]);
        }
        targets.push(t.values[j]);
    }
    Ok(DataBuffers {
        f: s.problem.f_sensor_values(),
        phi: match op.mode {
            NetMode::Xi => Some(s.problem.phi_sensor_values()),
            NetMode::Baseline => None,
        },
        inputs,
        targets,
    })
}

/// Runs (or resumes) the optimization and returns the final checkpoint.
/// With an output directory, writes `checkpoint.ckpt` and `history.csv` at
/// the end plus `checkpoint_<step>.ckpt` snapshots on the configured cadence.
pub fn train(
    cfg: &TrainConfig,
    op: &OperatorSpec,
    set: &TrainSet,
    resume: Option<Checkpoint>,
    out_dir: Option<&Path>,
) -> Result<Checkpoint, TrainError> {
    cfg.validate()?;
    let n = set.samples.len();
    if n == 0 {
        return Err(TrainError::InvalidConfig {
            what: "dataset has no samples",
        });
    }
    if op.dim != set.config.example.dim() || op.sensors != set.config.example.sensor_count() {
        return Err(TrainError::ArchitectureMismatch {
            what: format!(
                "network expects dim {} / {} sensors, dataset provides dim {} / {}",
                op.dim,
                op.sensors,
                set.config.example.dim(),
                set.config.example.sensor_count()
            ),
        });
    }
    if cfg.mode == TrainMode::Physics && op.mode == NetMode::Baseline {
        return Err(TrainError::InvalidConfig {
            what: "physics mode needs the augmented (level-set branch) network",
        });
    }
    if cfg.mode == TrainMode::Data {
        if let Some(sample) = set.samples.iter().position(|s| s.targets.is_none()) {
            return Err(TrainError::MissingTargets { sample });
        }
    }

    let (mut params, mut adam, mut history, start) = match resume {
        Some(ck) => {
            if ck.arch != *op {
                return Err(TrainError::ArchitectureMismatch {
                    what: "resume checkpoint was trained with a different architecture".into(),
                });
            }
            let adam = ck.adam.unwrap_or_else(|| AdamState::new(op.param_count()));
            (ck.params, adam, ck.history, ck.steps_done)
        }
        None => (
            init_params(op, cfg.seed_init),
            AdamState::new(op.param_count()),
            Vec::new(),
            0,
        ),
    };

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }

    for step in start..cfg.iterations {
        let lr = lr_at(cfg, step);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed_shuffle, step as u64));
        let chosen = pick(&mut rng, n, cfg.functions_per_step);

        let loss = match cfg.mode {
            TrainMode::Physics => {
                let mut minis: Vec<CollocationSet> = Vec::with_capacity(chosen.len());
                for &i in &chosen {
                    let mini = if cfg.resample_points {
                        let per = |fixed: usize| {
                            if cfg.points_per_class > 0 {
                                cfg.points_per_class.min(fixed)
                            } else {
                                fixed
                            }
                        };
                        sample_collocation(
                            &set.samples[i].problem,
                            per(set.config.n_interior),
                            per(set.config.n_boundary),
                            per(set.config.n_interface),
                            &mut rng,
                        )?
                    } else {
                        subset_colloc(&mut rng, &set.samples[i].colloc, cfg.points_per_class)
                    };
                    minis.push(mini);
                }
                let batch: Vec<(&ProblemSpec, &CollocationSet)> = chosen
                    .iter()
                    .zip(&minis)
                    .map(|(&i, c)| (&set.samples[i].problem, c))
                    .collect();
                physics_step(op, &params, &cfg.weights, &batch, cfg.workers)?
            }
            TrainMode::Data => {
                let mut buffers = Vec::with_capacity(chosen.len());
                for &i in &chosen {
                    let n_pts = set.samples[i]
                        .targets
                        .as_ref()
                        .ok_or(TrainError::MissingTargets { sample: i })?
                        .values
                        .len();
                    let idx = if cfg.points_per_class == 0 {
                        (0..n_pts).collect()
                    } else {
                        pick(&mut rng, n_pts, cfg.points_per_class)
                    };
                    buffers.push(data_buffers(op, set, i, &idx)?);
                }
                data_step(op, &params, &buffers, cfg.workers)?
            }
        };

        adam_step(&mut adam, &mut params, &loss.grads, lr)?;
        history.push(HistoryRow {
            step,
            lr,
            total: loss.total,
            interior: loss.interior,
            boundary: loss.boundary,
            interface: loss.interface,
        });

        if let Some(dir) = out_dir {
            let done = step + 1;
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.iterations
            {
                let snap = Checkpoint {
                    arch: op.clone(),
                    params: params.clone(),
                    adam: Some(adam.clone()),
                    steps_done: done,
                    history: history.clone(),
                };
                save_checkpoint(&dir.join(format!("checkpoint_{done:06}.ckpt")), &snap)?;
            }
        }
    }

    let ck = Checkpoint {
        arch: op.clone(),
        params,
        adam: Some(adam),
        steps_done: cfg.iterations,
        history,
    };
    if let Some(dir) = out_dir {
        save_checkpoint(&dir.join("checkpoint.ckpt"), &ck)?;
        write_history(&dir.join("history.csv"), &ck.history)?;
    }
    Ok(ck)
}
