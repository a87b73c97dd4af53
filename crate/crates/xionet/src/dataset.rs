//! Training/test sets: deterministic generation from seeds and the on-disk
//! dataset directory format.
//!
//! A dataset directory holds `meta` (key = value lines), `sensors.csv` (one
//! row per sample: index, k source values, k level-set values), `colloc.csv`
//! (per-point rows with class and region labels, normals on interface rows),
//! and, when reference targets were requested, `targets.csv`. Everything is
//! reproducible from the seeds in `meta`; the reader rebuilds the per-sample
//! problems from those seeds and takes the point sets from the files.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fieldgen::{
    default_extension, homogenize, mix_seed, problem_for_example, rod_problem_from_source,
    sample_params, ExampleId, ExampleParams, FieldError, ProblemSpec, RodSourceSampler,
    ROD_GRID_NODES,
};
use crate::geom::{phi_eval_jet, region_of, Augmentation, InterfacePoint, Region, Side, INTERFACE_TOL};
use crate::physres::{augmented_coordinate, sample_collocation, CollocationSet, PhysError};
use crate::refsolve::{solve_interface_1d, Grid1D, RefSolveError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Phys(#[from] PhysError),
    #[error(transparent)]
    RefSolve(#[from] RefSolveError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{file}:{line}: {what}")]
    Parse {
        file: &'static str,
        line: usize,
        what: String,
    },
    /// Reference targets need the 1D solver; only the rod family has one.
    #[error("reference targets are only available for {want}, not {got}", want = ExampleId::Rod1d.as_str(), got = .0.as_str())]
    TargetsUnavailable(ExampleId),
}

fn parse_err(file: &'static str, line: usize, what: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        file,
        line,
        what: what.into(),
    }
}

/// Generation recipe for one dataset: family, sizes, and seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub example: ExampleId,
    pub n_samples: usize,
    /// Collocation counts per sample.
    pub n_interior: usize,
    pub n_boundary: usize,
    pub n_interface: usize,
    /// Seed stream for parameter draws and per-sample input functions.
    pub seed_params: u64,
    /// Seed stream for collocation sampling.
    pub seed_points: u64,
    /// Solve each sample with the 1D reference solver and store targets.
    pub with_targets: bool,
    /// Reduce nonzero solution jumps before training (plus-side shift).
    pub homogenized: bool,
    /// When set, every sample uses these parameters instead of random draws
    /// (input-function seeds still vary per sample).
    pub pinned: Option<ExampleParams>,
}

/// Supervised values of one sample at fixed spatial points.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTargets {
    /// Point coordinates, point-major with the spatial dimension as stride.
    pub points: Vec<f64>,
    /// Augmented coordinate Φ(x) per point.
    pub phi: Vec<f64>,
    /// Reference solution value per point.
    pub values: Vec<f64>,
}

/// One input-function sample with its point sets.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub problem: ProblemSpec,
    pub colloc: CollocationSet,
    pub targets: Option<DataTargets>,
}

/// A full dataset in memory.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub config: GenConfig,
    pub samples: Vec<TrainSample>,
}

/// Rebuilds the problem of sample `i` from the dataset seeds. The rod family
/// accepts a pre-factored source sampler so one covariance factorization
/// serves the whole set.
fn build_problem(
    cfg: &GenConfig,
    i: usize,
    param_rng: &mut ChaCha8Rng,
    rod: Option<&RodSourceSampler>,
) -> Result<ProblemSpec, DatasetError> {
    let params = match cfg.pinned {
        Some(p) => p,
        None => sample_params(cfg.example, param_rng),
    };
    let seed = mix_seed(cfg.seed_params, i as u64);
    let base = match (cfg.example, rod) {
        (ExampleId::Rod1d, Some(sampler)) => {
            params.validate()?;
            rod_problem_from_source(params, sampler.source(seed))?
        }
        _ => problem_for_example(cfg.example, params, seed)?,
    };
    if cfg.homogenized {
        let check_seed = mix_seed(cfg.seed_points, (cfg.n_samples + i) as u64);
        let (shifted, _) = homogenize(&base, &default_extension(&base), check_seed)?;
        Ok(shifted)
    } else {
        Ok(base)
    }
}

/// Reference targets for a rod sample: solve the two-material 1D problem on
/// the tabulation grid and read the solution at every collocation point
/// (interior, then boundary, then interface).
fn rod_targets(
    problem: &ProblemSpec,
    colloc: &CollocationSet,
) -> Result<DataTargets, DatasetError> {
    if problem.example != ExampleId::Rod1d {
        return Err(DatasetError::TargetsUnavailable(problem.example));
    }
    let ExampleParams::Rod1d { interface } = problem.params else {
        return Err(DatasetError::TargetsUnavailable(problem.example));
    };
    // Piecewise-constant diffusion: read each side at a representative point.
    let a_plus = problem.diffusion.value(&[1.0], Side::Plus);
    let a_minus = problem.diffusion.value(&[0.0], Side::Minus);
    let grid = Grid1D::uniform(ROD_GRID_NODES - 1);
    let sol = solve_interface_1d(a_plus, a_minus, interface, &problem.source, &grid)?;
    let mut targets = DataTargets {
        points: Vec::new(),
        phi: Vec::new(),
        values: Vec::new(),
    };
    let mut push = |x: &[f64], phi: f64| {
        targets.points.extend_from_slice(x);
        targets.phi.push(phi);
        targets.values.push(sol.value_at(x[0]));
    };
    for (x, _) in &colloc.interior {
        push(x, augmented_coordinate(problem, x));
    }
    for x in &colloc.boundary {
        push(x, augmented_coordinate(problem, x));
    }
    for pt in &colloc.interface {
        push(&pt.x, 0.0);
    }
    Ok(targets)
}

/// Generates the dataset in memory.
pub fn build_train_set(cfg: &GenConfig) -> Result<TrainSet, DatasetError> {
    let rod_sampler = match cfg.example {
        ExampleId::Rod1d => Some(RodSourceSampler::new()?),
        _ => None,
    };
    let mut param_rng = ChaCha8Rng::seed_from_u64(cfg.seed_params);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let problem = build_problem(cfg, i, &mut param_rng, rod_sampler.as_ref())?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed_points, i as u64));
        let colloc = sample_collocation(
            &problem,
            cfg.n_interior,
            cfg.n_boundary,
            cfg.n_interface,
            &mut rng,
        )?;
        let targets = if cfg.with_targets {
            Some(rod_targets(&problem, &colloc)?)
        } else {
            None
        };
        samples.push(TrainSample {
            problem,
            colloc,
            targets,
        });
    }
    Ok(TrainSet {
        config: *cfg,
        samples,
    })
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Flattens a parameter record to the fixed per-family number list.
pub fn params_to_vec(p: &ExampleParams) -> Vec<f64> {
    match *p {
        ExampleParams::Rod1d { interface } => vec![interface],
        ExampleParams::Disk2d { strength, radius } => vec![strength, radius],
        ExampleParams::SquareStar2d {
            p1_plus,
            p2_plus,
            p1_minus,
            p2_minus,
            r1,
            r2,
        } => vec![p1_plus, p2_plus, p1_minus, p2_minus, r1, r2],
        ExampleParams::ShellStar3d { radius, amps } => {
            let mut v = vec![radius];
            for (a, f, ph) in amps {
                v.extend_from_slice(&[a, f, ph]);
            }
            v
        }
        ExampleParams::Ball6d { radius } => vec![radius],
    }
}

/// Rebuilds a parameter record from its flat number list.
pub fn params_from_vec(example: ExampleId, v: &[f64]) -> Option<ExampleParams> {
    let p = match (example, v.len()) {
        (ExampleId::Rod1d, 1) => ExampleParams::Rod1d { interface: v[0] },
        (ExampleId::Disk2d, 2) => ExampleParams::Disk2d {
            strength: v[0],
            radius: v[1],
        },
        (ExampleId::SquareStar2d, 6) => ExampleParams::SquareStar2d {
            p1_plus: v[0],
            p2_plus: v[1],
            p1_minus: v[2],
            p2_minus: v[3],
            r1: v[4],
            r2: v[5],
        },
        (ExampleId::ShellStar3d, 10) => ExampleParams::ShellStar3d {
            radius: v[0],
            amps: [
                (v[1], v[2], v[3]),
                (v[4], v[5], v[6]),
                (v[7], v[8], v[9]),
            ],
        },
        (ExampleId::Ball6d, 1) => ExampleParams::Ball6d { radius: v[0] },
        _ => return None,
    };
    Some(p)
}

fn region_label(r: Region) -> &'static str {
    match r {
        Region::Plus => "plus",
        Region::Minus => "minus",
        Region::OnInterface => "interface",
    }
}

fn side_label(s: Side) -> &'static str {
    match s {
        Side::Plus => "plus",
        Side::Minus => "minus",
    }
}

/// Admissible parameter intervals recorded in `meta` for provenance.
fn range_lines(example: ExampleId) -> Vec<(&'static str, String)> {
    use crate::fieldgen as fg;
    let pair = |(lo, hi): (f64, f64)| format!("{lo} {hi}");
    match example {
        ExampleId::Rod1d => vec![("range_interface", pair(fg::ROD_INTERFACE))],
        ExampleId::Disk2d => vec![
            ("range_strength", pair(fg::DISK_STRENGTH)),
            ("range_radius", pair(fg::DISK_RADIUS)),
        ],
        ExampleId::SquareStar2d => vec![
            ("range_p1", pair(fg::STAR_AMPLITUDE)),
            ("range_p2", pair(fg::STAR_SHARPNESS)),
            ("range_r1", pair(fg::STAR_BASE_RADIUS)),
            ("range_r2", pair(fg::STAR_WOBBLE_INV)),
        ],
        ExampleId::ShellStar3d => {
            let mut v = vec![("range_radius", pair(fg::SHELL_RADIUS))];
            v.push(("range_amp", format!("{:?}", fg::SHELL_AMP)));
            v.push(("range_freq", format!("{:?}", fg::SHELL_FREQ)));
            v.push(("range_phase", format!("{:?}", fg::SHELL_PHASE)));
            v
        }
        ExampleId::Ball6d => vec![("range_radius", pair(fg::BALL_RADIUS))],
    }
}

fn meta_string(cfg: &GenConfig) -> String {
    let mut s = String::new();
    s.push_str("format = xionet-dataset v1\n");
    s.push_str(&format!("example = {}\n", cfg.example.as_str()));
    s.push_str(&format!("n_samples = {}\n", cfg.n_samples));
    s.push_str(&format!("sensor_count = {}\n", cfg.example.sensor_count()));
    s.push_str(&format!("n_interior = {}\n", cfg.n_interior));
    s.push_str(&format!("n_boundary = {}\n", cfg.n_boundary));
    s.push_str(&format!("n_interface = {}\n", cfg.n_interface));
    s.push_str(&format!("seed_params = {}\n", cfg.seed_params));
    s.push_str(&format!("seed_points = {}\n", cfg.seed_points));
    s.push_str(&format!("with_targets = {}\n", cfg.with_targets));
    s.push_str(&format!("homogenized = {}\n", cfg.homogenized));
    match &cfg.pinned {
        None => s.push_str("pinned = none\n"),
        Some(p) => {
            let nums: Vec<String> = params_to_vec(p).iter().map(|v| v.to_string()).collect();
            s.push_str(&format!("pinned = {}\n", nums.join(" ")));
        }
    }
    for (k, v) in range_lines(cfg.example) {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s
}

fn sensors_csv(set: &TrainSet) -> String {
    let k = set.config.example.sensor_count();
    let mut s = String::from("sample");
    for i in 0..k {
        s.push_str(&format!(",f{i}"));
    }
    for i in 0..k {
        s.push_str(&format!(",phi{i}"));
    }
    s.push('\n');
    for (i, sample) in set.samples.iter().enumerate() {
        s.push_str(&i.to_string());
        for v in sample.problem.f_sensor_values() {
            s.push_str(&format!(",{v}"));
        }
        for v in sample.problem.phi_sensor_values() {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

fn colloc_csv(set: &TrainSet) -> String {
    let d = set.config.example.dim();
    let mut s = String::from("sample,class,region");
    for i in 0..d {
        s.push_str(&format!(",x{}", i + 1));
    }
    for i in 0..d {
        s.push_str(&format!(",n{}", i + 1));
    }
    s.push('\n');
    let mut row = |i: usize, class: &str, region: &str, x: &[f64], normal: Option<&[f64]>| {
        s.push_str(&format!("{i},{class},{region}"));
        for v in x {
            s.push_str(&format!(",{v}"));
        }
        match normal {
            Some(n) => {
                for v in n {
                    s.push_str(&format!(",{v}"));
                }
            }
            None => s.push_str(&",".repeat(d)),
        }
        s.push('\n');
    };
    for (i, sample) in set.samples.iter().enumerate() {
        for (x, side) in &sample.colloc.interior {
            row(i, "interior", side_label(*side), x, None);
        }
        for x in &sample.colloc.boundary {
            let region = region_of(&sample.problem.level_set, x, INTERFACE_TOL);
            row(i, "boundary", region_label(region), x, None);
        }
        for pt in &sample.colloc.interface {
            row(i, "interface", "interface", &pt.x, Some(&pt.normal));
        }
    }
    s
}

fn targets_csv(set: &TrainSet) -> String {
    let d = set.config.example.dim();
    let mut s = String::from("sample");
    for i in 0..d {
        s.push_str(&format!(",x{}", i + 1));
    }
    s.push_str(",u\n");
    for (i, sample) in set.samples.iter().enumerate() {
        let Some(t) = &sample.targets else { continue };
        for (j, u) in t.values.iter().enumerate() {
            s.push_str(&i.to_string());
            for v in &t.points[j * d..(j + 1) * d] {
                s.push_str(&format!(",{v}"));
            }
            s.push_str(&format!(",{u}\n"));
        }
    }
    s
}

/// Generates the dataset and writes the directory; returns the in-memory set.
pub fn write_dataset(dir: &Path, cfg: &GenConfig) -> Result<TrainSet, DatasetError> {
    let set = build_train_set(cfg)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("meta"), meta_string(cfg))?;
    fs::write(dir.join("sensors.csv"), sensors_csv(&set))?;
    fs::write(dir.join("colloc.csv"), colloc_csv(&set))?;
    if cfg.with_targets {
        fs::write(dir.join("targets.csv"), targets_csv(&set))?;
    }
    Ok(set)
}

fn parse_meta(text: &str) -> Result<GenConfig, DatasetError> {
    let mut example = None;
    let mut fields: std::collections::HashMap<&str, String> = std::collections::HashMap::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(parse_err("meta", ln + 1, "expected `key = value`"));
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "format" => {
                if value != "xionet-dataset v1" {
                    return Err(parse_err("meta", ln + 1, format!("unknown format `{value}`")));
                }
            }
            "example" => {
                example = Some(ExampleId::parse(value).ok_or_else(|| {
                    parse_err("meta", ln + 1, format!("unknown example `{value}`"))
                })?);
            }
            _ if key.starts_with("range_") => {} // provenance only
            _ => {
                fields.insert(
                    match key {
                        "n_samples" => "n_samples",
                        "sensor_count" => "sensor_count",
                        "n_interior" => "n_interior",
                        "n_boundary" => "n_boundary",
                        "n_interface" => "n_interface",
                        "seed_params" => "seed_params",
                        "seed_points" => "seed_points",
                        "with_targets" => "with_targets",
                        "homogenized" => "homogenized",
                        "pinned" => "pinned",
                        _ => return Err(parse_err("meta", ln + 1, format!("unknown key `{key}`"))),
                    },
                    value.to_string(),
                );
            }
        }
    }
    let example = example.ok_or_else(|| parse_err("meta", 0, "missing `example`"))?;
    let get = |k: &str| -> Result<String, DatasetError> {
        fields
            .get(k)
            .cloned()
            .ok_or_else(|| parse_err("meta", 0, format!("missing `{k}`")))
    };
    let num = |k: &str| -> Result<u64, DatasetError> {
        get(k)?
            .parse()
            .map_err(|_| parse_err("meta", 0, format!("bad integer for `{k}`")))
    };
    let flag = |k: &str| -> Result<bool, DatasetError> {
        get(k)?
            .parse()
            .map_err(|_| parse_err("meta", 0, format!("bad boolean for `{k}`")))
    };
    let pinned = match get("pinned")?.as_str() {
        "none" => None,
        list => {
            let nums: Result<Vec<f64>, _> = list.split_whitespace().map(str::parse).collect();
            let nums =
                nums.map_err(|_| parse_err("meta", 0, "bad number in `pinned`".to_string()))?;
            Some(params_from_vec(example, &nums).ok_or_else(|| {
                parse_err("meta", 0, "wrong `pinned` arity for example".to_string())
            })?)
        }
    };
    if num("sensor_count")? as usize != example.sensor_count() {
        return Err(parse_err("meta", 0, "sensor_count does not match example"));
    }
    Ok(GenConfig {
        example,
        n_samples: num("n_samples")? as usize,
        n_interior: num("n_interior")? as usize,
        n_boundary: num("n_boundary")? as usize,
        n_interface: num("n_interface")? as usize,
        seed_params: num("seed_params")?,
        seed_points: num("seed_points")?,
        with_targets: flag("with_targets")?,
        homogenized: flag("homogenized")?,
        pinned,
    })
}

fn parse_f64(file: &'static str, ln: usize, s: &str) -> Result<f64, DatasetError> {
    s.parse()
        .map_err(|_| parse_err(file, ln, format!("bad number `{s}`")))
}

/// Replicates the interface sampler's one-sided gradients for a point read
/// back from disk.
fn interface_point_from_x(
    problem: &ProblemSpec,
    x: Vec<f64>,
    normal: Vec<f64>,
) -> Result<InterfacePoint, DatasetError> {
    let jet = phi_eval_jet(&problem.level_set, &x).map_err(PhysError::from)?;
    let grad_phi_minus = match problem.augmentation {
        Augmentation::Abs => jet.grad.iter().map(|g| -g).collect(),
        Augmentation::Relu => vec![0.0; x.len()],
    };
    Ok(InterfacePoint {
        x,
        normal,
        grad_phi_plus: jet.grad,
        grad_phi_minus,
    })
}

/// Reads a dataset directory back into memory, rebuilding problems from the
/// recorded seeds and point sets from the CSV files.
pub fn read_dataset(dir: &Path) -> Result<TrainSet, DatasetError> {
    let cfg = parse_meta(&fs::read_to_string(dir.join("meta"))?)?;
    let d = cfg.example.dim();

    let rod_sampler = match cfg.example {
        ExampleId::Rod1d => Some(RodSourceSampler::new()?),
        _ => None,
    };
    let mut param_rng = ChaCha8Rng::seed_from_u64(cfg.seed_params);
    let mut problems = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        problems.push(build_problem(&cfg, i, &mut param_rng, rod_sampler.as_ref())?);
    }

    let mut collocs: Vec<CollocationSet> = problems
        .iter()
        .map(|_| CollocationSet {
            interior: Vec::new(),
            boundary: Vec::new(),
            interface: Vec::new(),
        })
        .collect();
    let colloc_text = fs::read_to_string(dir.join("colloc.csv"))?;
    for (ln, line) in colloc_text.lines().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 3 + 2 * d {
            return Err(parse_err("colloc.csv", ln + 1, "wrong column count"));
        }
        let idx: usize = cells[0]
            .parse()
            .map_err(|_| parse_err("colloc.csv", ln + 1, "bad sample index"))?;
        if idx >= problems.len() {
            return Err(parse_err("colloc.csv", ln + 1, "sample index out of range"));
        }
        let mut x = Vec::with_capacity(d);
        for c in &cells[3..3 + d] {
            x.push(parse_f64("colloc.csv", ln + 1, c)?);
        }
        match cells[1] {
            "interior" => {
                let side = match cells[2] {
                    "plus" => Side::Plus,
                    "minus" => Side::Minus,
                    other => {
                        return Err(parse_err(
                            "colloc.csv",
                            ln + 1,
                            format!("bad region `{other}`"),
                        ))
                    }
                };
                collocs[idx].interior.push((x, side));
            }
            "boundary" => collocs[idx].boundary.push(x),
            "interface" => {
                let mut normal = Vec::with_capacity(d);
                for c in &cells[3 + d..3 + 2 * d] {
                    normal.push(parse_f64("colloc.csv", ln + 1, c)?);
                }
                let pt = interface_point_from_x(&problems[idx], x, normal)?;
                collocs[idx].interface.push(pt);
            }
            other => {
                return Err(parse_err(
                    "colloc.csv",
                    ln + 1,
                    format!("bad class `{other}`"),
                ))
            }
        }
    }
    for (i, c) in collocs.iter().enumerate() {
        if c.interior.len() != cfg.n_interior
            || c.boundary.len() != cfg.n_boundary
            || c.interface.len() != cfg.n_interface
        {
            return Err(parse_err(
                "colloc.csv",
                0,
                format!("sample {i} point counts disagree with meta"),
            ));
        }
    }

    let mut targets: Vec<Option<DataTargets>> = problems.iter().map(|_| None).collect();
    if cfg.with_targets {
        let text = fs::read_to_string(dir.join("targets.csv"))?;
        for (ln, line) in text.lines().enumerate().skip(1) {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 2 + d {
                return Err(parse_err("targets.csv", ln + 1, "wrong column count"));
            }
            let idx: usize = cells[0]
                .parse()
                .map_err(|_| parse_err("targets.csv", ln + 1, "bad sample index"))?;
            if idx >= problems.len() {
                return Err(parse_err("targets.csv", ln + 1, "sample index out of range"));
            }
            let entry = targets[idx].get_or_insert_with(|| DataTargets {
                points: Vec::new(),
                phi: Vec::new(),
                values: Vec::new(),
            });
            let mut x = Vec::with_capacity(d);
            for c in &cells[1..1 + d] {
                x.push(parse_f64("targets.csv", ln + 1, c)?);
            }
            entry.phi.push(augmented_coordinate(&problems[idx], &x));
            entry.points.extend_from_slice(&x);
            entry
                .values
                .push(parse_f64("targets.csv", ln + 1, cells[1 + d])?);
        }
    }
    // Interface rows of the target table sit at z = 0 by construction; the
    // recomputed Φ can be a rounding step away from zero, so pin it.
    if cfg.with_targets {
        let n_front = cfg.n_interior + cfg.n_boundary;
        for t in targets.iter_mut().flatten() {
            for j in n_front..t.phi.len() {
                t.phi[j] = 0.0;
            }
        }
    }

    let samples = problems
        .into_iter()
        .zip(collocs)
        .zip(targets)
        .map(|((problem, colloc), targets)| TrainSample {
            problem,
            colloc,
            targets,
        })
        .collect();
    Ok(TrainSet {
        config: cfg,
        samples,
    })
}
