//! Held-out evaluation of trained operators: deterministic test grids,
//! per-sample relative L² errors against closed forms or the 1D reference
//! solver, aggregate statistics, and CSV export of errors and field slices.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::TrainSet;
use crate::fieldgen::{
    default_extension, ExampleId, ExampleParams, ProblemSpec, Recover, ROD_GRID_NODES,
};
use crate::geom::{region_of, Domain, LevelSet, Region, Side, INTERFACE_TOL};
use crate::opnet::{forward_values, NetMode, OperatorSpec};
use crate::physres::augmented_coordinate;
use crate::refsolve::{solve_interface_1d, Grid1D, RefSolveError};
use crate::trainer::Checkpoint;

#[derive(Debug, Error)]
pub enum ReportError {
    /// Relative error is undefined against an identically-zero reference.
    #[error("reference field has zero norm")]
    ZeroReference,
    #[error("prediction/reference length mismatch: {predicted} vs {reference}")]
    LengthMismatch { predicted: usize, reference: usize },
    #[error("checkpoint does not fit the dataset: {what}")]
    ArchitectureMismatch { what: String },
    #[error("sample {sample} has no reference solution (no closed form, no 1D solver route)")]
    NoReference { sample: usize },
    #[error("test grid contains no points")]
    EmptyGrid,
    #[error("dataset contains no samples")]
    EmptySet,
    #[error(transparent)]
    RefSolve(#[from] RefSolveError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Relative L² distance: √mean((p−r)²) / √mean(r²).
pub fn relative_l2(predicted: &[f64], reference: &[f64]) -> Result<f64, ReportError> {
    if predicted.len() != reference.len() {
        return Err(ReportError::LengthMismatch {
            predicted: predicted.len(),
            reference: reference.len(),
        });
    }
    let n = reference.len() as f64;
    let num = predicted
        .iter()
        .zip(reference)
        .map(|(p, r)| (p - r) * (p - r))
        .sum::<f64>()
        / n;
    let den = reference.iter().map(|r| r * r).sum::<f64>() / n;
    // Catches the empty input too: 0/0 is NaN and fails the comparison.
    if !(den > 0.0) {
        return Err(ReportError::ZeroReference);
    }
    Ok(num.sqrt() / den.sqrt())
}

/// Deterministic evaluation points: inside the domain, off the interface,
/// labeled with the side each point falls on.
#[derive(Debug, Clone)]
pub struct TestGrid {
    pub dim: usize,
    /// Point-major coordinates with stride `dim`.
    pub points: Vec<f64>,
    pub sides: Vec<Side>,
}

impl TestGrid {
    pub fn len(&self) -> usize {
        self.sides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sides.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Equispaced lattice over the bounding box, endpoints included,
    /// restricted to the domain; nodes within [`INTERFACE_TOL`] of the
    /// interface are dropped.
    pub fn lattice(domain: &Domain, ls: &LevelSet, per_axis: usize) -> TestGrid {
        assert!(per_axis >= 2, "lattice needs at least two nodes per axis");
        let bbox = domain.bbox();
        let dim = bbox.len();
        let mut points = Vec::new();
        let mut sides = Vec::new();
        let mut idx = vec![0usize; dim];
        let mut x = vec![0.0; dim];
        loop {
            for a in 0..dim {
                let (lo, hi) = bbox[a];
                x[a] = lo + (hi - lo) * idx[a] as f64 / (per_axis - 1) as f64;
            }
            if domain.contains(&x) {
                if let Some(side) = region_of(ls, &x, INTERFACE_TOL).side() {
                    points.extend_from_slice(&x);
                    sides.push(side);
                }
            }
            // Odometer increment, first axis fastest.
            let mut a = 0;
            loop {
                if a == dim {
                    return TestGrid { dim, points, sides };
                }
                idx[a] += 1;
                if idx[a] < per_axis {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
        }
    }

    /// Fixed-seed uniform cloud for domains where a full lattice is
    /// impractical (the 6D ball). Rejection-samples the bounding box until
    /// `n` admissible points are collected.
    pub fn monte_carlo(domain: &Domain, ls: &LevelSet, n: usize, seed: u64) -> TestGrid {
        let bbox = domain.bbox();
        let dim = bbox.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(n * dim);
        let mut sides = Vec::with_capacity(n);
        let mut x = vec![0.0; dim];
        while sides.len() < n {
            for a in 0..dim {
                let (lo, hi) = bbox[a];
                x[a] = rng.random_range(lo..hi);
            }
            if !domain.contains(&x) {
                continue;
            }
            if let Some(side) = region_of(ls, &x, INTERFACE_TOL).side() {
                points.extend_from_slice(&x);
                sides.push(side);
            }
        }
        TestGrid { dim, points, sides }
    }
}

/// Cloud size used where lattices are impractical (spatial dimension > 3).
pub const MONTE_CARLO_POINTS: usize = 4096;
const MONTE_CARLO_SEED: u64 = 0x7e57;

/// Default per-axis lattice resolution (1D/2D/3D) or cloud size (higher).
pub fn default_resolution(dim: usize) -> usize {
    match dim {
        1 => 1001,
        2 => 201,
        3 => 61,
        _ => MONTE_CARLO_POINTS,
    }
}

/// Evaluation grid of a problem: lattice up to 3D, uniform cloud beyond.
pub fn test_grid(problem: &ProblemSpec, resolution: Option<usize>) -> TestGrid {
    let dim = problem.dim();
    let res = resolution.unwrap_or_else(|| default_resolution(dim));
    if dim > 3 {
        TestGrid::monte_carlo(&problem.domain, &problem.level_set, res, MONTE_CARLO_SEED)
    } else {
        TestGrid::lattice(&problem.domain, &problem.level_set, res)
    }
}

fn region_from(side: Side) -> Region {
    match side {
        Side::Plus => Region::Plus,
        Side::Minus => Region::Minus,
    }
}

/// Reference values in the trained (possibly shifted) variables: the closed
/// form when the problem records one, else the 1D solver for rod problems.
fn reference_values(
    problem: &ProblemSpec,
    grid: &TestGrid,
    sample: usize,
) -> Result<Vec<f64>, ReportError> {
    if let Some(exact) = &problem.exact {
        return Ok((0..grid.len())
            .map(|i| exact.value(grid.point(i), grid.sides[i]))
            .collect());
    }
    if problem.example == ExampleId::Rod1d {
        let a_plus = problem.diffusion.value(&[1.0], Side::Plus);
        let a_minus = problem.diffusion.value(&[0.0], Side::Minus);
        let ExampleParams::Rod1d { interface } = problem.params else {
            unreachable!("rod problems carry rod parameters");
        };
        let grid1 = Grid1D::uniform(ROD_GRID_NODES - 1);
        let sol = solve_interface_1d(a_plus, a_minus, interface, &problem.source, &grid1)?;
        return Ok((0..grid.len()).map(|i| sol.value_at(grid.points[i])).collect());
    }
    Err(ReportError::NoReference { sample })
}

/// Reference values mapped back to the original solution variables.
fn recovered_reference(
    problem: &ProblemSpec,
    recover: &Recover,
    grid: &TestGrid,
    sample: usize,
) -> Result<Vec<f64>, ReportError> {
    let raw = reference_values(problem, grid, sample)?;
    Ok(raw
        .into_iter()
        .enumerate()
        .map(|(i, w)| recover.apply(grid.point(i), region_from(grid.sides[i]), w))
        .collect())
}

const FORWARD_CHUNK: usize = 2048;

/// Network predictions at the grid points, mapped back to the original
/// solution variables.
fn predict_values(
    arch: &OperatorSpec,
    params: &[f64],
    problem: &ProblemSpec,
    recover: &Recover,
    grid: &TestGrid,
) -> Vec<f64> {
    let f = problem.f_sensor_values();
    let phi = match arch.mode {
        NetMode::Xi => Some(problem.phi_sensor_values()),
        NetMode::Baseline => None,
    };
    let din = arch.trunk_input_dim();
    let mut out = Vec::with_capacity(grid.len());
    let mut start = 0;
    while start < grid.len() {
        let stop = (start + FORWARD_CHUNK).min(grid.len());
        let mut inputs = Vec::with_capacity((stop - start) * din);
        for i in start..stop {
            let x = grid.point(i);
            inputs.extend_from_slice(x);
            if matches!(arch.mode, NetMode::Xi) {
                inputs.push(augmented_coordinate(problem, x));
            }
        }
        let values = forward_values(arch, params, &f, phi.as_deref(), &inputs);
        for (j, w) in values.into_iter().enumerate() {
            let i = start + j;
            out.push(recover.apply(grid.point(i), region_from(grid.sides[i]), w));
        }
        start = stop;
    }
    out
}

/// Aggregate evaluation result of one checkpoint over one dataset.
#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Relative L² error per sample, in dataset order.
    pub per_sample: Vec<f64>,
    pub mean: f64,
    pub max: f64,
    /// Trainable parameter count of the evaluated network.
    pub param_count: usize,
    /// Grid size of the first sample (samples share a resolution, but the
    /// admissible-point count can differ with the interface shape).
    pub grid_points: usize,
    pub runtime_seconds: f64,
}

/// Evaluates a checkpoint on every sample of `set` and optionally writes
/// `errors.csv` (one row per sample) plus `field_<i>.csv` point tables for
/// the requested sample indices. Homogenized datasets are mapped back to the
/// original solution variables — predictions and references alike — before
/// the error is taken.
pub fn eval_operator(
    ck: &Checkpoint,
    set: &TrainSet,
    resolution: Option<usize>,
    out_dir: Option<&Path>,
    export_fields: &[usize],
) -> Result<EvalReport, ReportError> {
    let start = Instant::now();
    if set.samples.is_empty() {
        return Err(ReportError::EmptySet);
    }
    let dim = set.config.example.dim();
    if ck.arch.dim != dim {
        return Err(ReportError::ArchitectureMismatch {
            what: format!("network dim {} vs dataset dim {}", ck.arch.dim, dim),
        });
    }
    let sensors = set.config.example.sensor_count();
    if ck.arch.sensors != sensors {
        return Err(ReportError::ArchitectureMismatch {
            what: format!(
                "network sensor count {} vs dataset sensor count {}",
                ck.arch.sensors, sensors
            ),
        });
    }
    type FieldRows = (TestGrid, Vec<f64>, Vec<f64>);
    let evaluated: Vec<(f64, usize, Option<FieldRows>)> = set
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, sample)| {
            let problem = &sample.problem;
            let grid = test_grid(problem, resolution);
            if grid.is_empty() {
                return Err(ReportError::EmptyGrid);
            }
            let recover = if set.config.homogenized {
                Recover::for_extension(&default_extension(problem))
            } else {
                Recover::identity()
            };
            let refs = recovered_reference(problem, &recover, &grid, i)?;
            let preds = predict_values(&ck.arch, &ck.params, problem, &recover, &grid);
            let rel = relative_l2(&preds, &refs)?;
            let n = grid.len();
            let rows = if export_fields.contains(&i) {
                Some((grid, preds, refs))
            } else {
                None
            };
            Ok((rel, n, rows))
        })
        .collect::<Result<_, _>>()?;
    let per_sample: Vec<f64> = evaluated.iter().map(|(r, _, _)| *r).collect();
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    let max = per_sample.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let mut errors = String::from("sample,rel_l2\n");
        for (i, r) in per_sample.iter().enumerate() {
            errors.push_str(&format!("{i},{r:.16e}\n"));
        }
        fs::write(dir.join("errors.csv"), errors)?;
        for (i, (_, _, rows)) in evaluated.iter().enumerate() {
            let Some((grid, preds, refs)) = rows else {
                continue;
            };
            let mut table = String::new();
            for a in 0..dim {
                table.push_str(&format!("x{},", a + 1));
            }
            table.push_str("pred,ref,abs_err\n");
            for k in 0..grid.len() {
                for c in grid.point(k) {
                    table.push_str(&format!("{c:.16e},"));
                }
                let err = (preds[k] - refs[k]).abs();
                table.push_str(&format!("{:.16e},{:.16e},{err:.16e}\n", preds[k], refs[k]));
            }
            fs::write(dir.join(format!("field_{i}.csv")), table)?;
        }
    }
    Ok(EvalReport {
        per_sample,
        mean,
        max,
        param_count: ck.arch.param_count(),
        grid_points: evaluated[0].1,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}
