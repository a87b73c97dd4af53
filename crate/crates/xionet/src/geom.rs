//! Interface geometry: level-set families, augmentation coordinates, region
//! classification, and point samplers.
//!
//! A level set φ partitions the computational domain into Ω⁺ (φ > 0), Ω⁻
//! (φ < 0) and the interface Γ (φ = 0). The augmentation coordinate fed to
//! the network trunk is Φ = |φ| or Φ = max(φ, 0); its one-sided gradients and
//! Laplacians are obtained from jets of the closed-form φ programs. Samplers
//! cover every experiment domain (unit interval, disk, square, spherical
//! shell, 6-ball) and are fully determined by the caller's random state.

use crate::diffcore::{jet_eval_all, Scalar, ScalarProgram};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Classification tolerance on |φ|: closer than this counts as on Γ.
pub const INTERFACE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("level-set derivatives are singular at {point:?}")]
    SingularPoint { point: Vec<f64> },
    #[error("level-set gradient is degenerate (|∇φ| < 1e-12) at {point:?}")]
    DegenerateNormal { point: Vec<f64> },
}

/// Closed-form level-set families used by the experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum LevelSet {
    /// φ = x − p on the unit interval.
    Affine1d { p: f64 },
    /// φ = x² + y² − r0².
    Circle { r0: f64 },
    /// φ = r − r1 − sin(5θ)/r2 in polar form; singular derivatives at the
    /// origin.
    PolarStar2d { r1: f64, r2: f64 },
    /// φ = r − r0·(1 + ((x²+y²)/r²)²·Σ t_k·cos(n_k(θ − θ_k))); singular on
    /// the whole z-axis. `amps` holds (t_k, n_k, θ_k).
    Star3d { r0: f64, amps: [(f64, f64, f64); 3] },
    /// φ = ‖x‖² − r0² in `dim` dimensions.
    SphereNd { dim: usize, r0: f64 },
}

impl LevelSet {
    pub fn dim(&self) -> usize {
        match self {
            LevelSet::Affine1d { .. } => 1,
            LevelSet::Circle { .. } | LevelSet::PolarStar2d { .. } => 2,
            LevelSet::Star3d { .. } => 3,
            LevelSet::SphereNd { dim, .. } => *dim,
        }
    }

    /// Star families force the one-sided (relu) augmentation because their
    /// derivatives blow up at interior singular points; the smooth families
    /// default to the absolute-value form.
    pub fn default_augmentation(&self) -> Augmentation {
        match self {
            LevelSet::PolarStar2d { .. } | LevelSet::Star3d { .. } => Augmentation::Relu,
            _ => Augmentation::Abs,
        }
    }
}

impl ScalarProgram for LevelSet {
    fn arity(&self) -> usize {
        self.dim()
    }

    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        match self {
            LevelSet::Affine1d { p } => x[0].clone() - S::from_f64(*p),
            LevelSet::Circle { r0 } => {
                x[0].clone() * x[0].clone() + x[1].clone() * x[1].clone() - S::from_f64(r0 * r0)
            }
            LevelSet::PolarStar2d { r1, r2 } => {
                let r = (x[0].clone() * x[0].clone() + x[1].clone() * x[1].clone()).sqrt();
                let theta = x[1].clone().atan2(x[0].clone());
                let wave = (theta * S::from_f64(5.0)).sin() * S::from_f64(1.0 / r2);
                r - S::from_f64(*r1) - wave
            }
            LevelSet::Star3d { r0, amps } => {
                let rho2 = x[0].clone() * x[0].clone() + x[1].clone() * x[1].clone();
                let rsq = rho2.clone() + x[2].clone() * x[2].clone();
                let r = rsq.clone().sqrt();
                let theta = x[1].clone().atan2(x[0].clone());
                let ratio = rho2 / rsq;
                let ratio2 = ratio.clone() * ratio;
                let mut shape = S::from_f64(0.0);
                for &(t_k, n_k, th_k) in amps {
                    let arg = (theta.clone() - S::from_f64(th_k)) * S::from_f64(n_k);
                    shape = shape + arg.cos() * S::from_f64(t_k);
                }
                r - (ratio2 * shape + S::from_f64(1.0)) * S::from_f64(*r0)
            }
            LevelSet::SphereNd { dim, r0 } => {
                let mut s = S::from_f64(-r0 * r0);
                for xi in x.iter().take(*dim) {
                    s = s + xi.clone() * xi.clone();
                }
                s
            }
        }
    }
}

/// Level-set value and derivatives at a point.
#[derive(Debug, Clone)]
pub struct PhiJet {
    pub phi: f64,
    pub grad: Vec<f64>,
    /// Upper triangle of the Hessian in jet storage order.
    pub hess: Vec<f64>,
    pub lap: f64,
}

/// Evaluates φ with gradient and Hessian; singular points (flagged kinks or
/// non-finite derivatives) are rejected.
pub fn phi_eval_jet(ls: &LevelSet, x: &[f64]) -> Result<PhiJet, GeomError> {
    let jet = jet_eval_all(ls, x);
    let finite = jet.grad.iter().chain(jet.hess.iter()).all(|v| v.is_finite());
    if jet.nondifferentiable || !finite {
        return Err(GeomError::SingularPoint { point: x.to_vec() });
    }
    let lap = (0..x.len()).map(|a| jet.d2(a, a)).sum();
    Ok(PhiJet {
        phi: jet.val,
        grad: jet.grad,
        hess: jet.hess,
        lap,
    })
}

pub fn phi_value(ls: &LevelSet, x: &[f64]) -> f64 {
    ls.eval(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Plus,
    Minus,
    OnInterface,
}

impl Region {
    pub fn side(self) -> Option<Side> {
        match self {
            Region::Plus => Some(Side::Plus),
            Region::Minus => Some(Side::Minus),
            Region::OnInterface => None,
        }
    }
}

/// Sign classification of φ(x) with tolerance `tol` around the interface.
pub fn region_of(ls: &LevelSet, x: &[f64], tol: f64) -> Region {
    debug_assert!(tol >= 0.0);
    let phi = phi_value(ls, x);
    if phi > tol {
        Region::Plus
    } else if phi < -tol {
        Region::Minus
    } else {
        Region::OnInterface
    }
}

/// How the level set enters the trunk input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augmentation {
    /// Φ = |φ|: both subdomains see a positive fold coordinate.
    Abs,
    /// Φ = max(φ, 0): identically zero (with zero derivatives) in Ω⁻.
    Relu,
}

impl Augmentation {
    /// Augmented coordinate value at a point (side-independent).
    pub fn value(&self, phi: f64) -> f64 {
        match self {
            Augmentation::Abs => phi.abs(),
            Augmentation::Relu => phi.max(0.0),
        }
    }
}

/// One-sided augmentation data (Φ, ∇Φ_side, ΔΦ_side).
#[derive(Debug, Clone, PartialEq)]
pub struct AugEval {
    pub phi_aug: f64,
    pub grad: Vec<f64>,
    pub lap: f64,
}

/// Evaluates the augmentation coordinate and its one-sided derivatives.
///
/// The relu form never touches φ's derivatives on the Minus side, which is
/// what makes the singular star families usable.
pub fn aug_eval(
    ls: &LevelSet,
    aug: Augmentation,
    x: &[f64],
    side: Side,
) -> Result<AugEval, GeomError> {
    if aug == Augmentation::Relu && side == Side::Minus {
        return Ok(AugEval {
            phi_aug: 0.0,
            grad: vec![0.0; ls.dim()],
            lap: 0.0,
        });
    }
    let jet = phi_eval_jet(ls, x)?;
    match (aug, side) {
        (Augmentation::Abs, Side::Plus) => Ok(AugEval {
            phi_aug: jet.phi.abs(),
            grad: jet.grad,
            lap: jet.lap,
        }),
        (Augmentation::Abs, Side::Minus) => Ok(AugEval {
            phi_aug: jet.phi.abs(),
            grad: jet.grad.iter().map(|g| -g).collect(),
            lap: -jet.lap,
        }),
        (Augmentation::Relu, Side::Plus) => Ok(AugEval {
            phi_aug: jet.phi,
            grad: jet.grad,
            lap: jet.lap,
        }),
        (Augmentation::Relu, Side::Minus) => unreachable!("handled above"),
    }
}

/// A point on Γ with its unit normal (Ω⁻ → Ω⁺) and the one-sided
/// augmentation gradients used in the flux-jump condition.
#[derive(Debug, Clone, PartialEq)]
pub struct InterfacePoint {
    pub x: Vec<f64>,
    pub normal: Vec<f64>,
    pub grad_phi_plus: Vec<f64>,
    pub grad_phi_minus: Vec<f64>,
}

/// Computational domains of the experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    /// [0, 1].
    Interval,
    /// Disk of radius r centered at the origin.
    Disk { r: f64 },
    /// [−1, 1]².
    Square,
    /// 3D shell inner ≤ ‖x‖ ≤ outer.
    Shell { inner: f64, outer: f64 },
    /// 6-ball of radius r.
    Ball6 { r: f64 },
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval => 1,
            Domain::Disk { .. } | Domain::Square => 2,
            Domain::Shell { .. } => 3,
            Domain::Ball6 { .. } => 6,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::Interval => (0.0..=1.0).contains(&x[0]),
            Domain::Disk { r } => x[0] * x[0] + x[1] * x[1] <= r * r,
            Domain::Square => x.iter().all(|v| (-1.0..=1.0).contains(v)),
            Domain::Shell { inner, outer } => {
                let s = x.iter().map(|v| v * v).sum::<f64>();
                (inner * inner..=outer * outer).contains(&s)
            }
            Domain::Ball6 { r } => x.iter().map(|v| v * v).sum::<f64>() <= r * r,
        }
    }

    /// Axis-aligned bounding box as (lo, hi) per axis.
    pub fn bbox(&self) -> Vec<(f64, f64)> {
        match self {
            Domain::Interval => vec![(0.0, 1.0)],
            Domain::Disk { r } => vec![(-r, *r); 2],
            Domain::Square => vec![(-1.0, 1.0); 2],
            Domain::Shell { outer, .. } => vec![(-outer, *outer); 3],
            Domain::Ball6 { r } => vec![(-r, *r); 6],
        }
    }
}

fn unit_direction(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|c| c / norm).collect();
        }
    }
}

/// One uniform draw from the interior of `domain`.
fn draw_in_domain(domain: &Domain, rng: &mut impl Rng) -> Vec<f64> {
    match domain {
        Domain::Interval => vec![rng.random_range(0.0..1.0)],
        Domain::Square => vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
        Domain::Disk { r } => {
            // Area-uniform: radius ∝ √U.
            let rad = r * rng.random_range(0.0..1.0f64).sqrt();
            let th = rng.random_range(0.0..std::f64::consts::TAU);
            vec![rad * th.cos(), rad * th.sin()]
        }
        Domain::Shell { inner, outer } => {
            // Volume-uniform radius between the spheres: r³ uniform.
            let u = rng.random_range(0.0..1.0);
            let cube = inner.powi(3) + u * (outer.powi(3) - inner.powi(3));
            let rad = cube.cbrt();
            unit_direction(rng, 3).into_iter().map(|c| c * rad).collect()
        }
        Domain::Ball6 { r } => {
            // Volume-uniform in 6D: radius ∝ U^(1/6).
            let rad = r * rng.random_range(0.0..1.0f64).powf(1.0 / 6.0);
            unit_direction(rng, 6).into_iter().map(|c| c * rad).collect()
        }
    }
}

/// Uniform interior points labeled by side; draws landing within
/// [`INTERFACE_TOL`] of Γ are rejected and redrawn.
pub fn sample_interior(
    domain: &Domain,
    ls: &LevelSet,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<(Vec<f64>, Region)> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x = draw_in_domain(domain, rng);
        let region = region_of(ls, &x, INTERFACE_TOL);
        if region == Region::OnInterface {
            continue;
        }
        out.push((x, region));
    }
    out
}

/// Uniform points on ∂Ω.
pub fn sample_boundary(domain: &Domain, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    assert!(n >= 1);
    (0..n)
        .map(|_| match domain {
            Domain::Interval => vec![if rng.random_range(0.0..1.0) < 0.5 { 0.0 } else { 1.0 }],
            Domain::Square => {
                // Four equal edges: pick one, then slide along it.
                let edge = rng.random_range(0..4u32);
                let t = rng.random_range(-1.0..1.0);
                match edge {
                    0 => vec![t, -1.0],
                    1 => vec![t, 1.0],
                    2 => vec![-1.0, t],
                    _ => vec![1.0, t],
                }
            }
            Domain::Disk { r } => {
                let th = rng.random_range(0.0..std::f64::consts::TAU);
                vec![r * th.cos(), r * th.sin()]
            }
            Domain::Shell { inner, outer } => {
                // Area-weighted choice between the two spheres.
                let p_outer = outer * outer / (inner * inner + outer * outer);
                let rad = if rng.random_range(0.0..1.0) < p_outer {
                    *outer
                } else {
                    *inner
                };
                unit_direction(rng, 3).into_iter().map(|c| c * rad).collect()
            }
            Domain::Ball6 { r } => unit_direction(rng, 6).into_iter().map(|c| c * r).collect(),
        })
        .collect()
}

/// Interface radius along a unit direction from the origin, for the families
/// whose Γ is star-shaped about the origin.
pub fn interface_radius_along(ls: &LevelSet, direction: &[f64]) -> Option<f64> {
    match ls {
        LevelSet::Circle { r0 } => Some(*r0),
        LevelSet::SphereNd { r0, .. } => Some(*r0),
        LevelSet::PolarStar2d { r1, r2 } => {
            let theta = direction[1].atan2(direction[0]);
            Some(r1 + (5.0 * theta).sin() / r2)
        }
        LevelSet::Star3d { r0, amps } => {
            // φ is affine in r along a fixed direction because (x²+y²)/r²
            // and θ depend only on the direction.
            let rho2 = direction[0] * direction[0] + direction[1] * direction[1];
            let theta = direction[1].atan2(direction[0]);
            let shape: f64 = amps
                .iter()
                .map(|&(t_k, n_k, th_k)| t_k * (n_k * (theta - th_k)).cos())
                .sum();
            Some(r0 * (1.0 + rho2 * rho2 * shape))
        }
        LevelSet::Affine1d { .. } => None,
    }
}

/// Random points on Γ with unit normals and one-sided augmentation
/// gradients, via each family's exact parametrization.
pub fn sample_interface(
    ls: &LevelSet,
    aug: Augmentation,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<InterfacePoint>, GeomError> {
    assert!(n >= 1);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let x = match ls {
            LevelSet::Affine1d { p } => vec![*p],
            LevelSet::Circle { r0 } => {
                let th = rng.random_range(0.0..std::f64::consts::TAU);
                vec![r0 * th.cos(), r0 * th.sin()]
            }
            LevelSet::PolarStar2d { .. } => {
                let th = rng.random_range(0.0..std::f64::consts::TAU);
                let dir = vec![th.cos(), th.sin()];
                let r = interface_radius_along(ls, &dir).unwrap();
                dir.into_iter().map(|c| c * r).collect()
            }
            LevelSet::Star3d { .. } => {
                let dir = unit_direction(rng, 3);
                let r = interface_radius_along(ls, &dir).unwrap();
                dir.into_iter().map(|c| c * r).collect()
            }
            LevelSet::SphereNd { dim, r0 } => {
                unit_direction(rng, *dim).into_iter().map(|c| c * r0).collect()
            }
        };
        let jet = phi_eval_jet(ls, &x)?;
        let norm = jet.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(GeomError::DegenerateNormal { point: x });
        }
        let normal: Vec<f64> = jet.grad.iter().map(|g| g / norm).collect();
        let (gp, gm) = match aug {
            Augmentation::Abs => (jet.grad.clone(), jet.grad.iter().map(|g| -g).collect()),
            Augmentation::Relu => (jet.grad.clone(), vec![0.0; ls.dim()]),
        };
        out.push(InterfacePoint {
            x,
            normal,
            grad_phi_plus: gp,
            grad_phi_minus: gm,
        });
    }
    Ok(out)
}

/// Deterministic sensor lattice: the coarsest per-axis resolution whose
/// bounding-box lattice (endpoints included) has at least `count` points
/// inside the domain, truncated to exactly `count` in lexicographic order.
pub fn sensor_grid(domain: &Domain, count: usize) -> Vec<Vec<f64>> {
    assert!(count >= 1);
    let bbox = domain.bbox();
    let dim = bbox.len();
    for n_axis in 2..10_000usize {
        let mut found = Vec::new();
        let mut idx = vec![0usize; dim];
        'outer: loop {
            let x: Vec<f64> = idx
                .iter()
                .zip(&bbox)
                .map(|(&i, &(lo, hi))| lo + (hi - lo) * i as f64 / (n_axis - 1) as f64)
                .collect();
            if domain.contains(&x) {
                found.push(x);
            }
            // Odometer increment in lexicographic order.
            for a in (0..dim).rev() {
                idx[a] += 1;
                if idx[a] < n_axis {
                    continue 'outer;
                }
                idx[a] = 0;
                if a == 0 {
                    break 'outer;
                }
            }
        }
        if found.len() >= count {
            found.truncate(count);
            return found;
        }
    }
    unreachable!("sensor lattice resolution exceeded any practical bound")
}
