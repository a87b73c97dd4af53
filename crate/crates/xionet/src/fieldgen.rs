//! Input-data generation for the interface benchmarks: Gaussian-random-field
//! sources, closed-form coefficient and solution fields, assembly of the five
//! shipped problem families, and the jump-homogenization transform.
//!
//! Closed-form fields are small expression trees ([`Expr`]) evaluated
//! generically over plain values or second-order jets, so every field exposes
//! value, gradient, and Laplacian without hand-written derivative code.
//! Symbolic differentiation of the same trees supplies manufactured sources
//! and the transformed data of the homogenization map.

use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::diffcore::{jet_eval_all, Scalar, ScalarProgram};
use crate::geom::{
    phi_value, region_of, sample_interface, sensor_grid, Augmentation, Domain, GeomError,
    InterfacePoint, LevelSet, Region, Side, INTERFACE_TOL,
};

/// Errors produced while generating fields or assembling problems.
#[derive(Debug, Error)]
pub enum FieldError {
    /// The covariance matrix could not be factored even after jitter
    /// escalation.
    #[error("covariance factorization failed after {attempts} jitter attempts")]
    CholeskyFailed { attempts: usize },
    /// A family parameter lies outside its admissible interval.
    #[error("parameter {name} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    /// A parameter record was paired with the wrong family id.
    #[error("parameter record for {got:?} does not belong to family {want:?}")]
    WrongParams { want: ExampleId, got: ExampleId },
    /// No closed-form solution is available for this family/parameter choice.
    #[error("no closed-form exact solution for {family:?} at these parameters")]
    NotExact { family: ExampleId },
    /// The extension field does not reproduce the prescribed solution jump.
    #[error("extension field misses the prescribed solution jump (worst deviation {worst:.3e})")]
    JumpMismatch { worst: f64 },
    /// Homogenization composes programs symbolically and therefore needs
    /// closed-form plus-side data.
    #[error("homogenization requires closed-form data on the plus side")]
    PlusSideNotClosed,
    /// Geometry failure while sampling the interface.
    #[error(transparent)]
    Geometry(#[from] GeomError),
}

/// Derives an independent child seed from a base seed and a stream index
/// (splitmix64 finalizer over the golden-ratio sequence).
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Expression trees
// ---------------------------------------------------------------------------

/// A closed-form scalar program as a small expression tree.
///
/// Construction folds additive/multiplicative identities so that symbolic
/// derivatives stay compact; the folds treat expressions as smooth functions
/// (e.g. `0·x = 0` regardless of where `x` is later evaluated).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Coord(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    /// Real power with a constant exponent; integral exponents follow IEEE
    /// `pow` semantics and are safe for negative bases.
    Pow(Box<Expr>, f64),
    Sqrt(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
    Ln(Box<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn coord(i: usize) -> Expr {
        Expr::Coord(i)
    }

    /// Squared Euclidean norm of the first `dim` coordinates.
    pub fn radius2(dim: usize) -> Expr {
        (0..dim).fold(Expr::constant(0.0), |acc, i| {
            acc + Expr::coord(i) * Expr::coord(i)
        })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 1.0)
    }

    pub fn sqrt(self) -> Expr {
        Expr::Sqrt(Box::new(self))
    }

    pub fn sin(self) -> Expr {
        Expr::Sin(Box::new(self))
    }

    pub fn cos(self) -> Expr {
        Expr::Cos(Box::new(self))
    }

    pub fn exp(self) -> Expr {
        Expr::Exp(Box::new(self))
    }

    pub fn ln(self) -> Expr {
        Expr::Ln(Box::new(self))
    }

    pub fn powf(self, e: f64) -> Expr {
        if e == 0.0 {
            Expr::Const(1.0)
        } else if e == 1.0 {
            self
        } else {
            Expr::Pow(Box::new(self), e)
        }
    }

    /// Evaluates the tree over any scalar carrier (values or jets).
    pub fn eval<S: Scalar>(&self, x: &[S]) -> S {
        match self {
            Expr::Const(c) => S::from_f64(*c),
            Expr::Coord(i) => x[*i].clone(),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Neg(a) => -a.eval(x),
            Expr::Pow(a, e) => a.eval(x).powf(*e),
            Expr::Sqrt(a) => a.eval(x).sqrt(),
            Expr::Sin(a) => a.eval(x).sin(),
            Expr::Cos(a) => a.eval(x).cos(),
            Expr::Exp(a) => a.eval(x).exp(),
            Expr::Ln(a) => a.eval(x).ln(),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }

    /// Symbolic partial derivative with respect to coordinate `axis`.
    pub fn diff(&self, axis: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Coord(i) => Expr::Const(if *i == axis { 1.0 } else { 0.0 }),
            Expr::Add(a, b) => a.diff(axis) + b.diff(axis),
            Expr::Sub(a, b) => a.diff(axis) - b.diff(axis),
            Expr::Mul(a, b) => a.diff(axis) * (**b).clone() + (**a).clone() * b.diff(axis),
            Expr::Div(a, b) => {
                let num = a.diff(axis) * (**b).clone() - (**a).clone() * b.diff(axis);
                num / ((**b).clone() * (**b).clone())
            }
            Expr::Neg(a) => -a.diff(axis),
            Expr::Pow(a, e) => {
                Expr::constant(*e) * (**a).clone().powf(e - 1.0) * a.diff(axis)
            }
            Expr::Sqrt(a) => a.diff(axis) * Expr::constant(0.5) / (**a).clone().sqrt(),
            Expr::Sin(a) => (**a).clone().cos() * a.diff(axis),
            Expr::Cos(a) => -((**a).clone().sin()) * a.diff(axis),
            Expr::Exp(a) => (**a).clone().exp() * a.diff(axis),
            Expr::Ln(a) => a.diff(axis) / (**a).clone(),
        }
    }

    /// Value, gradient, and Laplacian via a second-order jet sweep.
    pub fn field_eval(&self, x: &[f64]) -> FieldEval {
        let program = ExprProgram {
            expr: self,
            dim: x.len(),
        };
        let jet = jet_eval_all(&program, x);
        FieldEval {
            value: jet.val,
            grad: (0..x.len()).map(|a| jet.d1(a)).collect(),
            lap: jet.lap(x.len()),
        }
    }
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        if self.is_zero() {
            return rhs;
        }
        if rhs.is_zero() {
            return self;
        }
        if let (Expr::Const(a), Expr::Const(b)) = (&self, &rhs) {
            return Expr::Const(a + b);
        }
        Expr::Add(Box::new(self), Box::new(rhs))
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        if rhs.is_zero() {
            return self;
        }
        if self.is_zero() {
            return -rhs;
        }
        if let (Expr::Const(a), Expr::Const(b)) = (&self, &rhs) {
            return Expr::Const(a - b);
        }
        Expr::Sub(Box::new(self), Box::new(rhs))
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        if self.is_zero() || rhs.is_zero() {
            return Expr::Const(0.0);
        }
        if self.is_one() {
            return rhs;
        }
        if rhs.is_one() {
            return self;
        }
        if let (Expr::Const(a), Expr::Const(b)) = (&self, &rhs) {
            return Expr::Const(a * b);
        }
        Expr::Mul(Box::new(self), Box::new(rhs))
    }
}

impl Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        if self.is_zero() {
            return Expr::Const(0.0);
        }
        if rhs.is_one() {
            return self;
        }
        Expr::Div(Box::new(self), Box::new(rhs))
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(a) => *a,
            other => Expr::Neg(Box::new(other)),
        }
    }
}

/// Value with first derivatives and Laplacian at a point.
#[derive(Debug, Clone)]
pub struct FieldEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub lap: f64,
}

struct ExprProgram<'a> {
    expr: &'a Expr,
    dim: usize,
}

impl ScalarProgram for ExprProgram<'_> {
    fn arity(&self) -> usize {
        self.dim
    }
    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        self.expr.eval(x)
    }
}

/// The manufactured source `f = −∇·(a ∇u) + b·u` for closed-form `u, a, b`.
pub fn manufactured_source(u: &Expr, a: &Expr, b: &Expr, dim: usize) -> Expr {
    let mut div = Expr::constant(0.0);
    for i in 0..dim {
        div = div + (a.clone() * u.diff(i)).diff(i);
    }
    -div + b.clone() * u.clone()
}

// ---------------------------------------------------------------------------
// Tabulated 1D fields
// ---------------------------------------------------------------------------

/// Uniform grid of `n` nodes on [0, 1].
pub fn uniform_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Piecewise-linear interpolant of nodal values on an increasing 1D grid.
///
/// Queries bit-equal to a stored node coordinate return the nodal value
/// exactly; queries outside the grid clamp to the end values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tab1d {
    xs: Vec<f64>,
    vals: Vec<f64>,
}

impl Tab1d {
    pub fn new(xs: Vec<f64>, vals: Vec<f64>) -> Self {
        assert!(xs.len() >= 2 && xs.len() == vals.len());
        assert!(
            xs.windows(2).all(|w| w[0] < w[1]),
            "nodes must be strictly increasing"
        );
        Tab1d { xs, vals }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.xs
    }

    pub fn node_values(&self) -> &[f64] {
        &self.vals
    }

    /// Index of the cell [x_i, x_{i+1}] containing `x` (clamped at the ends).
    fn cell(&self, x: f64) -> usize {
        self.xs
            .partition_point(|&t| t <= x)
            .saturating_sub(1)
            .min(self.xs.len() - 2)
    }

    pub fn value(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.vals[0];
        }
        if x >= self.xs[n - 1] {
            return self.vals[n - 1];
        }
        let i = self.cell(x);
        if x == self.xs[i] {
            return self.vals[i];
        }
        let t = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.vals[i] + t * (self.vals[i + 1] - self.vals[i])
    }

    /// Slope of the interpolant in the cell containing `x` (one-sided at the
    /// grid ends).
    pub fn slope(&self, x: f64) -> f64 {
        let i = self.cell(x.clamp(self.xs[0], self.xs[self.xs.len() - 1]));
        (self.vals[i + 1] - self.vals[i]) / (self.xs[i + 1] - self.xs[i])
    }
}

// ---------------------------------------------------------------------------
// Piecewise fields
// ---------------------------------------------------------------------------

/// A scalar field on one side of the interface.
#[derive(Debug, Clone)]
pub enum SideProgram {
    Constant(f64),
    Closed(Expr),
    Tabulated(Tab1d),
}

impl SideProgram {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            SideProgram::Constant(c) => *c,
            SideProgram::Closed(e) => e.value(x),
            SideProgram::Tabulated(t) => t.value(x[0]),
        }
    }

    /// Value/gradient/Laplacian; tabulated fields report the interpolant's
    /// piecewise-constant slope and zero curvature.
    pub fn field_eval(&self, x: &[f64]) -> FieldEval {
        match self {
            SideProgram::Constant(c) => FieldEval {
                value: *c,
                grad: vec![0.0; x.len()],
                lap: 0.0,
            },
            SideProgram::Closed(e) => e.field_eval(x),
            SideProgram::Tabulated(t) => FieldEval {
                value: t.value(x[0]),
                grad: vec![t.slope(x[0])],
                lap: 0.0,
            },
        }
    }

    fn as_expr(&self) -> Option<Expr> {
        match self {
            SideProgram::Constant(c) => Some(Expr::Const(*c)),
            SideProgram::Closed(e) => Some(e.clone()),
            SideProgram::Tabulated(_) => None,
        }
    }
}

/// A field with independent programs on the plus (φ>0) and minus (φ<0) sides;
/// both sides are defined on the whole domain so cut-cell quadrature can
/// evaluate either one across the interface.
#[derive(Debug, Clone)]
pub struct PiecewiseField {
    pub plus: SideProgram,
    pub minus: SideProgram,
}

impl PiecewiseField {
    pub fn constant(c: f64) -> Self {
        PiecewiseField {
            plus: SideProgram::Constant(c),
            minus: SideProgram::Constant(c),
        }
    }

    pub fn closed(plus: Expr, minus: Expr) -> Self {
        PiecewiseField {
            plus: SideProgram::Closed(plus),
            minus: SideProgram::Closed(minus),
        }
    }

    pub fn side(&self, side: Side) -> &SideProgram {
        match side {
            Side::Plus => &self.plus,
            Side::Minus => &self.minus,
        }
    }

    pub fn value(&self, x: &[f64], side: Side) -> f64 {
        self.side(side).value(x)
    }

    pub fn field_eval(&self, x: &[f64], side: Side) -> FieldEval {
        self.side(side).field_eval(x)
    }
}

/// Evaluates `field` as a single function of position, selecting the side by
/// the sign of the level set (interface points read from the plus side).
pub fn restricted_value(field: &PiecewiseField, ls: &LevelSet, x: &[f64]) -> f64 {
    match region_of(ls, x, INTERFACE_TOL) {
        Region::Minus => field.value(x, Side::Minus),
        _ => field.value(x, Side::Plus),
    }
}

// ---------------------------------------------------------------------------
// Gaussian random fields
// ---------------------------------------------------------------------------

/// Squared-exponential covariance `exp(−‖x1−x2‖² / (2 l²))`.
pub fn se_kernel(length_scale: f64, x1: &[f64], x2: &[f64]) -> f64 {
    let d2: f64 = x1.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * length_scale * length_scale)).exp()
}

/// Zero-mean Gaussian random field with squared-exponential covariance.
#[derive(Debug, Clone)]
pub struct GrfSpec {
    pub length_scale: f64,
    /// Initial diagonal jitter, relative to the unit kernel variance
    /// k(x,x) = 1; escalated ×10 at most twice if factorization fails.
    pub jitter: f64,
}

impl GrfSpec {
    pub fn new(length_scale: f64) -> Self {
        assert!(length_scale > 0.0);
        GrfSpec {
            length_scale,
            jitter: 1e-10,
        }
    }
}

/// In-place lower Cholesky factor of a symmetric matrix in row-major order;
/// returns false on a non-positive (or NaN) pivot. Only the lower triangle of
/// the result is meaningful.
fn cholesky_in_place(m: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = m[j * n + j];
        for k in 0..j {
            d -= m[j * n + k] * m[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        m[j * n + j] = d;
        for i in j + 1..n {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= m[i * n + k] * m[j * n + k];
            }
            m[i * n + j] = s / d;
        }
    }
    true
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (p, q) in a.iter().zip(b) {
        let c = p.total_cmp(q);
        if c != Ordering::Equal {
            return c;
        }
    }
    a.len().cmp(&b.len())
}

/// Reusable sampler: factors the covariance once for a fixed location set and
/// then produces independent draws per seed.
///
/// Locations are canonically (lexicographically) ordered before the
/// factorization, so permuting the input locations permutes the outputs of
/// [`GrfSampler::draw`] identically.
pub struct GrfSampler {
    factor: Vec<f64>,
    order: Vec<usize>,
    n: usize,
}

impl GrfSampler {
    pub fn new(spec: &GrfSpec, locations: &[Vec<f64>]) -> Result<Self, FieldError> {
        let n = locations.len();
        assert!(n >= 1, "need at least one location");
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| lex_cmp(&locations[i], &locations[j]));
        let mut base = vec![0.0; n * n];
        for (r, &i) in order.iter().enumerate() {
            for (c, &j) in order.iter().enumerate() {
                base[r * n + c] = se_kernel(spec.length_scale, &locations[i], &locations[j]);
            }
        }
        let attempts = 3;
        for attempt in 0..attempts {
            let lam = spec.jitter * 10f64.powi(attempt as i32);
            let mut m = base.clone();
            for d in 0..n {
                m[d * n + d] += lam;
            }
            if cholesky_in_place(&mut m, n) {
                return Ok(GrfSampler {
                    factor: m,
                    order,
                    n,
                });
            }
        }
        Err(FieldError::CholeskyFailed { attempts })
    }

    /// One joint draw, returned in the original location order.
    pub fn draw(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..self.n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut out = vec![0.0; self.n];
        for r in 0..self.n {
            let mut acc = 0.0;
            for (c, zc) in z.iter().enumerate().take(r + 1) {
                acc += self.factor[r * self.n + c] * zc;
            }
            out[self.order[r]] = acc;
        }
        out
    }
}

/// Joint Gaussian draw at `locations` via Cholesky of (K + λI).
pub fn grf_draw(
    spec: &GrfSpec,
    locations: &[Vec<f64>],
    seed: u64,
) -> Result<Vec<f64>, FieldError> {
    Ok(GrfSampler::new(spec, locations)?.draw(seed))
}

// ---------------------------------------------------------------------------
// The rod family's random sources
// ---------------------------------------------------------------------------

/// Nodes of the reference grid on [0, 1] used for tabulated rod sources and
/// the reference solver.
pub const ROD_GRID_NODES: usize = 1001;

/// Batch generator for rod sources: factors the two covariance kernels once
/// and then draws per-sample source pairs.
pub struct RodSourceSampler {
    plus: GrfSampler,
    minus: GrfSampler,
    xs: Vec<f64>,
}

impl RodSourceSampler {
    pub fn new() -> Result<Self, FieldError> {
        let xs = uniform_grid(ROD_GRID_NODES);
        let locs: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        Ok(RodSourceSampler {
            plus: GrfSampler::new(&GrfSpec::new(0.2), &locs)?,
            minus: GrfSampler::new(&GrfSpec::new(0.1), &locs)?,
            xs,
        })
    }

    /// Draws the plus-side (length scale 0.2) and minus-side (length scale
    /// 0.1) source tables on the full grid; restriction to a subdomain
    /// happens at evaluation through the region label.
    pub fn source(&self, seed: u64) -> PiecewiseField {
        let plus = self.plus.draw(mix_seed(seed, 0));
        let minus = self.minus.draw(mix_seed(seed, 1));
        PiecewiseField {
            plus: SideProgram::Tabulated(Tab1d::new(self.xs.clone(), plus)),
            minus: SideProgram::Tabulated(Tab1d::new(self.xs.clone(), minus)),
        }
    }
}

/// One-shot rod source draw (see [`RodSourceSampler`] for batch use).
pub fn rod_source(interface: f64, seed: u64) -> Result<PiecewiseField, FieldError> {
    check_range("interface", interface, ROD_INTERFACE)?;
    Ok(RodSourceSampler::new()?.source(seed))
}

// ---------------------------------------------------------------------------
// Interface data
// ---------------------------------------------------------------------------

/// Jump data prescribed on the interface.
#[derive(Debug, Clone)]
pub enum InterfaceData {
    /// Identically-zero jump data.
    Zero,
    /// A function of position alone.
    Closed(Expr),
    /// `value(x) + Σ_i n_i·flux_i(x)`: data whose definition contracts
    /// per-axis flux programs against the interface normal.
    WithNormal { value: Expr, flux: Vec<Expr> },
}

impl InterfaceData {
    pub fn at(&self, x: &[f64], normal: &[f64]) -> f64 {
        match self {
            InterfaceData::Zero => 0.0,
            InterfaceData::Closed(e) => e.value(x),
            InterfaceData::WithNormal { value, flux } => {
                value.value(x)
                    + flux
                        .iter()
                        .zip(normal)
                        .map(|(f, n)| f.value(x) * n)
                        .sum::<f64>()
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, InterfaceData::Zero)
    }

    /// Canonical (value, per-axis flux) decomposition for composition.
    fn parts(&self, dim: usize) -> (Expr, Vec<Expr>) {
        match self {
            InterfaceData::Zero => (Expr::constant(0.0), vec![Expr::constant(0.0); dim]),
            InterfaceData::Closed(e) => (e.clone(), vec![Expr::constant(0.0); dim]),
            InterfaceData::WithNormal { value, flux } => (value.clone(), flux.clone()),
        }
    }
}

// ---------------------------------------------------------------------------
// Families and parameter records
// ---------------------------------------------------------------------------

/// The five shipped benchmark families. The short ids (`ex1` … `ex6d`) are
/// the vocabulary used by config files and dataset metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExampleId {
    /// 1D rod with piecewise-constant diffusion and random sources.
    Rod1d,
    /// Disk with a circular interface and high diffusion contrast.
    Disk2d,
    /// Square with a five-petal star interface and rational sources.
    SquareStar2d,
    /// Spherical shell with a perturbed-sphere interface and oscillatory
    /// diffusion.
    ShellStar3d,
    /// Six-dimensional ball with a spherical interface.
    Ball6d,
}

impl ExampleId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExampleId::Rod1d => "ex1",
            ExampleId::Disk2d => "ex2",
            ExampleId::SquareStar2d => "ex3",
            ExampleId::ShellStar3d => "ex3d",
            ExampleId::Ball6d => "ex6d",
        }
    }

    pub fn parse(s: &str) -> Option<ExampleId> {
        ExampleId::all().into_iter().find(|id| id.as_str() == s)
    }

    pub fn all() -> [ExampleId; 5] {
        [
            ExampleId::Rod1d,
            ExampleId::Disk2d,
            ExampleId::SquareStar2d,
            ExampleId::ShellStar3d,
            ExampleId::Ball6d,
        ]
    }

    pub fn dim(&self) -> usize {
        match self {
            ExampleId::Rod1d => 1,
            ExampleId::Disk2d | ExampleId::SquareStar2d => 2,
            ExampleId::ShellStar3d => 3,
            ExampleId::Ball6d => 6,
        }
    }

    /// Number of branch sensor locations used by the family.
    pub fn sensor_count(&self) -> usize {
        match self {
            ExampleId::Rod1d => 100,
            ExampleId::Disk2d => 60,
            ExampleId::SquareStar2d => 100,
            ExampleId::ShellStar3d => 136,
            ExampleId::Ball6d => 233,
        }
    }
}

/// Admissible parameter intervals per family.
pub const ROD_INTERFACE: (f64, f64) = (0.4, 0.7);
pub const DISK_STRENGTH: (f64, f64) = (0.5, 2.0);
pub const DISK_RADIUS: (f64, f64) = (0.4, 0.8);
pub const STAR_AMPLITUDE: (f64, f64) = (50.0, 100.0);
pub const STAR_SHARPNESS: (f64, f64) = (1550.0, 1650.0);
pub const STAR_BASE_RADIUS: (f64, f64) = (0.5, 0.7);
pub const STAR_WOBBLE_INV: (f64, f64) = (7.0, 11.0);
pub const SHELL_RADIUS: (f64, f64) = (0.45, 0.55);
pub const SHELL_AMP: [(f64, f64); 3] = [(0.0, 0.2), (-0.2, 0.0), (0.1, 0.2)];
pub const SHELL_FREQ: [(f64, f64); 3] = [(2.0, 4.0), (3.0, 5.0), (6.0, 8.0)];
pub const SHELL_PHASE: [(f64, f64); 3] = [(0.3, 0.7), (1.6, 2.0), (-0.1, 0.1)];
pub const BALL_RADIUS: (f64, f64) = (0.4, 0.5);

/// Per-sample parameters of one family instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExampleParams {
    Rod1d {
        interface: f64,
    },
    Disk2d {
        strength: f64,
        radius: f64,
    },
    SquareStar2d {
        p1_plus: f64,
        p2_plus: f64,
        p1_minus: f64,
        p2_minus: f64,
        r1: f64,
        r2: f64,
    },
    ShellStar3d {
        radius: f64,
        /// (amplitude, frequency, phase) per mode.
        amps: [(f64, f64, f64); 3],
    },
    Ball6d {
        radius: f64,
    },
}

fn check_range(name: &'static str, value: f64, (lo, hi): (f64, f64)) -> Result<(), FieldError> {
    if value >= lo && value <= hi {
        Ok(())
    } else {
        Err(FieldError::OutOfRange {
            name,
            value,
            lo,
            hi,
        })
    }
}

impl ExampleParams {
    pub fn example(&self) -> ExampleId {
        match self {
            ExampleParams::Rod1d { .. } => ExampleId::Rod1d,
            ExampleParams::Disk2d { .. } => ExampleId::Disk2d,
            ExampleParams::SquareStar2d { .. } => ExampleId::SquareStar2d,
            ExampleParams::ShellStar3d { .. } => ExampleId::ShellStar3d,
            ExampleParams::Ball6d { .. } => ExampleId::Ball6d,
        }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        match *self {
            ExampleParams::Rod1d { interface } => check_range("interface", interface, ROD_INTERFACE),
            ExampleParams::Disk2d { strength, radius } => {
                check_range("strength", strength, DISK_STRENGTH)?;
                check_range("radius", radius, DISK_RADIUS)
            }
            ExampleParams::SquareStar2d {
                p1_plus,
                p2_plus,
                p1_minus,
                p2_minus,
                r1,
                r2,
            } => {
                check_range("p1_plus", p1_plus, STAR_AMPLITUDE)?;
                check_range("p2_plus", p2_plus, STAR_SHARPNESS)?;
                check_range("p1_minus", p1_minus, STAR_AMPLITUDE)?;
                check_range("p2_minus", p2_minus, STAR_SHARPNESS)?;
                check_range("r1", r1, STAR_BASE_RADIUS)?;
                check_range("r2", r2, STAR_WOBBLE_INV)
            }
            ExampleParams::ShellStar3d { radius, amps } => {
                check_range("radius", radius, SHELL_RADIUS)?;
                const AMP: [&str; 3] = ["amp1", "amp2", "amp3"];
                const FREQ: [&str; 3] = ["freq1", "freq2", "freq3"];
                const PHASE: [&str; 3] = ["phase1", "phase2", "phase3"];
                for k in 0..3 {
                    check_range(AMP[k], amps[k].0, SHELL_AMP[k])?;
                    check_range(FREQ[k], amps[k].1, SHELL_FREQ[k])?;
                    check_range(PHASE[k], amps[k].2, SHELL_PHASE[k])?;
                }
                Ok(())
            }
            ExampleParams::Ball6d { radius } => check_range("radius", radius, BALL_RADIUS),
        }
    }
}

/// Uniform draw of a parameter record from the family's admissible ranges
/// (integer frequencies for the 3D star modes).
pub fn sample_params(id: ExampleId, rng: &mut impl Rng) -> ExampleParams {
    match id {
        ExampleId::Rod1d => ExampleParams::Rod1d {
            interface: rng.random_range(ROD_INTERFACE.0..=ROD_INTERFACE.1),
        },
        ExampleId::Disk2d => ExampleParams::Disk2d {
            strength: rng.random_range(DISK_STRENGTH.0..=DISK_STRENGTH.1),
            radius: rng.random_range(DISK_RADIUS.0..=DISK_RADIUS.1),
        },
        ExampleId::SquareStar2d => ExampleParams::SquareStar2d {
            p1_plus: rng.random_range(STAR_AMPLITUDE.0..=STAR_AMPLITUDE.1),
            p2_plus: rng.random_range(STAR_SHARPNESS.0..=STAR_SHARPNESS.1),
            p1_minus: rng.random_range(STAR_AMPLITUDE.0..=STAR_AMPLITUDE.1),
            p2_minus: rng.random_range(STAR_SHARPNESS.0..=STAR_SHARPNESS.1),
            r1: rng.random_range(STAR_BASE_RADIUS.0..=STAR_BASE_RADIUS.1),
            r2: rng.random_range(STAR_WOBBLE_INV.0..=STAR_WOBBLE_INV.1),
        },
        ExampleId::ShellStar3d => {
            let radius = rng.random_range(SHELL_RADIUS.0..=SHELL_RADIUS.1);
            let mut amps = [(0.0, 0.0, 0.0); 3];
            for k in 0..3 {
                let t = rng.random_range(SHELL_AMP[k].0..=SHELL_AMP[k].1);
                let n = rng.random_range(SHELL_FREQ[k].0 as i64..=SHELL_FREQ[k].1 as i64) as f64;
                let th = rng.random_range(SHELL_PHASE[k].0..=SHELL_PHASE[k].1);
                amps[k] = (t, n, th);
            }
            ExampleParams::ShellStar3d { radius, amps }
        }
        ExampleId::Ball6d => ExampleParams::Ball6d {
            radius: rng.random_range(BALL_RADIUS.0..=BALL_RADIUS.1),
        },
    }
}

// ---------------------------------------------------------------------------
// Problem specifications
// ---------------------------------------------------------------------------

/// A fully assembled interface problem instance.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub example: ExampleId,
    pub params: ExampleParams,
    pub domain: Domain,
    pub level_set: LevelSet,
    pub augmentation: Augmentation,
    /// Diffusion coefficient a on each side, bounded below by `a_floor`.
    pub diffusion: PiecewiseField,
    /// Reaction coefficient b (zero in all shipped families).
    pub reaction: PiecewiseField,
    pub source: PiecewiseField,
    /// Prescribed solution jump [u] on the interface.
    pub dirichlet_jump: InterfaceData,
    /// Prescribed conormal-flux jump [a ∇u·n] on the interface.
    pub flux_jump: InterfaceData,
    /// Dirichlet boundary data, side-resolved because some domains touch
    /// both regions with their boundary.
    pub boundary: PiecewiseField,
    pub sensors: Vec<Vec<f64>>,
    /// Recorded lower bound of the diffusion coefficient.
    pub a_floor: f64,
    pub exact: Option<PiecewiseField>,
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Boundary datum at a boundary point, resolved by region.
    pub fn boundary_value(&self, x: &[f64]) -> f64 {
        restricted_value(&self.boundary, &self.level_set, x)
    }

    /// Source as a single function of position (side chosen by the level
    /// set), as seen by the branch sensors.
    pub fn source_restricted(&self, x: &[f64]) -> f64 {
        restricted_value(&self.source, &self.level_set, x)
    }

    pub fn f_sensor_values(&self) -> Vec<f64> {
        self.sensors.iter().map(|s| self.source_restricted(s)).collect()
    }

    pub fn phi_sensor_values(&self) -> Vec<f64> {
        self.sensors
            .iter()
            .map(|s| self.augmentation.value(phi_value(&self.level_set, s)))
            .collect()
    }

    pub fn dirichlet_jump_at(&self, x: &[f64]) -> f64 {
        self.dirichlet_jump.at(x, &vec![0.0; self.dim()])
    }

    pub fn flux_jump_at(&self, ip: &InterfacePoint) -> f64 {
        self.flux_jump.at(&ip.x, &ip.normal)
    }
}

// --- family builders -------------------------------------------------------

/// Assembles a rod problem around an already-drawn source table (the batch
/// path; `problem_for_example` draws the source itself).
pub fn rod_problem_from_source(
    params: ExampleParams,
    source: PiecewiseField,
) -> Result<ProblemSpec, FieldError> {
    let ExampleParams::Rod1d { interface } = params else {
        return Err(FieldError::WrongParams {
            want: ExampleId::Rod1d,
            got: params.example(),
        });
    };
    params.validate()?;
    let domain = Domain::Interval;
    let level_set = LevelSet::Affine1d { p: interface };
    let sensors = sensor_grid(&domain, ExampleId::Rod1d.sensor_count());
    Ok(ProblemSpec {
        example: ExampleId::Rod1d,
        params,
        augmentation: level_set.default_augmentation(),
        domain,
        level_set,
        diffusion: PiecewiseField {
            plus: SideProgram::Constant(0.5),
            minus: SideProgram::Constant(0.1),
        },
        reaction: PiecewiseField::constant(0.0),
        source,
        dirichlet_jump: InterfaceData::Zero,
        flux_jump: InterfaceData::Zero,
        boundary: PiecewiseField::constant(0.0),
        sensors,
        a_floor: 0.1,
        exact: None,
    })
}

fn disk_exact(strength: f64, radius: f64) -> Result<PiecewiseField, FieldError> {
    if strength != 1.0 {
        return Err(FieldError::NotExact {
            family: ExampleId::Disk2d,
        });
    }
    let (a_plus, a_minus) = (1000.0, 1.0);
    let r3 = Expr::radius2(2).powf(1.5);
    let u_plus = (Expr::constant(1.0) - r3.clone()) * Expr::constant(1.0 / a_plus);
    let c = (1.0 - radius.powi(3)) / a_plus + radius.powi(3) / a_minus;
    let u_minus = Expr::constant(c) - r3 * Expr::constant(1.0 / a_minus);
    Ok(PiecewiseField::closed(u_plus, u_minus))
}

fn disk_problem(strength: f64, radius: f64) -> ProblemSpec {
    let domain = Domain::Disk { r: 1.0 };
    let level_set = LevelSet::Circle { r0: radius };
    let sensors = sensor_grid(&domain, ExampleId::Disk2d.sensor_count());
    let f = Expr::constant(9.0 * strength) * Expr::radius2(2).sqrt();
    ProblemSpec {
        example: ExampleId::Disk2d,
        params: ExampleParams::Disk2d { strength, radius },
        augmentation: level_set.default_augmentation(),
        domain,
        level_set,
        diffusion: PiecewiseField {
            plus: SideProgram::Constant(1000.0),
            minus: SideProgram::Constant(1.0),
        },
        reaction: PiecewiseField::constant(0.0),
        source: PiecewiseField::closed(f.clone(), f),
        dirichlet_jump: InterfaceData::Zero,
        flux_jump: InterfaceData::Zero,
        boundary: PiecewiseField::constant(0.0),
        sensors,
        a_floor: 1.0,
        exact: disk_exact(strength, radius).ok(),
    }
}

fn star_denominator() -> Expr {
    Expr::constant(1.0) + Expr::constant(10.0) * Expr::radius2(2)
}

fn star_source_side(p1: f64, p2: f64) -> Expr {
    let d = star_denominator();
    Expr::constant(p1) / d.clone().powf(2.0)
        - Expr::constant(p2) * Expr::radius2(2) / d.powf(3.0)
}

fn star_exact(params: &ExampleParams) -> Result<PiecewiseField, FieldError> {
    let ExampleParams::SquareStar2d {
        p1_plus,
        p2_plus,
        p1_minus,
        p2_minus,
        ..
    } = *params
    else {
        unreachable!("caller matched the family");
    };
    let at_exactness =
        p1_plus == 80.0 && p1_minus == 80.0 && p2_plus == 1600.0 && p2_minus == 1600.0;
    if !at_exactness {
        return Err(FieldError::NotExact {
            family: ExampleId::SquareStar2d,
        });
    }
    Ok(PiecewiseField::closed(
        Expr::constant(2.0) / star_denominator(),
        Expr::constant(1.0) / star_denominator(),
    ))
}

fn star_problem(params: ExampleParams) -> ProblemSpec {
    let ExampleParams::SquareStar2d {
        p1_plus,
        p2_plus,
        p1_minus,
        p2_minus,
        r1,
        r2,
    } = params
    else {
        unreachable!("caller matched the family");
    };
    let domain = Domain::Square;
    let level_set = LevelSet::PolarStar2d { r1, r2 };
    let sensors = sensor_grid(&domain, ExampleId::SquareStar2d.sensor_count());
    let h = Expr::constant(2.0) / star_denominator();
    ProblemSpec {
        example: ExampleId::SquareStar2d,
        params,
        augmentation: level_set.default_augmentation(),
        domain,
        level_set,
        diffusion: PiecewiseField {
            plus: SideProgram::Constant(1.0),
            minus: SideProgram::Constant(2.0),
        },
        reaction: PiecewiseField::constant(0.0),
        source: PiecewiseField::closed(
            star_source_side(p1_plus, p2_plus),
            star_source_side(p1_minus, p2_minus),
        ),
        dirichlet_jump: InterfaceData::Closed(Expr::constant(1.0) / star_denominator()),
        flux_jump: InterfaceData::Zero,
        boundary: PiecewiseField::closed(h.clone(), h),
        sensors,
        a_floor: 1.0,
        exact: star_exact(&params).ok(),
    }
}

fn shell_exact_exprs() -> (Expr, Expr) {
    let (x, y, z) = (Expr::coord(0), Expr::coord(1), Expr::coord(2));
    let q = (y.clone() - x.clone()) * Expr::constant(1.0 / 3.0);
    let u_plus = Expr::constant(16.0) * q.clone().powf(5.0)
        - Expr::constant(20.0) * q.clone().powf(3.0)
        + Expr::constant(5.0) * q
        + (x.clone() + y.clone() + Expr::constant(3.0)).ln() * z.clone().cos();
    let u_minus = (Expr::constant(2.0) * x).sin() * (Expr::constant(2.0) * y).cos() * z.exp();
    (u_plus, u_minus)
}

fn shell_diffusion_minus() -> Expr {
    let (x, y, z) = (Expr::coord(0), Expr::coord(1), Expr::coord(2));
    let tau = std::f64::consts::TAU;
    Expr::constant(10.0)
        + Expr::constant(2.0)
            * (Expr::constant(tau) * (x.clone() + y.clone())).cos()
            * (Expr::constant(tau) * (x - y)).sin()
            * z.cos()
}

fn shell_problem(params: ExampleParams) -> ProblemSpec {
    let ExampleParams::ShellStar3d { radius, amps } = params else {
        unreachable!("caller matched the family");
    };
    let domain = Domain::Shell {
        inner: 0.151,
        outer: 0.911,
    };
    let level_set = LevelSet::Star3d { r0: radius, amps };
    let sensors = sensor_grid(&domain, ExampleId::ShellStar3d.sensor_count());
    let (u_plus, u_minus) = shell_exact_exprs();
    let a_plus = Expr::constant(1.0);
    let a_minus = shell_diffusion_minus();
    let zero = Expr::constant(0.0);
    let f_plus = manufactured_source(&u_plus, &a_plus, &zero, 3);
    let f_minus = manufactured_source(&u_minus, &a_minus, &zero, 3);
    let flux: Vec<Expr> = (0..3)
        .map(|i| a_plus.clone() * u_plus.diff(i) - a_minus.clone() * u_minus.diff(i))
        .collect();
    ProblemSpec {
        example: ExampleId::ShellStar3d,
        params,
        augmentation: level_set.default_augmentation(),
        domain,
        level_set,
        diffusion: PiecewiseField {
            plus: SideProgram::Closed(a_plus),
            minus: SideProgram::Closed(a_minus),
        },
        reaction: PiecewiseField::constant(0.0),
        source: PiecewiseField::closed(f_plus, f_minus),
        dirichlet_jump: InterfaceData::Closed(u_plus.clone() - u_minus.clone()),
        flux_jump: InterfaceData::WithNormal {
            value: Expr::constant(0.0),
            flux,
        },
        boundary: PiecewiseField::closed(u_plus.clone(), u_minus.clone()),
        sensors,
        a_floor: 1.0,
        exact: Some(PiecewiseField::closed(u_plus, u_minus)),
    }
}

fn ball_exact_exprs(radius: f64) -> (Expr, Expr) {
    let q = Expr::constant(radius * radius) - Expr::radius2(6);
    let sins = (0..5).fold(Expr::constant(0.0), |acc, k| acc + Expr::coord(k).sin());
    let u_plus = q.clone().exp() + sins.clone();
    let u_minus = Expr::constant(1.0) + Expr::constant(2.0) * q.sin() + sins;
    (u_plus, u_minus)
}

fn ball_problem(params: ExampleParams) -> ProblemSpec {
    let ExampleParams::Ball6d { radius } = params else {
        unreachable!("caller matched the family");
    };
    let domain = Domain::Ball6 { r: 0.6 };
    let level_set = LevelSet::SphereNd { dim: 6, r0: radius };
    let sensors = sensor_grid(&domain, ExampleId::Ball6d.sensor_count());
    let (u_plus, u_minus) = ball_exact_exprs(radius);
    let one = Expr::constant(1.0);
    let zero = Expr::constant(0.0);
    let f_plus = manufactured_source(&u_plus, &one, &zero, 6);
    let f_minus = manufactured_source(&u_minus, &one, &zero, 6);
    ProblemSpec {
        example: ExampleId::Ball6d,
        params,
        augmentation: level_set.default_augmentation(),
        domain,
        level_set,
        diffusion: PiecewiseField::constant(1.0),
        reaction: PiecewiseField::constant(0.0),
        source: PiecewiseField::closed(f_plus, f_minus),
        dirichlet_jump: InterfaceData::Zero,
        flux_jump: InterfaceData::Closed(Expr::constant(2.0 * radius)),
        boundary: PiecewiseField::closed(u_plus.clone(), u_plus.clone()),
        sensors,
        a_floor: 1.0,
        exact: Some(PiecewiseField::closed(u_plus, u_minus)),
    }
}

/// Assembles the full problem instance for one family draw. The seed feeds
/// the rod family's random sources and is unused by the closed-form families.
pub fn problem_for_example(
    id: ExampleId,
    params: ExampleParams,
    seed: u64,
) -> Result<ProblemSpec, FieldError> {
    if params.example() != id {
        return Err(FieldError::WrongParams {
            want: id,
            got: params.example(),
        });
    }
    params.validate()?;
    match params {
        ExampleParams::Rod1d { interface } => {
            let source = rod_source(interface, seed)?;
            rod_problem_from_source(params, source)
        }
        ExampleParams::Disk2d { strength, radius } => Ok(disk_problem(strength, radius)),
        ExampleParams::SquareStar2d { .. } => Ok(star_problem(params)),
        ExampleParams::ShellStar3d { .. } => Ok(shell_problem(params)),
        ExampleParams::Ball6d { .. } => Ok(ball_problem(params)),
    }
}

/// Closed-form exact solution where available; errors for the rod family
/// (random sources) and away from a family's exactness parameters.
pub fn exact_solution(id: ExampleId, params: ExampleParams) -> Result<PiecewiseField, FieldError> {
    if params.example() != id {
        return Err(FieldError::WrongParams {
            want: id,
            got: params.example(),
        });
    }
    params.validate()?;
    match params {
        ExampleParams::Rod1d { .. } => Err(FieldError::NotExact {
            family: ExampleId::Rod1d,
        }),
        ExampleParams::Disk2d { strength, radius } => disk_exact(strength, radius),
        ExampleParams::SquareStar2d { .. } => star_exact(&params),
        ExampleParams::ShellStar3d { .. } => {
            let (u_plus, u_minus) = shell_exact_exprs();
            Ok(PiecewiseField::closed(u_plus, u_minus))
        }
        ExampleParams::Ball6d { radius } => {
            let (u_plus, u_minus) = ball_exact_exprs(radius);
            Ok(PiecewiseField::closed(u_plus, u_minus))
        }
    }
}

// ---------------------------------------------------------------------------
// Homogenization of the solution jump
// ---------------------------------------------------------------------------

/// A closed-form extension of the solution jump: defined on the plus side,
/// implicitly zero on the minus side.
#[derive(Debug, Clone)]
pub struct ExtensionField {
    pub v: Expr,
}

impl ExtensionField {
    pub fn zero() -> Self {
        ExtensionField {
            v: Expr::Const(0.0),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.v.is_zero()
    }
}

/// The canonical extension field shipped with each family (zero where the
/// solution jump already vanishes).
pub fn default_extension(spec: &ProblemSpec) -> ExtensionField {
    match spec.example {
        ExampleId::SquareStar2d => ExtensionField {
            v: Expr::constant(1.0) / star_denominator(),
        },
        ExampleId::ShellStar3d => {
            let (u_plus, u_minus) = shell_exact_exprs();
            ExtensionField {
                v: u_plus - u_minus,
            }
        }
        _ => ExtensionField::zero(),
    }
}

/// Tolerance for the extension-vs-jump agreement check.
pub const JUMP_CHECK_TOL: f64 = 1e-10;
const JUMP_CHECK_SAMPLES: usize = 128;

/// Maps a solution of the homogenized problem back to the original unknown:
/// `u(x) = w(x) + v(x)` on the plus side, `u = w` elsewhere.
#[derive(Debug, Clone)]
pub struct Recover {
    v: Expr,
}

impl Recover {
    pub fn identity() -> Self {
        Recover {
            v: Expr::Const(0.0),
        }
    }

    /// Recover map matching a given plus-side extension field.
    pub fn for_extension(ext: &ExtensionField) -> Self {
        Recover { v: ext.v.clone() }
    }

    pub fn apply(&self, x: &[f64], region: Region, w: f64) -> f64 {
        match region {
            Region::Plus => w + self.v.value(x),
            _ => w,
        }
    }
}

/// Shifts the unknown by an extension of the solution jump so the transformed
/// problem has a continuous solution: f gains ∇·(a∇v) − b·v on the plus
/// side, the flux jump loses a⁺∂ₙv, the boundary datum loses v on the plus
/// side, and the solution jump becomes zero.
///
/// The extension must reproduce the prescribed jump on the interface; this is
/// verified at sampled interface points before transforming.
pub fn homogenize(
    base: &ProblemSpec,
    ext: &ExtensionField,
    seed: u64,
) -> Result<(ProblemSpec, Recover), FieldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = sample_interface(
        &base.level_set,
        base.augmentation,
        JUMP_CHECK_SAMPLES,
        &mut rng,
    )?;
    let mut worst = 0.0_f64;
    for ip in &pts {
        let dev = (ext.v.value(&ip.x) - base.dirichlet_jump.at(&ip.x, &ip.normal)).abs();
        worst = worst.max(dev);
    }
    if worst > JUMP_CHECK_TOL {
        return Err(FieldError::JumpMismatch { worst });
    }
    if ext.is_zero() {
        return Ok((base.clone(), Recover::identity()));
    }

    let dim = base.dim();
    let v = &ext.v;
    let grad_v: Vec<Expr> = (0..dim).map(|i| v.diff(i)).collect();
    let a_plus = base
        .diffusion
        .plus
        .as_expr()
        .ok_or(FieldError::PlusSideNotClosed)?;
    let b_plus = base
        .reaction
        .plus
        .as_expr()
        .ok_or(FieldError::PlusSideNotClosed)?;
    let f_plus = base
        .source
        .plus
        .as_expr()
        .ok_or(FieldError::PlusSideNotClosed)?;
    let h_plus = base
        .boundary
        .plus
        .as_expr()
        .ok_or(FieldError::PlusSideNotClosed)?;

    // f' = f + ∇·(a∇v) − b·v on the plus side.
    let mut div = Expr::constant(0.0);
    for (i, gv) in grad_v.iter().enumerate() {
        div = div + (a_plus.clone() * gv.clone()).diff(i);
    }
    let f_new = f_plus + div - b_plus * v.clone();

    let (gn_value, gn_flux) = base.flux_jump.parts(dim);
    let flux_new: Vec<Expr> = gn_flux
        .into_iter()
        .zip(&grad_v)
        .map(|(f, gv)| f - a_plus.clone() * gv.clone())
        .collect();

    let mut out = base.clone();
    out.source.plus = SideProgram::Closed(f_new);
    out.dirichlet_jump = InterfaceData::Zero;
    out.flux_jump = InterfaceData::WithNormal {
        value: gn_value,
        flux: flux_new,
    };
    out.boundary.plus = SideProgram::Closed(h_plus - v.clone());
    out.exact = match out.exact.take() {
        Some(mut ex) => match ex.plus.as_expr() {
            Some(u_plus) => {
                ex.plus = SideProgram::Closed(u_plus - v.clone());
                Some(ex)
            }
            None => None,
        },
        None => None,
    };
    Ok((out, Recover { v: v.clone() }))
}
