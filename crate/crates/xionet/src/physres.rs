//! Interface-problem operators in extended coordinates and the training
//! losses built from them.
//!
//! A prediction U(x, z) becomes a solution candidate through u(x) =
//! U(x, Φ(x)), so spatial derivatives pick up chain-rule terms in the
//! augmented coordinate:
//!   ∇u = ∇_xU + ∂_zU·∇Φ,
//!   Δu = Δ_xU + 2∇Φ·∇_x(∂_zU) + |∇Φ|²·∂_zzU + ∂_zU·ΔΦ,
//! with the one-sided ∇Φ, ΔΦ supplied by the geometry layer. The residual,
//! flux-jump, and boundary operators below consume any field that can report
//! the extended derivative record — the operator network during training, or
//! closed-form oracle fields in tests.

use thiserror::Error;

use crate::diffcore::{jet_eval_all, BufId, Scalar, ScalarProgram, Tape};
use crate::fieldgen::{Expr, ProblemSpec};
use crate::geom::{
    aug_eval, phi_value, region_of, sample_boundary, sample_interface, sample_interior,
    GeomError, InterfacePoint, Region, Side, INTERFACE_TOL,
};
use crate::opnet::{
    branch_coefficients, combine_function, points_to_matrix, trunk_channels, CombinedRows,
    DerivMode, NetError, NetMode, OperatorSpec, PointDerivs, TapeNet,
};
use rand::Rng;

/// Errors from residual/loss assembly.
#[derive(Debug, Error)]
pub enum PhysError {
    /// The requested side disagrees with the sign of the level set at x.
    #[error("point lies in region {found:?} but side {expected:?} was requested")]
    SideMismatch { expected: Side, found: Region },
    /// Interface normal too short to define a flux direction.
    #[error("interface normal is degenerate")]
    DegenerateNormal,
    /// A loss term has no points to average over.
    #[error("collocation class `{class}` is empty")]
    EmptyPointClass { class: &'static str },
    /// Points and targets disagree in length.
    #[error("{points} points but {targets} targets")]
    CountMismatch { points: usize, targets: usize },
    #[error(transparent)]
    Geometry(#[from] GeomError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Weights of the three physics-loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub interior: f64,
    pub boundary: f64,
    pub interface: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            interior: 1.0,
            boundary: 100.0,
            interface: 1.0,
        }
    }
}

/// Extended derivative record of a candidate field at one trunk input.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedDerivs {
    pub u: f64,
    /// ∇_xU, length d.
    pub grad_x: Vec<f64>,
    /// ∂_zU.
    pub dz: f64,
    /// Δ_xU.
    pub lap_x: f64,
    /// ∇_x(∂_zU), length d.
    pub grad_x_dz: Vec<f64>,
    /// ∂_zzU.
    pub dzz: f64,
}

impl ExtendedDerivs {
    /// Collapses a network derivative record (diagonal second derivatives)
    /// into the operator's contraction.
    pub fn from_point(p: &PointDerivs) -> Self {
        ExtendedDerivs {
            u: p.u,
            grad_x: p.dx.clone(),
            dz: p.dz,
            lap_x: p.dxx.iter().sum(),
            grad_x_dz: p.dxdz.clone(),
            dzz: p.dzz,
        }
    }
}

/// The trunk's augmented coordinate at a spatial point: Φ(x).
pub fn augmented_coordinate(problem: &ProblemSpec, x: &[f64]) -> f64 {
    problem
        .augmentation
        .value(phi_value(&problem.level_set, x))
}

/// Interior residual of the extended field at `x` on the given side:
/// −a·(Δ_xU + 2∇Φ·∇_x(∂_zU) + |∇Φ|²·∂_zzU + ∂_zU·ΔΦ) − ∇a·(∇_xU + ∂_zU·∇Φ)
/// + b·U − f(x), with all Φ derivatives taken one-sided.
pub fn extended_residual(
    problem: &ProblemSpec,
    d: &ExtendedDerivs,
    x: &[f64],
    side: Side,
) -> Result<f64, PhysError> {
    let region = region_of(&problem.level_set, x, INTERFACE_TOL);
    if region.side() != Some(side) {
        return Err(PhysError::SideMismatch {
            expected: side,
            found: region,
        });
    }
    let aug = aug_eval(&problem.level_set, problem.augmentation, x, side)?;
    let a = problem.diffusion.field_eval(x, side);
    let b = problem.reaction.value(x, side);
    let f = problem.source.value(x, side);

    let dim = problem.dim();
    let mut mixed = 0.0;
    let mut norm2 = 0.0;
    let mut coeff_term = 0.0;
    for i in 0..dim {
        mixed += aug.grad[i] * d.grad_x_dz[i];
        norm2 += aug.grad[i] * aug.grad[i];
        coeff_term += a.grad[i] * (d.grad_x[i] + d.dz * aug.grad[i]);
    }
    let second = d.lap_x + 2.0 * mixed + norm2 * d.dzz + d.dz * aug.lap;
    Ok(-a.value * second - coeff_term + b * d.u - f)
}

/// Conormal flux jump across Γ minus the prescribed jump datum:
/// a⁺(∇_xU⁺ + ∂_zU⁺·∇Φ⁺)·n − a⁻(∇_xU⁻ + ∂_zU⁻·∇Φ⁻)·n − g_N(x).
///
/// For the operator network both derivative records are evaluated at the
/// same trunk input (x, 0), so only the one-sided ∇Φ± distinguish the sides.
pub fn interface_flux_jump(
    problem: &ProblemSpec,
    d_plus: &ExtendedDerivs,
    d_minus: &ExtendedDerivs,
    pt: &InterfacePoint,
) -> Result<f64, PhysError> {
    let norm2: f64 = pt.normal.iter().map(|n| n * n).sum();
    if !(norm2 > 1e-12) {
        return Err(PhysError::DegenerateNormal);
    }
    let a_plus = problem.diffusion.value(&pt.x, Side::Plus);
    let a_minus = problem.diffusion.value(&pt.x, Side::Minus);
    let dim = problem.dim();
    let mut flux_plus = 0.0;
    let mut flux_minus = 0.0;
    for i in 0..dim {
        flux_plus += (d_plus.grad_x[i] + d_plus.dz * pt.grad_phi_plus[i]) * pt.normal[i];
        flux_minus += (d_minus.grad_x[i] + d_minus.dz * pt.grad_phi_minus[i]) * pt.normal[i];
    }
    Ok(a_plus * flux_plus - a_minus * flux_minus - problem.flux_jump_at(pt))
}

/// Dirichlet mismatch U − h(x) at a boundary point.
pub fn boundary_mismatch(problem: &ProblemSpec, u: f64, x: &[f64]) -> f64 {
    u - problem.boundary_value(x)
}

// ---------------------------------------------------------------------------
// Analytic extended oracle fields
// ---------------------------------------------------------------------------

struct ZProgram<'a> {
    expr: &'a Expr,
    arity: usize,
}

impl ScalarProgram for ZProgram<'_> {
    fn arity(&self) -> usize {
        self.arity
    }
    fn eval<S: Scalar>(&self, x: &[S]) -> S {
        self.expr.eval(x)
    }
}

/// A closed-form extended field U(x, z) per side: expressions over d+1
/// coordinates with z last. These supply the same derivative record as the
/// network and serve as exactness oracles for the operators.
#[derive(Debug, Clone)]
pub struct ExtendedField {
    pub plus: Expr,
    pub minus: Expr,
}

impl ExtendedField {
    fn side_expr(&self, side: Side) -> &Expr {
        match side {
            Side::Plus => &self.plus,
            Side::Minus => &self.minus,
        }
    }

    pub fn value(&self, x: &[f64], z: f64, side: Side) -> f64 {
        let mut input = x.to_vec();
        input.push(z);
        self.side_expr(side).value(&input)
    }

    /// Full extended derivative record via a second-order jet sweep over the
    /// d+1 trunk inputs.
    pub fn derivs(&self, x: &[f64], z: f64, side: Side) -> ExtendedDerivs {
        let d = x.len();
        let mut input = x.to_vec();
        input.push(z);
        let program = ZProgram {
            expr: self.side_expr(side),
            arity: d + 1,
        };
        let jet = jet_eval_all(&program, &input);
        ExtendedDerivs {
            u: jet.val,
            grad_x: (0..d).map(|a| jet.d1(a)).collect(),
            dz: jet.d1(d),
            lap_x: (0..d).map(|a| jet.d2(a, a)).sum(),
            grad_x_dz: (0..d).map(|a| jet.d2(a, d)).collect(),
            dzz: jet.d2(d, d),
        }
    }
}

/// The circular-interface family's exact solution written in extended
/// coordinates: with the fold coordinate z = |x² + y² − r0²|, the radius
/// satisfies r² = z + r0² on the outer side and r² = r0² − z inside, so the
/// solution r³-profile becomes a pure function of z.
pub fn disk_extended_field(radius: f64) -> ExtendedField {
    let (a_plus, a_minus) = (1000.0, 1.0);
    let r0sq = radius * radius;
    let z = Expr::coord(2);
    let plus = (Expr::constant(1.0) - (z.clone() + Expr::constant(r0sq)).powf(1.5))
        * Expr::constant(1.0 / a_plus);
    let c = (1.0 - radius.powi(3)) / a_plus + radius.powi(3) / a_minus;
    let minus = Expr::constant(c)
        - (Expr::constant(r0sq) - z).powf(1.5) * Expr::constant(1.0 / a_minus);
    ExtendedField { plus, minus }
}

/// The star family's solution after jump homogenization: continuous,
/// independent of the augmented coordinate, identical on both sides.
pub fn star_homogenized_extended_field() -> ExtendedField {
    let w = Expr::constant(1.0)
        / (Expr::constant(1.0) + Expr::constant(10.0) * Expr::radius2(2));
    ExtendedField {
        plus: w.clone(),
        minus: w,
    }
}

// ---------------------------------------------------------------------------
// Collocation
// ---------------------------------------------------------------------------

/// Fixed collocation points of one training sample.
#[derive(Debug, Clone)]
pub struct CollocationSet {
    /// Interior points with their side labels.
    pub interior: Vec<(Vec<f64>, Side)>,
    pub boundary: Vec<Vec<f64>>,
    pub interface: Vec<InterfacePoint>,
}

/// Draws a collocation set for one problem instance.
pub fn sample_collocation(
    problem: &ProblemSpec,
    n_interior: usize,
    n_boundary: usize,
    n_interface: usize,
    rng: &mut impl Rng,
) -> Result<CollocationSet, PhysError> {
    let interior = sample_interior(&problem.domain, &problem.level_set, n_interior, rng)
        .into_iter()
        .map(|(x, region)| {
            let side = region.side().expect("interior sampling rejects Γ");
            (x, side)
        })
        .collect();
    let boundary = sample_boundary(&problem.domain, n_boundary, rng);
    let interface = sample_interface(
        &problem.level_set,
        problem.augmentation,
        n_interface,
        rng,
    )?;
    Ok(CollocationSet {
        interior,
        boundary,
        interface,
    })
}

// ---------------------------------------------------------------------------
// Oracle (plain-value) physics loss
// ---------------------------------------------------------------------------

/// Physics loss of an analytic extended field — the network-free path used
/// to certify the operator implementation against exact solutions.
pub fn oracle_physics_loss(
    problem: &ProblemSpec,
    field: &ExtendedField,
    colloc: &CollocationSet,
    weights: &LossWeights,
) -> Result<f64, PhysError> {
    if colloc.interior.is_empty() {
        return Err(PhysError::EmptyPointClass { class: "interior" });
    }
    if colloc.boundary.is_empty() {
        return Err(PhysError::EmptyPointClass { class: "boundary" });
    }
    if colloc.interface.is_empty() {
        return Err(PhysError::EmptyPointClass { class: "interface" });
    }
    let mut ssq_interior = 0.0;
    for (x, side) in &colloc.interior {
        let z = augmented_coordinate(problem, x);
        let d = field.derivs(x, z, *side);
        let r = extended_residual(problem, &d, x, *side)?;
        ssq_interior += r * r;
    }
    let mut ssq_boundary = 0.0;
    for x in &colloc.boundary {
        let z = augmented_coordinate(problem, x);
        let side = region_of(&problem.level_set, x, INTERFACE_TOL)
            .side()
            .unwrap_or(Side::Plus);
        let m = boundary_mismatch(problem, field.value(x, z, side), x);
        ssq_boundary += m * m;
    }
    let mut ssq_interface = 0.0;
    for pt in &colloc.interface {
        let d_plus = field.derivs(&pt.x, 0.0, Side::Plus);
        let d_minus = field.derivs(&pt.x, 0.0, Side::Minus);
        let j = interface_flux_jump(problem, &d_plus, &d_minus, pt)?;
        ssq_interface += j * j;
    }
    Ok(
        weights.interior * ssq_interior / colloc.interior.len() as f64
            + weights.boundary * ssq_boundary / colloc.boundary.len() as f64
            + weights.interface * ssq_interface / colloc.interface.len() as f64,
    )
}

// ---------------------------------------------------------------------------
// Tape losses
// ---------------------------------------------------------------------------

/// Per-class point totals a loss is normalized by. When a batch is split
/// into chunks, every chunk must normalize by the full batch's totals so the
/// chunk losses sum to the batch loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCounts {
    pub interior: usize,
    pub boundary: usize,
    pub interface: usize,
}

impl ClassCounts {
    pub fn of(batch: &[(&ProblemSpec, &CollocationSet)]) -> Self {
        ClassCounts {
            interior: batch.iter().map(|(_, c)| c.interior.len()).sum(),
            boundary: batch.iter().map(|(_, c)| c.boundary.len()).sum(),
            interface: batch.iter().map(|(_, c)| c.interface.len()).sum(),
        }
    }
}

/// The physics loss and its weighted per-class components, all tape scalars.
pub struct PhysicsLoss {
    pub total: BufId,
    pub interior: BufId,
    pub boundary: BufId,
    pub interface: BufId,
}

/// Mean-of-squares physics loss of the network over a batch, normalizing
/// each class by the totals in `counts`.
pub fn loss_physics_normalized(
    tape: &mut Tape,
    net: &TapeNet,
    op: &OperatorSpec,
    weights: &LossWeights,
    batch: &[(&ProblemSpec, &CollocationSet)],
    counts: &ClassCounts,
) -> Result<PhysicsLoss, PhysError> {
    if op.mode == NetMode::Baseline {
        return Err(PhysError::Net(NetError::BaselineDerivatives));
    }
    if counts.interior == 0 {
        return Err(PhysError::EmptyPointClass { class: "interior" });
    }
    if counts.boundary == 0 {
        return Err(PhysError::EmptyPointClass { class: "boundary" });
    }
    if counts.interface == 0 {
        return Err(PhysError::EmptyPointClass { class: "interface" });
    }
    let din = op.trunk_input_dim();

    // One shared trunk batch: per sample the interior, boundary, and
    // interface points occupy consecutive column blocks.
    let mut flat: Vec<f64> = Vec::new();
    for (problem, colloc) in batch {
        for (x, _) in &colloc.interior {
            flat.extend_from_slice(x);
            flat.push(augmented_coordinate(problem, x));
        }
        for x in &colloc.boundary {
            flat.extend_from_slice(x);
            flat.push(augmented_coordinate(problem, x));
        }
        for pt in &colloc.interface {
            flat.extend_from_slice(&pt.x);
            flat.push(0.0);
        }
    }
    let (p_total, data) = points_to_matrix(&flat, din);
    let x_buf = tape.constant(din, p_total, data);
    let ch = trunk_channels(tape, &net.trunk, op.trunk.activation, x_buf, DerivMode::SecondOrder)?;

    let mut sq_interior: Vec<BufId> = Vec::new();
    let mut sq_boundary: Vec<BufId> = Vec::new();
    let mut sq_interface: Vec<BufId> = Vec::new();
    let mut col = 0usize;
    for (problem, colloc) in batch {
        let f_vals = problem.f_sensor_values();
        let phi_vals = problem.phi_sensor_values();
        let coeff = branch_coefficients(tape, net, op, &f_vals, Some(&phi_vals));
        let d = problem.dim();

        if !colloc.interior.is_empty() {
            let n = colloc.interior.len();
            let rows = combine_function(tape, coeff, net.b0, &ch, col, n);
            col += n;
            let r = interior_residual_row(tape, problem, &colloc.interior, &rows, d, din)?;
            sq_interior.push(tape.sum_squares(r));
        }
        if !colloc.boundary.is_empty() {
            let n = colloc.boundary.len();
            let rows = combine_function(tape, coeff, net.b0, &ch, col, n);
            col += n;
            let h_vals: Vec<f64> = colloc.boundary.iter().map(|x| problem.boundary_value(x)).collect();
            let h_row = tape.constant(1, n, h_vals);
            let mismatch = tape.sub(rows.value, h_row);
            sq_boundary.push(tape.sum_squares(mismatch));
        }
        if !colloc.interface.is_empty() {
            let n = colloc.interface.len();
            let rows = combine_function(tape, coeff, net.b0, &ch, col, n);
            col += n;
            let j = interface_jump_row(tape, problem, &colloc.interface, &rows, d)?;
            sq_interface.push(tape.sum_squares(j));
        }
    }
    debug_assert_eq!(col, p_total);

    let interior_sum = tape.sum_list(&sq_interior);
    let boundary_sum = tape.sum_list(&sq_boundary);
    let interface_sum = tape.sum_list(&sq_interface);
    let interior = tape.scale(interior_sum, weights.interior / counts.interior as f64);
    let boundary = tape.scale(boundary_sum, weights.boundary / counts.boundary as f64);
    let interface = tape.scale(interface_sum, weights.interface / counts.interface as f64);
    let partial = tape.add(interior, boundary);
    let total = tape.add(partial, interface);
    Ok(PhysicsLoss {
        total,
        interior,
        boundary,
        interface,
    })
}

/// [`loss_physics_normalized`] with totals taken from the batch itself.
pub fn loss_physics(
    tape: &mut Tape,
    net: &TapeNet,
    op: &OperatorSpec,
    weights: &LossWeights,
    batch: &[(&ProblemSpec, &CollocationSet)],
) -> Result<PhysicsLoss, PhysError> {
    let counts = ClassCounts::of(batch);
    loss_physics_normalized(tape, net, op, weights, batch, &counts)
}

/// Builds the 1×n residual row for one sample's interior block from the
/// combined network rows and per-point coefficient data.
fn interior_residual_row(
    tape: &mut Tape,
    problem: &ProblemSpec,
    interior: &[(Vec<f64>, Side)],
    rows: &CombinedRows,
    d: usize,
    din: usize,
) -> Result<BufId, PhysError> {
    let n = interior.len();
    let mut a_vals = Vec::with_capacity(n);
    let mut b_vals = Vec::with_capacity(n);
    let mut f_vals = Vec::with_capacity(n);
    let mut aug_lap = Vec::with_capacity(n);
    let mut aug_norm2 = Vec::with_capacity(n);
    let mut aug_grad = vec![Vec::with_capacity(n); d];
    let mut a_grad = vec![Vec::with_capacity(n); d];
    for (x, side) in interior {
        let region = region_of(&problem.level_set, x, INTERFACE_TOL);
        if region.side() != Some(*side) {
            return Err(PhysError::SideMismatch {
                expected: *side,
                found: region,
            });
        }
        let aug = aug_eval(&problem.level_set, problem.augmentation, x, *side)?;
        let a = problem.diffusion.field_eval(x, *side);
        a_vals.push(a.value);
        b_vals.push(problem.reaction.value(x, *side));
        f_vals.push(problem.source.value(x, *side));
        aug_lap.push(aug.lap);
        aug_norm2.push(aug.grad.iter().map(|g| g * g).sum());
        for i in 0..d {
            aug_grad[i].push(aug.grad[i]);
            a_grad[i].push(a.grad[i]);
        }
    }
    let a_row = tape.constant(1, n, a_vals);
    let b_row = tape.constant(1, n, b_vals);
    let f_row = tape.constant(1, n, f_vals);
    let aug_lap_row = tape.constant(1, n, aug_lap);
    let norm2_row = tape.constant(1, n, aug_norm2);
    let aug_grad_rows: Vec<BufId> = aug_grad
        .into_iter()
        .map(|v| tape.constant(1, n, v))
        .collect();
    let a_grad_rows: Vec<BufId> = a_grad
        .into_iter()
        .map(|v| tape.constant(1, n, v))
        .collect();

    let dz_row = rows.d1[d];
    // Δ_xU: sum of the spatial diagonal second derivatives.
    let mut lap_row = rows.d2[0];
    for a in 1..d {
        lap_row = tape.add(lap_row, rows.d2[a]);
    }
    // 2 Σ_i ∂Φ/∂x_i · ∂²U/∂x_i∂z, with the mixed pairs stored after the
    // diagonal block.
    let mut mixed_acc: Option<BufId> = None;
    for i in 0..d {
        let term = tape.mul(aug_grad_rows[i], rows.d2[din + i]);
        mixed_acc = Some(match mixed_acc {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    let mixed2 = tape.scale(mixed_acc.expect("d >= 1"), 2.0);
    let curved = tape.mul(norm2_row, rows.d2[d]);
    let folded = tape.mul(dz_row, aug_lap_row);
    let s1 = tape.add(lap_row, mixed2);
    let s2 = tape.add(s1, curved);
    let second = tape.add(s2, folded);

    // ∇a·(∇_xU + ∂_zU·∇Φ).
    let mut coeff_acc: Option<BufId> = None;
    for i in 0..d {
        let fold_i = tape.mul(dz_row, aug_grad_rows[i]);
        let inner = tape.add(rows.d1[i], fold_i);
        let term = tape.mul(a_grad_rows[i], inner);
        coeff_acc = Some(match coeff_acc {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    let coeff_term = coeff_acc.expect("d >= 1");

    let diffusion = tape.mul(a_row, second);
    let minus_diffusion = tape.neg(diffusion);
    let reaction = tape.mul(b_row, rows.value);
    let t1 = tape.sub(minus_diffusion, coeff_term);
    let t2 = tape.add(t1, reaction);
    Ok(tape.sub(t2, f_row))
}

/// Builds the 1×n flux-jump row for one sample's interface block.
fn interface_jump_row(
    tape: &mut Tape,
    problem: &ProblemSpec,
    interface: &[InterfacePoint],
    rows: &CombinedRows,
    d: usize,
) -> Result<BufId, PhysError> {
    let n = interface.len();
    let mut ap_vals = Vec::with_capacity(n);
    let mut am_vals = Vec::with_capacity(n);
    let mut gn_vals = Vec::with_capacity(n);
    let mut gp_vals = Vec::with_capacity(n);
    let mut gm_vals = Vec::with_capacity(n);
    let mut n_axis = vec![Vec::with_capacity(n); d];
    for pt in interface {
        let norm2: f64 = pt.normal.iter().map(|v| v * v).sum();
        if !(norm2 > 1e-12) {
            return Err(PhysError::DegenerateNormal);
        }
        ap_vals.push(problem.diffusion.value(&pt.x, Side::Plus));
        am_vals.push(problem.diffusion.value(&pt.x, Side::Minus));
        gn_vals.push(problem.flux_jump_at(pt));
        gp_vals.push(
            pt.grad_phi_plus
                .iter()
                .zip(&pt.normal)
                .map(|(g, nn)| g * nn)
                .sum(),
        );
        gm_vals.push(
            pt.grad_phi_minus
                .iter()
                .zip(&pt.normal)
                .map(|(g, nn)| g * nn)
                .sum(),
        );
        for i in 0..d {
            n_axis[i].push(pt.normal[i]);
        }
    }
    let ap_row = tape.constant(1, n, ap_vals);
    let am_row = tape.constant(1, n, am_vals);
    let gn_row = tape.constant(1, n, gn_vals);
    let gp_row = tape.constant(1, n, gp_vals);
    let gm_row = tape.constant(1, n, gm_vals);
    let n_rows: Vec<BufId> = n_axis.into_iter().map(|v| tape.constant(1, n, v)).collect();

    // ∇_xU·n, shared by both sides (same trunk input at z = 0).
    let mut dxn: Option<BufId> = None;
    for i in 0..d {
        let term = tape.mul(n_rows[i], rows.d1[i]);
        dxn = Some(match dxn {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    let dxn = dxn.expect("d >= 1");
    let dz_row = rows.d1[d];
    let foldp = tape.mul(dz_row, gp_row);
    let plus_inner = tape.add(dxn, foldp);
    let flux_plus = tape.mul(ap_row, plus_inner);
    let foldm = tape.mul(dz_row, gm_row);
    let minus_inner = tape.add(dxn, foldm);
    let flux_minus = tape.mul(am_row, minus_inner);
    let jump = tape.sub(flux_plus, flux_minus);
    Ok(tape.sub(jump, gn_row))
}

/// One sample of a supervised training batch.
#[derive(Debug, Clone)]
pub struct DataSample<'a> {
    pub f_sensors: &'a [f64],
    pub phi_sensors: Option<&'a [f64]>,
    /// Trunk inputs, point-major with the trunk input dimension as stride.
    pub trunk_inputs: &'a [f64],
    pub targets: &'a [f64],
}

/// Mean squared prediction error over the batch with an explicit
/// total-count normalizer (for chunked evaluation).
pub fn loss_data_normalized(
    tape: &mut Tape,
    net: &TapeNet,
    op: &OperatorSpec,
    batch: &[DataSample<'_>],
    total_points: usize,
) -> Result<BufId, PhysError> {
    let din = op.trunk_input_dim();
    for s in batch {
        let points = s.trunk_inputs.len() / din;
        if points * din != s.trunk_inputs.len() || points != s.targets.len() {
            return Err(PhysError::CountMismatch {
                points,
                targets: s.targets.len(),
            });
        }
    }
    if total_points == 0 {
        return Err(PhysError::EmptyPointClass { class: "data" });
    }
    let mut flat: Vec<f64> = Vec::new();
    for s in batch {
        flat.extend_from_slice(s.trunk_inputs);
    }
    let (p_total, data) = points_to_matrix(&flat, din);
    let x_buf = tape.constant(din, p_total, data);
    let ch = trunk_channels(tape, &net.trunk, op.trunk.activation, x_buf, DerivMode::ValueOnly)?;

    let mut sq: Vec<BufId> = Vec::new();
    let mut col = 0usize;
    for s in batch {
        let n = s.targets.len();
        if n == 0 {
            continue;
        }
        let coeff = branch_coefficients(tape, net, op, s.f_sensors, s.phi_sensors);
        let rows = combine_function(tape, coeff, net.b0, &ch, col, n);
        col += n;
        let t_row = tape.constant(1, n, s.targets.to_vec());
        let err = tape.sub(rows.value, t_row);
        sq.push(tape.sum_squares(err));
    }
    let sum = tape.sum_list(&sq);
    Ok(tape.scale(sum, 1.0 / total_points as f64))
}

/// [`loss_data_normalized`] with the total taken from the batch itself.
pub fn loss_data(
    tape: &mut Tape,
    net: &TapeNet,
    op: &OperatorSpec,
    batch: &[DataSample<'_>],
) -> Result<BufId, PhysError> {
    let total = batch.iter().map(|s| s.targets.len()).sum();
    loss_data_normalized(tape, net, op, batch, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldgen::{
        default_extension, homogenize, problem_for_example, rod_problem_from_source, ExampleId,
        ExampleParams, PiecewiseField, SideProgram,
    };
    use crate::geom::{Augmentation, Domain, LevelSet};
    use crate::opnet::{extended_derivs, init_params, register_network, Activation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Bare 1D problem with unit diffusion and configurable reaction/source,
    /// for hand-checkable residuals.
    fn bare_rod(b: f64, source: PiecewiseField) -> ProblemSpec {
        ProblemSpec {
            example: ExampleId::Rod1d,
            params: ExampleParams::Rod1d { interface: 0.5 },
            domain: Domain::Interval,
            level_set: LevelSet::Affine1d { p: 0.5 },
            augmentation: Augmentation::Abs,
            diffusion: PiecewiseField::constant(1.0),
            reaction: PiecewiseField::constant(b),
            source,
            dirichlet_jump: crate::fieldgen::InterfaceData::Zero,
            flux_jump: crate::fieldgen::InterfaceData::Zero,
            boundary: PiecewiseField::constant(0.0),
            sensors: Vec::new(),
            a_floor: 1.0,
            exact: None,
        }
    }

    #[test]
    fn fold_square_field_has_constant_residual() {
        // U(x, z) = z² with the fold z = |x − ½| represents u = (x − ½)²,
        // so the residual of −u″ is −2 on both sides.
        let problem = bare_rod(0.0, PiecewiseField::constant(0.0));
        let field = ExtendedField {
            plus: Expr::coord(1) * Expr::coord(1),
            minus: Expr::coord(1) * Expr::coord(1),
        };
        for (x, side) in [(0.3, Side::Minus), (0.8, Side::Plus)] {
            let z = augmented_coordinate(&problem, &[x]);
            let d = field.derivs(&[x], z, side);
            let r = extended_residual(&problem, &d, &[x], side).unwrap();
            assert_eq!(r, -2.0, "residual at {x}");
        }
        // A constant field with b = 0 and f = 0 has zero residual.
        let constant = ExtendedField {
            plus: Expr::constant(4.2),
            minus: Expr::constant(4.2),
        };
        let d = constant.derivs(&[0.3], 0.2, Side::Minus);
        assert_eq!(extended_residual(&problem, &d, &[0.3], Side::Minus).unwrap(), 0.0);
    }

    #[test]
    fn reaction_term_enters_residual() {
        let problem = bare_rod(3.0, PiecewiseField::constant(0.0));
        let field = ExtendedField {
            plus: Expr::coord(1) * Expr::coord(1),
            minus: Expr::coord(1) * Expr::coord(1),
        };
        let x = 0.8;
        let z = (x - 0.5_f64).abs();
        let d = field.derivs(&[x], z, Side::Plus);
        let r = extended_residual(&problem, &d, &[x], Side::Plus).unwrap();
        let expected = -2.0 + 3.0 * z * z;
        assert!((r - expected).abs() < 1e-15, "{r} vs {expected}");
    }

    #[test]
    fn residual_rejects_wrong_side() {
        let problem = bare_rod(0.0, PiecewiseField::constant(0.0));
        let field = ExtendedField {
            plus: Expr::constant(0.0),
            minus: Expr::constant(0.0),
        };
        let d = field.derivs(&[0.3], 0.2, Side::Plus);
        assert!(matches!(
            extended_residual(&problem, &d, &[0.3], Side::Plus),
            Err(PhysError::SideMismatch { .. })
        ));
    }

    #[test]
    fn flux_jump_hand_value() {
        // a⁺ = 0.5, a⁻ = 0.1, ∇_xU = 1, ∂_zU = 2, ∇φ·n = 1, g_N = 0:
        // 0.5·(1 + 2·1) − 0.1·(1 + 2·(−1)) = 1.5 + 0.1 = 1.6.
        let params = ExampleParams::Rod1d { interface: 0.5 };
        let source = PiecewiseField::constant(0.0);
        let problem = rod_problem_from_source(params, source).unwrap();
        let d = ExtendedDerivs {
            u: 0.0,
            grad_x: vec![1.0],
            dz: 2.0,
            lap_x: 0.0,
            grad_x_dz: vec![0.0],
            dzz: 0.0,
        };
        let pt = InterfacePoint {
            x: vec![0.5],
            normal: vec![1.0],
            grad_phi_plus: vec![1.0],
            grad_phi_minus: vec![-1.0],
        };
        let j = interface_flux_jump(&problem, &d, &d, &pt).unwrap();
        assert_eq!(j, 1.6);

        let degenerate = InterfacePoint {
            x: vec![0.5],
            normal: vec![0.0],
            grad_phi_plus: vec![1.0],
            grad_phi_minus: vec![-1.0],
        };
        assert!(matches!(
            interface_flux_jump(&problem, &d, &d, &degenerate),
            Err(PhysError::DegenerateNormal)
        ));
    }

    #[test]
    fn boundary_mismatch_values() {
        let star = problem_for_example(
            ExampleId::SquareStar2d,
            ExampleParams::SquareStar2d {
                p1_plus: 80.0,
                p2_plus: 1600.0,
                p1_minus: 80.0,
                p2_minus: 1600.0,
                r1: 0.5,
                r2: 7.0,
            },
            0,
        )
        .unwrap();
        // h(1,1) = 2/21.
        let m = boundary_mismatch(&star, 0.0, &[1.0, 1.0]);
        assert!((m + 0.09523809523809523).abs() < 1e-16);
        let h = star.boundary_value(&[1.0, 1.0]);
        assert_eq!(boundary_mismatch(&star, h, &[1.0, 1.0]), 0.0);
        // Zero boundary data returns the prediction itself.
        let rod = rod_problem_from_source(
            ExampleParams::Rod1d { interface: 0.5 },
            PiecewiseField::constant(0.0),
        )
        .unwrap();
        assert_eq!(boundary_mismatch(&rod, 0.37, &[1.0]), 0.37);
    }

    #[test]
    fn disk_oracle_satisfies_all_operators() {
        for radius in [0.5, 0.6, 0.7] {
            let problem = problem_for_example(
                ExampleId::Disk2d,
                ExampleParams::Disk2d {
                    strength: 1.0,
                    radius,
                },
                0,
            )
            .unwrap();
            let field = disk_extended_field(radius);
            let mut r = rng(17);
            let mut worst = 0.0_f64;
            for (x, region) in
                sample_interior(&problem.domain, &problem.level_set, 1000, &mut r)
            {
                let side = region.side().unwrap();
                let z = augmented_coordinate(&problem, &x);
                let d = field.derivs(&x, z, side);
                let res = extended_residual(&problem, &d, &x, side).unwrap();
                worst = worst.max(res.abs());
            }
            assert!(worst <= 1e-8, "interior residual {worst} at r0 = {radius}");

            let mut worst_flux = 0.0_f64;
            for pt in
                sample_interface(&problem.level_set, problem.augmentation, 100, &mut r).unwrap()
            {
                let dp = field.derivs(&pt.x, 0.0, Side::Plus);
                let dm = field.derivs(&pt.x, 0.0, Side::Minus);
                let j = interface_flux_jump(&problem, &dp, &dm, &pt).unwrap();
                worst_flux = worst_flux.max(j.abs());
            }
            assert!(worst_flux <= 1e-8, "flux jump {worst_flux} at r0 = {radius}");

            let colloc = sample_collocation(&problem, 200, 50, 50, &mut r).unwrap();
            let loss =
                oracle_physics_loss(&problem, &field, &colloc, &LossWeights::default()).unwrap();
            assert!(loss <= 1e-10, "oracle loss {loss} at r0 = {radius}");
        }
    }

    #[test]
    fn star_homogenized_oracle_loss_vanishes() {
        let base = problem_for_example(
            ExampleId::SquareStar2d,
            ExampleParams::SquareStar2d {
                p1_plus: 80.0,
                p2_plus: 1600.0,
                p1_minus: 80.0,
                p2_minus: 1600.0,
                r1: 0.6,
                r2: 9.0,
            },
            0,
        )
        .unwrap();
        let (problem, _) = homogenize(&base, &default_extension(&base), 5).unwrap();
        let field = star_homogenized_extended_field();
        let mut r = rng(23);
        let colloc = sample_collocation(&problem, 300, 60, 60, &mut r).unwrap();
        let loss =
            oracle_physics_loss(&problem, &field, &colloc, &LossWeights::default()).unwrap();
        assert!(loss <= 1e-10, "homogenized oracle loss {loss}");
    }

    #[test]
    fn oracle_loss_weighted_arithmetic() {
        // Zero field on a source f(x) = −10x: residuals are 10x, so points
        // at x = 0.1, 0.3 give 1 and 3 and the interior term is β·(1+9)/2.
        let f = PiecewiseField::closed(
            Expr::constant(-10.0) * Expr::coord(0),
            Expr::constant(-10.0) * Expr::coord(0),
        );
        let problem = bare_rod(0.0, f);
        let zero = ExtendedField {
            plus: Expr::constant(0.0),
            minus: Expr::constant(0.0),
        };
        let colloc = CollocationSet {
            interior: vec![(vec![0.1], Side::Minus), (vec![0.3], Side::Minus)],
            boundary: vec![vec![0.0]],
            interface: vec![InterfacePoint {
                x: vec![0.5],
                normal: vec![1.0],
                grad_phi_plus: vec![1.0],
                grad_phi_minus: vec![-1.0],
            }],
        };
        let weights = LossWeights {
            interior: 2.0,
            boundary: 0.0,
            interface: 0.0,
        };
        let loss = oracle_physics_loss(&problem, &zero, &colloc, &weights).unwrap();
        assert!((loss - 10.0).abs() < 1e-12, "loss {loss}");

        let empty = CollocationSet {
            interior: Vec::new(),
            boundary: colloc.boundary.clone(),
            interface: colloc.interface.clone(),
        };
        assert!(matches!(
            oracle_physics_loss(&problem, &zero, &empty, &weights),
            Err(PhysError::EmptyPointClass { class: "interior" })
        ));
    }

    /// A small rod problem + network + collocation shared by the tape tests.
    fn small_setup() -> (ProblemSpec, OperatorSpec, Vec<f64>, CollocationSet) {
        let problem = problem_for_example(
            ExampleId::Rod1d,
            ExampleParams::Rod1d { interface: 0.55 },
            7,
        )
        .unwrap();
        let op = OperatorSpec::xi(1, 100, 6, 2, Activation::Tanh);
        let params = init_params(&op, 99);
        let mut r = rng(31);
        let colloc = sample_collocation(&problem, 6, 3, 1, &mut r).unwrap();
        (problem, op, params, colloc)
    }

    /// Plain-value recomputation of the physics loss through the per-point
    /// operators and the convenience forward pass.
    fn plain_physics_loss(
        problem: &ProblemSpec,
        op: &OperatorSpec,
        params: &[f64],
        colloc: &CollocationSet,
        weights: &LossWeights,
    ) -> f64 {
        let f_vals = problem.f_sensor_values();
        let phi_vals = problem.phi_sensor_values();
        let mut ssq_int = 0.0;
        for (x, side) in &colloc.interior {
            let z = augmented_coordinate(problem, x);
            let mut input = x.clone();
            input.push(z);
            let pd = extended_derivs(op, params, &f_vals, Some(&phi_vals), &input).unwrap();
            let d = ExtendedDerivs::from_point(&pd[0]);
            let r = extended_residual(problem, &d, x, *side).unwrap();
            ssq_int += r * r;
        }
        let mut ssq_b = 0.0;
        for x in &colloc.boundary {
            let z = augmented_coordinate(problem, x);
            let mut input = x.clone();
            input.push(z);
            let pd = extended_derivs(op, params, &f_vals, Some(&phi_vals), &input).unwrap();
            let m = boundary_mismatch(problem, pd[0].u, x);
            ssq_b += m * m;
        }
        let mut ssq_g = 0.0;
        for pt in &colloc.interface {
            let mut input = pt.x.clone();
            input.push(0.0);
            let pd = extended_derivs(op, params, &f_vals, Some(&phi_vals), &input).unwrap();
            let d = ExtendedDerivs::from_point(&pd[0]);
            let j = interface_flux_jump(problem, &d, &d, pt).unwrap();
            ssq_g += j * j;
        }
        weights.interior * ssq_int / colloc.interior.len() as f64
            + weights.boundary * ssq_b / colloc.boundary.len() as f64
            + weights.interface * ssq_g / colloc.interface.len() as f64
    }

    #[test]
    fn tape_loss_matches_plain_recomputation() {
        let (problem, op, params, colloc) = small_setup();
        let weights = LossWeights::default();
        let mut tape = Tape::new();
        let net = register_network(&mut tape, &op, &params);
        let loss =
            loss_physics(&mut tape, &net, &op, &weights, &[(&problem, &colloc)]).unwrap();
        let tape_val = tape.value(loss.total)[0];
        let plain = plain_physics_loss(&problem, &op, &params, &colloc, &weights);
        let dev = (tape_val - plain).abs() / plain.abs().max(1e-30);
        assert!(dev <= 1e-12, "tape {tape_val} vs plain {plain}");
    }

    #[test]
    fn zero_network_gives_zero_loss() {
        let problem = rod_problem_from_source(
            ExampleParams::Rod1d { interface: 0.5 },
            PiecewiseField::constant(0.0),
        )
        .unwrap();
        let op = OperatorSpec::xi(1, 100, 6, 2, Activation::Tanh);
        let params = vec![0.0; op.param_count()];
        let mut r = rng(5);
        let colloc = sample_collocation(&problem, 4, 2, 1, &mut r).unwrap();
        let mut tape = Tape::new();
        let net = register_network(&mut tape, &op, &params);
        let loss = loss_physics(
            &mut tape,
            &net,
            &op,
            &LossWeights::default(),
            &[(&problem, &colloc)],
        )
        .unwrap();
        assert_eq!(tape.value(loss.total)[0], 0.0);
    }

    #[test]
    fn loss_decomposes_into_weighted_terms() {
        let (problem, op, params, colloc) = small_setup();
        let batch = [(&problem, &colloc)];
        let eval = |w: LossWeights| -> (f64, f64, f64, f64) {
            let mut tape = Tape::new();
            let net = register_network(&mut tape, &op, &params);
            let l = loss_physics(&mut tape, &net, &op, &w, &batch).unwrap();
            (
                tape.value(l.total)[0],
                tape.value(l.interior)[0],
                tape.value(l.boundary)[0],
                tape.value(l.interface)[0],
            )
        };
        let w = LossWeights {
            interior: 1.3,
            boundary: 45.0,
            interface: 0.7,
        };
        let (total, li, lb, lg) = eval(w);
        assert!((total - (li + lb + lg)).abs() <= 1e-15 * total.abs().max(1.0));
        // Each component scales linearly with its weight and the plain
        // residual term survives alone when the other weights vanish.
        let (iso, li_iso, lb_iso, lg_iso) = eval(LossWeights {
            interior: 1.0,
            boundary: 0.0,
            interface: 0.0,
        });
        assert_eq!(lb_iso, 0.0);
        assert_eq!(lg_iso, 0.0);
        assert_eq!(iso, li_iso);
        assert!((li - 1.3 * li_iso).abs() <= 1e-14 * li.abs().max(1.0));
        assert!(lb > 0.0 && lg > 0.0);
    }

    #[test]
    fn loss_invariant_under_reordering() {
        let (problem, op, params, mut colloc) = small_setup();
        let mut r = rng(41);
        let second = sample_collocation(&problem, 5, 2, 2, &mut r).unwrap();
        let weights = LossWeights::default();

        let value = |batch: &[(&ProblemSpec, &CollocationSet)]| -> f64 {
            let mut tape = Tape::new();
            let net = register_network(&mut tape, &op, &params);
            let l = loss_physics(&mut tape, &net, &op, &weights, batch).unwrap();
            tape.value(l.total)[0]
        };
        let base = value(&[(&problem, &colloc), (&problem, &second)]);
        // Swap sample order.
        let swapped = value(&[(&problem, &second), (&problem, &colloc)]);
        assert!((base - swapped).abs() <= 1e-12 * base.abs().max(1.0));
        // Reverse interior points within a sample.
        colloc.interior.reverse();
        let reordered = value(&[(&problem, &colloc), (&problem, &second)]);
        assert!((base - reordered).abs() <= 1e-12 * base.abs().max(1.0));
    }

    #[test]
    fn chunked_normalization_sums_to_batch_loss() {
        let (problem, op, params, colloc) = small_setup();
        let mut r = rng(43);
        let second = sample_collocation(&problem, 5, 2, 2, &mut r).unwrap();
        let weights = LossWeights::default();
        let batch: Vec<(&ProblemSpec, &CollocationSet)> =
            vec![(&problem, &colloc), (&problem, &second)];
        let counts = ClassCounts::of(&batch);

        let full = {
            let mut tape = Tape::new();
            let net = register_network(&mut tape, &op, &params);
            let l = loss_physics(&mut tape, &net, &op, &weights, &batch).unwrap();
            tape.value(l.total)[0]
        };
        let mut chunked = 0.0;
        for chunk in batch.chunks(1) {
            let mut tape = Tape::new();
            let net = register_network(&mut tape, &op, &params);
            let l = loss_physics_normalized(&mut tape, &net, &op, &weights, chunk, &counts)
                .unwrap();
            chunked += tape.value(l.total)[0];
        }
        assert!((full - chunked).abs() <= 1e-13 * full.abs().max(1.0));
    }

    #[test]
    fn physics_gradient_matches_finite_differences() {
        let (problem, op, mut params, colloc) = small_setup();
        let weights = LossWeights::default();
        let batch = [(&problem, &colloc)];

        let eval = |p: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let net = register_network(&mut tape, &op, p);
            let l = loss_physics(&mut tape, &net, &op, &weights, &batch).unwrap();
            tape.value(l.total)[0]
        };
        let grad = {
            let mut tape = Tape::new();
            let net = register_network(&mut tape, &op, &params);
            let l = loss_physics(&mut tape, &net, &op, &weights, &batch).unwrap();
            tape.gradient(l.total, op.param_count()).unwrap()
        };
        let mut r = rng(77);
        let mut checked = 0;
        while checked < 20 {
            let idx = r.random_range(0..params.len());
            let h = 1e-4 * params[idx].abs().max(1.0);
            let saved = params[idx];
            params[idx] = saved + h;
            let up = eval(&params);
            params[idx] = saved - h;
            let down = eval(&params);
            params[idx] = saved;
            let fd = (up - down) / (2.0 * h);
            if fd.abs() < 1e-8 {
                continue; // too flat for a meaningful relative comparison
            }
            let dev = (grad[idx] - fd).abs() / fd.abs().max(grad[idx].abs());
            assert!(dev <= 1e-5, "param {idx}: tape {} vs fd {fd}", grad[idx]);
            checked += 1;
        }
    }

    #[test]
    fn data_loss_matches_hand_values() {
        let op = OperatorSpec::xi(1, 100, 6, 2, Activation::Tanh);
        let params = vec![0.0; op.param_count()];
        let f_sensors = vec![0.0; 100];
        let phi_sensors = vec![0.0; 100];
        let trunk_inputs = vec![0.3, 0.2];
        // Zero network, target −2: squared error 4.
        let targets = vec![-2.0];
        let sample = DataSample {
            f_sensors: &f_sensors,
            phi_sensors: Some(&phi_sensors),
            trunk_inputs: &trunk_inputs,
            targets: &targets,
        };
        let mut tape = Tape::new();
        let net = register_network(&mut tape, &op, &params);
        let loss = loss_data(&mut tape, &net, &op, &[sample.clone()]).unwrap();
        assert_eq!(tape.value(loss)[0], 4.0);
        // Matching targets give zero.
        let zeros = vec![0.0];
        let matching = DataSample {
            targets: &zeros,
            ..sample.clone()
        };
        let mut tape = Tape::new();
        let net = register_network(&mut tape, &op, &params);
        let loss = loss_data(&mut tape, &net, &op, &[matching]).unwrap();
        assert_eq!(tape.value(loss)[0], 0.0);
        // Mismatched counts are rejected.
        let two_targets = vec![1.0, 2.0];
        let bad = DataSample {
            targets: &two_targets,
            ..sample
        };
        let mut tape = Tape::new();
        let net = register_network(&mut tape, &op, &params);
        assert!(matches!(
            loss_data(&mut tape, &net, &op, &[bad]),
            Err(PhysError::CountMismatch { .. })
        ));
    }

    #[test]
    fn data_loss_invariant_under_pair_permutation() {
        let op = OperatorSpec::xi(1, 100, 6, 2, Activation::Tanh);
        let params = init_params(&op, 3);
        let mut r = rng(9);
        let f_sensors: Vec<f64> = (0..100).map(|_| r.random_range(-1.0..1.0)).collect();
        let phi_sensors: Vec<f64> = (0..100).map(|_| r.random_range(0.0..0.5)).collect();
        let n = 7;
        let inputs: Vec<f64> = (0..2 * n).map(|_| r.random_range(0.0..1.0)).collect();
        let targets: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        // Permute the (point, target) pairs jointly.
        let perm = [3usize, 0, 6, 1, 5, 2, 4];
        let inputs_p: Vec<f64> = perm
            .iter()
            .flat_map(|&i| inputs[2 * i..2 * i + 2].to_vec())
            .collect();
        let targets_p: Vec<f64> = perm.iter().map(|&i| targets[i]).collect();

        let value = |ins: &[f64], tgt: &[f64]| -> f64 {
            let mut tape = Tape::new();
            let net = register_network(&mut tape, &op, &params);
            let sample = DataSample {
                f_sensors: &f_sensors,
                phi_sensors: Some(&phi_sensors),
                trunk_inputs: ins,
                targets: tgt,
            };
            let loss = loss_data(&mut tape, &net, &op, &[sample]).unwrap();
            tape.value(loss)[0]
        };
        let a = value(&inputs, &targets);
        let b = value(&inputs_p, &targets_p);
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn data_loss_supports_baseline_networks() {
        // Baseline mode: no level-set branch, trunk sees x only.
        let op = OperatorSpec::baseline(1, 100, 6, 2, Activation::Tanh);
        let params = init_params(&op, 11);
        let mut r = rng(13);
        let f_sensors: Vec<f64> = (0..100).map(|_| r.random_range(-1.0..1.0)).collect();
        let inputs = vec![0.25, 0.5, 0.75];
        let targets = vec![0.0, 0.0, 0.0];
        let sample = DataSample {
            f_sensors: &f_sensors,
            phi_sensors: None,
            trunk_inputs: &inputs,
            targets: &targets,
        };
        let mut tape = Tape::new();
        let net = register_network(&mut tape, &op, &params);
        let loss = loss_data(&mut tape, &net, &op, &[sample]).unwrap();
        let got = tape.value(loss)[0];
        // Independent recomputation through the convenience forward pass.
        let preds = crate::opnet::forward_values(&op, &params, &f_sensors, None, &inputs);
        let want: f64 = preds.iter().map(|p| p * p).sum::<f64>() / 3.0;
        assert!((got - want).abs() <= 1e-14 * want.abs().max(1.0));
        // The physics loss refuses baseline networks.
        let mut r2 = rng(14);
        let problem = problem_for_example(
            ExampleId::Rod1d,
            ExampleParams::Rod1d { interface: 0.5 },
            1,
        )
        .unwrap();
        let colloc = sample_collocation(&problem, 2, 1, 1, &mut r2).unwrap();
        let mut tape = Tape::new();
        let net = register_network(&mut tape, &op, &params);
        assert!(loss_physics(
            &mut tape,
            &net,
            &op,
            &LossWeights::default(),
            &[(&problem, &colloc)]
        )
        .is_err());
    }

    #[test]
    fn rod_source_fields_work_in_the_tape_loss() {
        // End-to-end sanity on a real random-source rod instance: finite
        // loss, strictly positive for a random network.
        let (problem, op, params, colloc) = small_setup();
        let mut tape = Tape::new();
        let net = register_network(&mut tape, &op, &params);
        let l = loss_physics(
            &mut tape,
            &net,
            &op,
            &LossWeights::default(),
            &[(&problem, &colloc)],
        )
        .unwrap();
        let v = tape.value(l.total)[0];
        assert!(v.is_finite() && v > 0.0);
        let SideProgram::Tabulated(_) = &problem.source.plus else {
            panic!("rod sources should be tabulated");
        };
    }
}
