//! Operator networks with an interface-aware trunk input.
//!
//! The network predicts a field value from two kinds of inputs: a function
//! sampled at fixed sensor locations (fed to branch nets) and a query point
//! fed to a trunk net. The prediction is a latent inner product
//!
//!   U(f, Φ)(x, z) = Σᵢ tᵢ(x, z) · b1ᵢ(f) · b2ᵢ(Φ) + b0,
//!
//! where z = Φ(x) is a level-set augmentation coordinate appended to the
//! trunk input. Because both sides of a material interface share the trunk
//! input (x, 0) on the interface itself, predicted fields are continuous
//! across it by construction while normal derivatives may jump.
//!
//! The trunk is evaluated on a whole batch of points at once; alongside the
//! value channel the builder can propagate first- and second-derivative
//! channels with respect to the trunk inputs analytically through every
//! layer, which is what the physics residual needs.

use crate::diffcore::{BufId, ParamLayout, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

/// Fully connected net: `widths = [input, hidden..., output]`, activation on
/// hidden layers, affine final layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    /// `depth` affine layers: input → width × (depth-1 hidden) → width out.
    pub fn uniform(input: usize, width: usize, depth: usize, activation: Activation) -> Self {
        assert!(depth >= 1, "need at least one affine layer");
        let mut widths = Vec::with_capacity(depth + 1);
        widths.push(input);
        widths.extend(std::iter::repeat(width).take(depth));
        MlpSpec { widths, activation }
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn output(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[1] * (w[0] + 1))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetMode {
    /// Two branches (function sensors, level-set sensors) and a trunk that
    /// sees (x, z).
    Xi,
    /// One branch and a trunk that sees x only.
    Baseline,
}

/// Full architecture of an operator network.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    pub mode: NetMode,
    /// Spatial dimension d of query points.
    pub dim: usize,
    /// Sensor count k per input function.
    pub sensors: usize,
    pub branch_f: MlpSpec,
    /// Present only in `Xi` mode.
    pub branch_phi: Option<MlpSpec>,
    pub trunk: MlpSpec,
}

impl OperatorSpec {
    /// Interface-aware network: two width/depth-matched branches over k
    /// sensors each, trunk over (x, z) ∈ ℝ^{d+1}.
    pub fn xi(dim: usize, sensors: usize, width: usize, depth: usize, activation: Activation) -> Self {
        OperatorSpec {
            mode: NetMode::Xi,
            dim,
            sensors,
            branch_f: MlpSpec::uniform(sensors, width, depth, activation),
            branch_phi: Some(MlpSpec::uniform(sensors, width, depth, activation)),
            trunk: MlpSpec::uniform(dim + 1, width, depth, activation),
        }
    }

    /// Plain operator network: one branch, trunk over x ∈ ℝ^d.
    pub fn baseline(
        dim: usize,
        sensors: usize,
        width: usize,
        depth: usize,
        activation: Activation,
    ) -> Self {
        OperatorSpec {
            mode: NetMode::Baseline,
            dim,
            sensors,
            branch_f: MlpSpec::uniform(sensors, width, depth, activation),
            branch_phi: None,
            trunk: MlpSpec::uniform(dim, width, depth, activation),
        }
    }

    /// Latent dimension m shared by branch and trunk outputs.
    pub fn latent(&self) -> usize {
        self.trunk.output()
    }

    pub fn trunk_input_dim(&self) -> usize {
        self.trunk.widths[0]
    }

    /// Total scalar parameters including the final additive bias b0.
    pub fn param_count(&self) -> usize {
        let mut n = self.branch_f.param_count();
        if let Some(bp) = &self.branch_phi {
            n += bp.param_count();
        }
        n + self.trunk.param_count() + 1
    }

    /// Canonical tensor order: branch_f (W, b per layer), branch_phi, trunk,
    /// then the scalar b0.
    pub fn layout(&self) -> ParamLayout {
        let mut layout = ParamLayout::new();
        let push_mlp = |layout: &mut ParamLayout, mlp: &MlpSpec| {
            for w in mlp.widths.windows(2) {
                layout.push(w[1], w[0]);
                layout.push(w[1], 1);
            }
        };
        push_mlp(&mut layout, &self.branch_f);
        if let Some(bp) = &self.branch_phi {
            push_mlp(&mut layout, bp);
        }
        push_mlp(&mut layout, &self.trunk);
        layout.push(1, 1);
        layout
    }
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("relu trunk has no curvature: second-derivative channels require a smooth activation")]
    ReluCurvature,
    #[error("derivative channels need the augmented trunk input; baseline mode provides values only")]
    BaselineDerivatives,
}

/// Glorot-uniform weights (zero biases, zero b0), deterministic in `seed`.
pub fn init_params(spec: &OperatorSpec, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(spec.param_count());
    let fill_mlp = |values: &mut Vec<f64>, rng: &mut ChaCha8Rng, mlp: &MlpSpec| {
        for w in mlp.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_out * fan_in {
                values.push(rng.random_range(-lim..lim));
            }
            values.extend(std::iter::repeat(0.0).take(fan_out));
        }
    };
    fill_mlp(&mut values, &mut rng, &spec.branch_f);
    if let Some(bp) = &spec.branch_phi {
        fill_mlp(&mut values, &mut rng, bp);
    }
    fill_mlp(&mut values, &mut rng, &spec.trunk);
    values.push(0.0);
    debug_assert_eq!(values.len(), spec.param_count());
    values
}

/// Buffer handles of a network registered on a tape.
pub struct TapeNet {
    pub branch_f: Vec<(BufId, BufId)>,
    pub branch_phi: Vec<(BufId, BufId)>,
    pub trunk: Vec<(BufId, BufId)>,
    pub b0: BufId,
}

/// Registers every parameter tensor of `spec` as tracked tape leaves laid out
/// per [`OperatorSpec::layout`].
pub fn register_network(tape: &mut Tape, spec: &OperatorSpec, values: &[f64]) -> TapeNet {
    let layout = spec.layout();
    assert_eq!(values.len(), layout.total, "parameter vector length mismatch");
    let mut next = 0usize;
    let mut take = |tape: &mut Tape| {
        let e = layout.entries[next];
        next += 1;
        tape.param(e.rows, e.cols, &values[e.offset..e.offset + e.rows * e.cols], e.offset)
    };
    let reg_mlp = |tape: &mut Tape, take: &mut dyn FnMut(&mut Tape) -> BufId, mlp: &MlpSpec| {
        (0..mlp.layer_count())
            .map(|_| {
                let w = take(tape);
                let b = take(tape);
                (w, b)
            })
            .collect::<Vec<_>>()
    };
    let branch_f = reg_mlp(tape, &mut take, &spec.branch_f);
    let branch_phi = match &spec.branch_phi {
        Some(bp) => reg_mlp(tape, &mut take, bp),
        None => Vec::new(),
    };
    let trunk = reg_mlp(tape, &mut take, &spec.trunk);
    let b0 = take(tape);
    TapeNet {
        branch_f,
        branch_phi,
        trunk,
        b0,
    }
}

/// Runs an MLP on a column (or matrix of columns) already on the tape.
pub fn mlp_forward(
    tape: &mut Tape,
    layers: &[(BufId, BufId)],
    activation: Activation,
    input: BufId,
) -> BufId {
    let mut v = input;
    for (li, &(w, b)) in layers.iter().enumerate() {
        let y = tape.matmul(w, v);
        let y = tape.bias_add(y, b);
        v = if li + 1 == layers.len() {
            y
        } else {
            match activation {
                Activation::Tanh => tape.tanh(y),
                Activation::Relu => tape.relu(y),
            }
        };
    }
    v
}

/// Latent coefficient column for one input function: b1 ⊙ b2 in `Xi` mode,
/// b1 alone for the baseline.
pub fn branch_coefficients(
    tape: &mut Tape,
    net: &TapeNet,
    spec: &OperatorSpec,
    f_sensors: &[f64],
    phi_sensors: Option<&[f64]>,
) -> BufId {
    let k = spec.sensors;
    assert_eq!(f_sensors.len(), k, "sensor count mismatch");
    let fin = tape.constant(k, 1, f_sensors.to_vec());
    let b1 = mlp_forward(tape, &net.branch_f, spec.branch_f.activation, fin);
    match spec.mode {
        NetMode::Xi => {
            let phis = phi_sensors.expect("Xi mode needs level-set sensor values");
            assert_eq!(phis.len(), k, "sensor count mismatch");
            let pin = tape.constant(k, 1, phis.to_vec());
            let bp = spec.branch_phi.as_ref().unwrap();
            let b2 = mlp_forward(tape, &net.branch_phi, bp.activation, pin);
            tape.mul(b1, b2)
        }
        NetMode::Baseline => b1,
    }
}

/// Which channels the trunk should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivMode {
    ValueOnly,
    /// Value + all first derivatives + the second derivatives needed by an
    /// elliptic operator: every (a,a) plus every (a, z) mixed pair, where z
    /// is the last trunk input.
    SecondOrder,
}

/// Trunk outputs for a batch of points (latent rows × point columns).
pub struct TrunkChannels {
    pub value: BufId,
    /// One m×P buffer per trunk input direction (empty in `ValueOnly`).
    pub d1: Vec<BufId>,
    /// One m×P buffer per tracked pair, aligned with `pairs`.
    pub d2: Vec<BufId>,
    pub dirs: usize,
    pub pairs: Vec<(usize, usize)>,
}

/// Pairs tracked in `SecondOrder`: diagonal (a,a) for every input, then the
/// mixed pairs (a, last) for a < last.
pub fn tracked_pairs(din: usize) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..din).map(|a| (a, a)).collect();
    pairs.extend((0..din - 1).map(|a| (a, din - 1)));
    pairs
}

/// Packs d-dimensional points (point-major) into a din×P column matrix.
pub fn points_to_matrix(points: &[f64], din: usize) -> (usize, Vec<f64>) {
    assert_eq!(points.len() % din, 0, "flat point buffer length mismatch");
    let p = points.len() / din;
    let mut data = vec![0.0; din * p];
    for j in 0..p {
        for i in 0..din {
            data[i * p + j] = points[j * din + i];
        }
    }
    (p, data)
}

/// Evaluates the trunk over a din×P input matrix, propagating the requested
/// derivative channels through each layer.
///
/// With pre-activation p = W·v + b and σ the activation, the channels obey
///   v' = σ(p),   J'_a = σ'(p) ⊙ (W·J_a),
///   H'_ab = σ''(p) ⊙ (W·J_a) ⊙ (W·J_b) + σ'(p) ⊙ (W·H_ab),
/// and the final affine layer applies W without σ.
pub fn trunk_channels(
    tape: &mut Tape,
    trunk_layers: &[(BufId, BufId)],
    activation: Activation,
    x: BufId,
    mode: DerivMode,
) -> Result<TrunkChannels, NetError> {
    let (din, p) = tape.shape(x);
    if mode == DerivMode::SecondOrder && activation == Activation::Relu {
        return Err(NetError::ReluCurvature);
    }
    let (dirs, pairs) = match mode {
        DerivMode::ValueOnly => (0, Vec::new()),
        DerivMode::SecondOrder => (din, tracked_pairs(din)),
    };

    let mut v = x;
    // Seed channels: J_a is the constant indicator of input row a, H is zero.
    let mut j: Vec<BufId> = (0..dirs)
        .map(|a| {
            let mut data = vec![0.0; din * p];
            data[a * p..(a + 1) * p].fill(1.0);
            tape.constant(din, p, data)
        })
        .collect();
    let mut h: Vec<BufId> = pairs
        .iter()
        .map(|_| tape.constant(din, p, vec![0.0; din * p]))
        .collect();

    for (li, &(w, b)) in trunk_layers.iter().enumerate() {
        let pre_mm = tape.matmul(w, v);
        let pre = tape.bias_add(pre_mm, b);
        let wj: Vec<BufId> = j.iter().map(|&jj| tape.matmul(w, jj)).collect();
        let wh: Vec<BufId> = h.iter().map(|&hh| tape.matmul(w, hh)).collect();
        if li + 1 == trunk_layers.len() {
            v = pre;
            j = wj;
            h = wh;
        } else {
            match activation {
                Activation::Tanh => {
                    let s = tape.tanh(pre);
                    // σ' = 1 - s², σ'' = -2 s (1 - s²), built from tape ops so
                    // reverse mode differentiates through them too.
                    let s2 = tape.mul(s, s);
                    let sp = tape.affine(s2, -1.0, 1.0);
                    let sspp = tape.mul(s, sp);
                    let spp = tape.scale(sspp, -2.0);
                    v = s;
                    j = wj.iter().map(|&wj_a| tape.mul(sp, wj_a)).collect();
                    h = pairs
                        .iter()
                        .enumerate()
                        .map(|(pi, &(a, bq))| {
                            let cross = tape.mul(wj[a], wj[bq]);
                            let curved = tape.mul(spp, cross);
                            let linear = tape.mul(sp, wh[pi]);
                            tape.add(curved, linear)
                        })
                        .collect();
                }
                Activation::Relu => {
                    debug_assert!(dirs == 0, "checked above");
                    v = tape.relu(pre);
                }
            }
        }
    }
    Ok(TrunkChannels {
        value: v,
        d1: j,
        d2: h,
        dirs,
        pairs,
    })
}

/// Per-function combination of latent coefficients with a column block of the
/// shared trunk batch.
pub struct CombinedRows {
    /// 1×P prediction row (includes b0).
    pub value: BufId,
    /// 1×P derivative rows aligned with the trunk's direction list.
    pub d1: Vec<BufId>,
    /// 1×P second-derivative rows aligned with the trunk's pair list.
    pub d2: Vec<BufId>,
}

/// Contracts the latent dimension for one function over trunk columns
/// [col0, col0+len). b0 shifts only the value channel.
pub fn combine_function(
    tape: &mut Tape,
    coeff: BufId,
    b0: BufId,
    ch: &TrunkChannels,
    col0: usize,
    len: usize,
) -> CombinedRows {
    let raw = tape.row_combine(coeff, ch.value, col0, len);
    let value = tape.scalar_add(raw, b0);
    let d1 = ch
        .d1
        .iter()
        .map(|&jb| tape.row_combine(coeff, jb, col0, len))
        .collect();
    let d2 = ch
        .d2
        .iter()
        .map(|&hb| tape.row_combine(coeff, hb, col0, len))
        .collect();
    CombinedRows { value, d1, d2 }
}

/// All trunk-input derivatives of the prediction at one point, with the
/// augmentation coordinate z as the last input direction.
#[derive(Debug, Clone, PartialEq)]
pub struct PointDerivs {
    pub u: f64,
    /// ∂U/∂x_a for the d spatial directions.
    pub dx: Vec<f64>,
    /// ∂U/∂z.
    pub dz: f64,
    /// ∂²U/∂x_a² (diagonal only).
    pub dxx: Vec<f64>,
    /// ∂²U/∂x_a∂z.
    pub dxdz: Vec<f64>,
    /// ∂²U/∂z².
    pub dzz: f64,
}

/// Convenience single-function forward pass; `points` is point-major flat
/// with the trunk input dimension as stride.
pub fn forward_values(
    spec: &OperatorSpec,
    params: &[f64],
    f_sensors: &[f64],
    phi_sensors: Option<&[f64]>,
    points: &[f64],
) -> Vec<f64> {
    let din = spec.trunk_input_dim();
    let (p, data) = points_to_matrix(points, din);
    let mut tape = Tape::new();
    let net = register_network(&mut tape, spec, params);
    let coeff = branch_coefficients(&mut tape, &net, spec, f_sensors, phi_sensors);
    let x = tape.constant(din, p, data);
    let ch = trunk_channels(
        &mut tape,
        &net.trunk,
        spec.trunk.activation,
        x,
        DerivMode::ValueOnly,
    )
    .expect("value-only trunk cannot fail");
    let rows = combine_function(&mut tape, coeff, net.b0, &ch, 0, p);
    tape.value(rows.value).to_vec()
}

/// Convenience single-function forward pass returning the full derivative
/// record per point. `Xi` mode only.
pub fn extended_derivs(
    spec: &OperatorSpec,
    params: &[f64],
    f_sensors: &[f64],
    phi_sensors: Option<&[f64]>,
    points: &[f64],
) -> Result<Vec<PointDerivs>, NetError> {
    if spec.mode == NetMode::Baseline {
        return Err(NetError::BaselineDerivatives);
    }
    let din = spec.trunk_input_dim();
    let d = spec.dim;
    let (p, data) = points_to_matrix(points, din);
    let mut tape = Tape::new();
    let net = register_network(&mut tape, spec, params);
    let coeff = branch_coefficients(&mut tape, &net, spec, f_sensors, phi_sensors);
    let x = tape.constant(din, p, data);
    let ch = trunk_channels(
        &mut tape,
        &net.trunk,
        spec.trunk.activation,
        x,
        DerivMode::SecondOrder,
    )?;
    let rows = combine_function(&mut tape, coeff, net.b0, &ch, 0, p);
    let u = tape.value(rows.value).to_vec();
    let d1: Vec<Vec<f64>> = rows.d1.iter().map(|&r| tape.value(r).to_vec()).collect();
    let d2: Vec<Vec<f64>> = rows.d2.iter().map(|&r| tape.value(r).to_vec()).collect();
    // Pair order from tracked_pairs: (a,a) for a in 0..din, then (a, z).
    Ok((0..p)
        .map(|jp| PointDerivs {
            u: u[jp],
            dx: (0..d).map(|a| d1[a][jp]).collect(),
            dz: d1[d][jp],
            dxx: (0..d).map(|a| d2[a][jp]).collect(),
            dxdz: (0..d).map(|a| d2[din + a][jp]).collect(),
            dzz: d2[d][jp],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent plain-`Vec` MLP evaluation used as the summation oracle.
    fn mlp_eval(mlp: &MlpSpec, params: &mut impl Iterator<Item = f64>, input: &[f64]) -> Vec<f64> {
        let mut v = input.to_vec();
        for (li, w) in mlp.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights: Vec<f64> = params.by_ref().take(n_out * n_in).collect();
            let biases: Vec<f64> = params.by_ref().take(n_out).collect();
            let mut y = vec![0.0; n_out];
            for r in 0..n_out {
                let mut acc = biases[r];
                for c in 0..n_in {
                    acc += weights[r * n_in + c] * v[c];
                }
                y[r] = acc;
            }
            if li + 1 < mlp.layer_count() {
                for t in &mut y {
                    *t = match mlp.activation {
                        Activation::Tanh => t.tanh(),
                        Activation::Relu => t.max(0.0),
                    };
                }
            }
            v = y;
        }
        v
    }

    /// Explicit Σᵢ tᵢ·b1ᵢ·b2ᵢ + b0 evaluated without any tape machinery.
    fn summation_oracle(
        spec: &OperatorSpec,
        params: &[f64],
        f_sensors: &[f64],
        phi_sensors: Option<&[f64]>,
        point: &[f64],
    ) -> f64 {
        let mut it = params.iter().copied();
        let b1 = mlp_eval(&spec.branch_f, &mut it, f_sensors);
        let b2 = match &spec.branch_phi {
            Some(bp) => mlp_eval(bp, &mut it, phi_sensors.unwrap()),
            None => vec![1.0; b1.len()],
        };
        let t = mlp_eval(&spec.trunk, &mut it, point);
        let b0 = it.next().unwrap();
        assert!(it.next().is_none());
        t.iter()
            .zip(&b1)
            .zip(&b2)
            .map(|((ti, b1i), b2i)| ti * b1i * b2i)
            .sum::<f64>()
            + b0
    }

    fn demo_sensors(k: usize, shift: f64) -> Vec<f64> {
        (0..k).map(|i| ((i as f64) * 0.37 + shift).sin()).collect()
    }

    #[test]
    fn forward_matches_explicit_summation() {
        let spec = OperatorSpec::xi(2, 7, 5, 3, Activation::Tanh);
        let params = init_params(&spec, 42);
        let fs = demo_sensors(7, 0.0);
        let ps = demo_sensors(7, 1.2);
        let points = [0.3, -0.2, 0.05, 0.9, 0.4, 0.0, -0.6, 0.1, 0.33];
        let values = forward_values(&spec, &params, &fs, Some(&ps), &points);
        for (j, pt) in points.chunks(3).enumerate() {
            let expect = summation_oracle(&spec, &params, &fs, Some(&ps), pt);
            assert!(
                (values[j] - expect).abs() <= 1e-14,
                "point {j}: {} vs {expect}",
                values[j]
            );
        }
    }

    #[test]
    fn baseline_forward_matches_explicit_summation() {
        let spec = OperatorSpec::baseline(2, 6, 4, 3, Activation::Relu);
        let params = init_params(&spec, 7);
        let fs = demo_sensors(6, 0.5);
        let points = [0.3, -0.2, 0.9, 0.4];
        let values = forward_values(&spec, &params, &fs, None, &points);
        for (j, pt) in points.chunks(2).enumerate() {
            let expect = summation_oracle(&spec, &params, &fs, None, pt);
            assert!((values[j] - expect).abs() <= 1e-14);
        }
    }

    /// Single-affine-layer nets with zero weights output their bias exactly,
    /// which lets us pin the combination arithmetic by hand.
    #[test]
    fn injected_latents_combine_as_product_plus_bias() {
        let mut spec = OperatorSpec::xi(1, 3, 1, 1, Activation::Tanh);
        // Width-1 latent: m = 1.
        assert_eq!(spec.latent(), 1);
        let mut params = vec![0.0; spec.param_count()];
        let layout = spec.layout();
        // Tensor order: branchF W,b | branchPhi W,b | trunk W,b | b0.
        params[layout.entries[1].offset] = 2.0; // branch1 ≡ 2
        params[layout.entries[3].offset] = 3.0; // branch2 ≡ 3
        params[layout.entries[5].offset] = 4.0; // trunk ≡ 4
        params[layout.entries[6].offset] = 1.0; // b0 = 1
        let v = forward_values(&spec, &params, &[9.0, 9.0, 9.0], Some(&[1.0, 2.0, 3.0]), &[0.5, 0.0]);
        assert_eq!(v, vec![4.0 * 2.0 * 3.0 + 1.0]); // 25

        spec = OperatorSpec::baseline(1, 3, 1, 1, Activation::Tanh);
        let layout = spec.layout();
        let mut params = vec![0.0; spec.param_count()];
        params[layout.entries[1].offset] = 2.0; // branch ≡ 2
        params[layout.entries[3].offset] = 4.0; // trunk ≡ 4
        params[layout.entries[4].offset] = 1.0; // b0 = 1
        let v = forward_values(&spec, &params, &[9.0, 9.0, 9.0], None, &[0.5]);
        assert_eq!(v, vec![4.0 * 2.0 + 1.0]); // 9
    }

    #[test]
    fn zero_parameters_give_zero_field() {
        let spec = OperatorSpec::xi(2, 5, 8, 3, Activation::Tanh);
        let params = vec![0.0; spec.param_count()];
        let fs = demo_sensors(5, 0.1);
        let ps = demo_sensors(5, 0.7);
        let pts = [0.1, 0.2, 0.0, -0.5, 0.5, 0.3];
        assert_eq!(forward_values(&spec, &params, &fs, Some(&ps), &pts), vec![0.0, 0.0]);
        let derivs = extended_derivs(&spec, &params, &fs, Some(&ps), &pts).unwrap();
        for pd in derivs {
            assert_eq!(pd.u, 0.0);
            assert!(pd.dx.iter().all(|&v| v == 0.0));
            assert_eq!(pd.dz, 0.0);
            assert_eq!(pd.dzz, 0.0);
        }
    }

    /// Doubling the last branch-f layer doubles U - b0 and every derivative.
    #[test]
    fn branch_scaling_is_linear_in_latent_coefficients() {
        let spec = OperatorSpec::xi(1, 6, 5, 3, Activation::Tanh);
        let mut params = init_params(&spec, 3);
        // Make b0 nonzero so the affine offset is visible.
        let layout = spec.layout();
        let b0_off = layout.entries.last().unwrap().offset;
        params[b0_off] = 0.37;
        let fs = demo_sensors(6, 0.2);
        let ps = demo_sensors(6, 0.9);
        let pts = [0.25, 0.1, 0.8, 0.05];
        let base = forward_values(&spec, &params, &fs, Some(&ps), &pts);
        let base_d = extended_derivs(&spec, &params, &fs, Some(&ps), &pts).unwrap();

        let mut doubled = params.clone();
        // Last branch-f tensors are entries 2(L-1) (weights) and 2L-1 (bias).
        let l = spec.branch_f.layer_count();
        for e in &layout.entries[2 * l - 2..2 * l] {
            for v in &mut doubled[e.offset..e.offset + e.rows * e.cols] {
                *v *= 2.0;
            }
        }
        let twice = forward_values(&spec, &doubled, &fs, Some(&ps), &pts);
        let twice_d = extended_derivs(&spec, &doubled, &fs, Some(&ps), &pts).unwrap();
        for j in 0..twice.len() {
            assert!((twice[j] - 0.37 - 2.0 * (base[j] - 0.37)).abs() <= 1e-13);
            assert!((twice_d[j].dz - 2.0 * base_d[j].dz).abs() <= 1e-13);
            assert!((twice_d[j].dxx[0] - 2.0 * base_d[j].dxx[0]).abs() <= 1e-13);
            assert!((twice_d[j].dxdz[0] - 2.0 * base_d[j].dxdz[0]).abs() <= 1e-12);
        }
    }

    /// Swapping the two branch parameter blocks together with their sensor
    /// inputs leaves the product b1 ⊙ b2 unchanged.
    #[test]
    fn branch_exchange_symmetry() {
        let spec = OperatorSpec::xi(2, 9, 6, 3, Activation::Tanh);
        let params = init_params(&spec, 17);
        let nb = spec.branch_f.param_count();
        let mut swapped = params.clone();
        // Both branches share widths, so their blocks are interchangeable.
        swapped[0..nb].copy_from_slice(&params[nb..2 * nb]);
        swapped[nb..2 * nb].copy_from_slice(&params[0..nb]);
        let fs = demo_sensors(9, 0.0);
        let ps = demo_sensors(9, 2.0);
        let pts = [0.3, 0.4, 0.12, -0.2, 0.5, 0.08];
        let a = forward_values(&spec, &params, &fs, Some(&ps), &pts);
        let b = forward_values(&spec, &swapped, &ps, Some(&fs), &pts);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-15, "{x} vs {y}");
        }
    }

    #[test]
    fn trunk_derivative_channels_match_finite_differences() {
        let spec = OperatorSpec::xi(2, 5, 10, 4, Activation::Tanh);
        let params = init_params(&spec, 23);
        let fs = demo_sensors(5, 0.3);
        let ps = demo_sensors(5, 1.0);
        let value_at = |pt: &[f64]| -> f64 {
            forward_values(&spec, &params, &fs, Some(&ps), pt)[0]
        };
        let pts = [[0.2, -0.3, 0.15], [0.7, 0.5, 0.0], [-0.4, 0.1, 0.6]];
        for pt in pts {
            let pd = &extended_derivs(&spec, &params, &fs, Some(&ps), &pt).unwrap()[0];
            let h1 = 1e-5;
            let h2 = 2e-4;
            let f0 = value_at(&pt);
            for a in 0..3 {
                let mut pp = pt;
                pp[a] += h1;
                let fp = value_at(&pp);
                pp[a] -= 2.0 * h1;
                let fm = value_at(&pp);
                let fd1 = (fp - fm) / (2.0 * h1);
                let got = if a < 2 { pd.dx[a] } else { pd.dz };
                assert!((got - fd1).abs() <= 1e-7, "dir {a}: {got} vs {fd1}");

                let mut p2 = pt;
                p2[a] += h2;
                let f2p = value_at(&p2);
                p2[a] -= 2.0 * h2;
                let f2m = value_at(&p2);
                let fd2 = (f2p - 2.0 * f0 + f2m) / (h2 * h2);
                let got2 = if a < 2 { pd.dxx[a] } else { pd.dzz };
                assert!((got2 - fd2).abs() <= 1e-6, "pair ({a},{a}): {got2} vs {fd2}");
            }
            // Mixed x_a–z pairs via the four-point stencil.
            for a in 0..2 {
                let mut pq = pt;
                pq[a] += h2;
                pq[2] += h2;
                let fpp = value_at(&pq);
                pq[2] -= 2.0 * h2;
                let fpm = value_at(&pq);
                pq[a] -= 2.0 * h2;
                let fmm = value_at(&pq);
                pq[2] += 2.0 * h2;
                let fmp = value_at(&pq);
                let fd = (fpp - fpm - fmp + fmm) / (4.0 * h2 * h2);
                assert!((pd.dxdz[a] - fd).abs() <= 1e-6, "pair ({a},z)");
            }
        }
    }

    #[test]
    fn relu_trunk_refuses_curvature_channels() {
        let spec = OperatorSpec::xi(1, 4, 6, 3, Activation::Relu);
        let params = init_params(&spec, 1);
        let err = extended_derivs(&spec, &params, &demo_sensors(4, 0.0), Some(&demo_sensors(4, 1.0)), &[0.3, 0.1]);
        assert!(matches!(err, Err(NetError::ReluCurvature)));
    }

    #[test]
    fn baseline_refuses_derivative_record() {
        let spec = OperatorSpec::baseline(1, 4, 6, 3, Activation::Tanh);
        let params = init_params(&spec, 1);
        let err = extended_derivs(&spec, &params, &demo_sensors(4, 0.0), None, &[0.3]);
        assert!(matches!(err, Err(NetError::BaselineDerivatives)));
    }

    #[test]
    fn parameter_counts_for_reference_architectures() {
        // Width-100 depth-5 subnets over various sensor/dimension layouts.
        let c1 = OperatorSpec::xi(1, 100, 100, 5, Activation::Tanh);
        assert_eq!(c1.param_count(), 141_701);
        let c2 = OperatorSpec::xi(2, 60, 100, 5, Activation::Tanh);
        assert_eq!(c2.param_count(), 133_801);
        let c3 = OperatorSpec::xi(2, 100, 100, 5, Activation::Tanh);
        assert_eq!(c3.param_count(), 141_801);
        let c6 = OperatorSpec::xi(6, 233, 100, 5, Activation::Tanh);
        assert_eq!(c6.param_count(), 168_801);
        for spec in [c1, c2, c3, c6] {
            assert_eq!(spec.layout().total, spec.param_count());
            assert_eq!(init_params(&spec, 0).len(), spec.param_count());
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = OperatorSpec::xi(2, 11, 13, 3, Activation::Tanh);
        let a = init_params(&spec, 5);
        let b = init_params(&spec, 5);
        let c = init_params(&spec, 6);
        assert_eq!(a, b);
        assert_ne!(a, c);
        // Spot-check the Glorot bound on the first trunk layer (3 → 13).
        let layout = spec.layout();
        let nb = spec.branch_f.layer_count() * 2;
        let trunk_w = layout.entries[2 * nb];
        let lim = (6.0 / (3 + 13) as f64).sqrt();
        for &v in &a[trunk_w.offset..trunk_w.offset + trunk_w.rows * trunk_w.cols] {
            assert!(v.abs() < lim);
        }
        // Biases and b0 start at zero.
        let b_entry = layout.entries[1];
        assert!(a[b_entry.offset..b_entry.offset + b_entry.rows].iter().all(|&v| v == 0.0));
        assert_eq!(*a.last().unwrap(), 0.0);
    }

    #[test]
    fn latent_and_layout_shapes() {
        let spec = OperatorSpec::xi(3, 20, 16, 4, Activation::Tanh);
        assert_eq!(spec.latent(), 16);
        assert_eq!(spec.trunk_input_dim(), 4);
        assert_eq!(tracked_pairs(4).len(), 7);
        assert_eq!(tracked_pairs(2), vec![(0, 0), (1, 1), (0, 1)]);
    }
}
