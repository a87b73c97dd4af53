//! Second-order forward-mode jets.
//!
//! A [`Jet2`] carries a value, first derivatives along `k` tracked directions,
//! and the symmetric matrix of second derivatives among those directions
//! (upper triangle stored). Arithmetic propagates all components by exact
//! chain-rule recurrences, so evaluating a closed-form program on seeded jets
//! yields its gradient and Hessian with no truncation error.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar abstraction so a formula can be written once and evaluated either on
/// plain `f64` (values) or on [`Jet2`] (values plus derivatives).
pub trait Scalar:
    Clone
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(c: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tanh(self) -> Self;
    fn relu(self) -> Self;
    fn abs(self) -> Self;
    /// Two-argument angle; `self` is the numerator (y), `x` the denominator.
    fn atan2(self, x: Self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn powf(self, p: f64) -> Self;
}

impl Scalar for f64 {
    fn from_f64(c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn relu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
}

/// A program mapping `n` scalar inputs to one scalar, written generically so
/// it can be run on values or jets.
pub trait ScalarProgram {
    fn arity(&self) -> usize;
    fn eval<S: Scalar>(&self, x: &[S]) -> S;
}

/// Value + first/second directional derivatives along `k` tracked directions.
///
/// A jet with empty `grad`/`hess` is a constant: its derivatives are zero in
/// any direction count, which lets `Jet2::from_f64` work without knowing `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet2 {
    pub val: f64,
    /// First derivatives, length `k` (or empty for constants).
    pub grad: Vec<f64>,
    /// Upper triangle of the symmetric second-derivative matrix, row-major:
    /// entry (a,b) with a ≤ b lives at `a*(2k-a+1)/2 + (b-a)`.
    pub hess: Vec<f64>,
    /// Set when a kink primitive (relu/abs) was evaluated exactly at its
    /// non-differentiable point with nonzero incoming derivatives, or when a
    /// singular primitive (atan2 at the origin) was hit. The value is still
    /// valid; derivatives follow the documented side convention.
    pub nondifferentiable: bool,
}

fn tri_len(k: usize) -> usize {
    k * (k + 1) / 2
}

fn tri_idx(k: usize, a: usize, b: usize) -> usize {
    debug_assert!(a <= b && b < k);
    // Row a starts after rows 0..a, which hold k, k-1, ..., k-a+1 entries.
    a * (2 * k - a + 1) / 2 + (b - a)
}

impl Jet2 {
    /// Constant jet (zero derivatives in any direction count).
    pub fn constant(val: f64) -> Self {
        Jet2 {
            val,
            grad: Vec::new(),
            hess: Vec::new(),
            nondifferentiable: false,
        }
    }

    /// Seed jet for an input tracked as direction `dir` out of `k`.
    pub fn seed(val: f64, k: usize, dir: usize) -> Self {
        let mut grad = vec![0.0; k];
        grad[dir] = 1.0;
        Jet2 {
            val,
            grad,
            hess: vec![0.0; tri_len(k)],
            nondifferentiable: false,
        }
    }

    /// Untracked input: participates with zero derivatives but fixed `k`.
    pub fn passive(val: f64, k: usize) -> Self {
        Jet2 {
            val,
            grad: vec![0.0; k],
            hess: vec![0.0; tri_len(k)],
            nondifferentiable: false,
        }
    }

    /// Number of tracked directions (0 for constants).
    pub fn k(&self) -> usize {
        self.grad.len()
    }

    /// First derivative along direction `a` (constants read as 0).
    pub fn d1(&self, a: usize) -> f64 {
        if self.grad.is_empty() {
            0.0
        } else {
            self.grad[a]
        }
    }

    /// Second derivative for the (unordered) direction pair `(a, b)`.
    pub fn d2(&self, a: usize, b: usize) -> f64 {
        if self.hess.is_empty() {
            return 0.0;
        }
        let k = self.k();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.hess[tri_idx(k, lo, hi)]
    }

    /// Sum of the first `d` diagonal second derivatives (a Laplacian when the
    /// first `d` directions are the coordinate axes).
    pub fn lap(&self, d: usize) -> f64 {
        (0..d).map(|a| self.d2(a, a)).sum()
    }

    fn zeros_like_k(k: usize) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; k], vec![0.0; tri_len(k)])
    }

    fn has_any_derivative(&self) -> bool {
        self.grad.iter().any(|g| *g != 0.0) || self.hess.iter().any(|h| *h != 0.0)
    }

    /// Unary chain rule: for w = f(u),
    /// w_a = f'·u_a and w_ab = f''·u_a·u_b + f'·u_ab.
    fn unary(self, f: f64, fu: f64, fuu: f64) -> Jet2 {
        let k = self.k();
        let (mut grad, mut hess) = Jet2::zeros_like_k(k);
        for a in 0..k {
            grad[a] = fu * self.grad[a];
        }
        let mut idx = 0;
        for a in 0..k {
            for b in a..k {
                hess[idx] = fuu * self.grad[a] * self.grad[b] + fu * self.hess[idx];
                idx += 1;
            }
        }
        Jet2 {
            val: f,
            grad,
            hess,
            nondifferentiable: self.nondifferentiable,
        }
    }

    /// Binary chain rule: for w = f(u, v),
    /// w_a  = f_u·u_a + f_v·v_a
    /// w_ab = f_uu·u_a·u_b + f_uv·(u_a·v_b + u_b·v_a) + f_vv·v_a·v_b
    ///        + f_u·u_ab + f_v·v_ab.
    #[allow(clippy::too_many_arguments)]
    fn binary(u: &Jet2, v: &Jet2, f: f64, fu: f64, fv: f64, fuu: f64, fuv: f64, fvv: f64) -> Jet2 {
        let k = u.k().max(v.k());
        debug_assert!(u.k() == 0 || u.k() == k);
        debug_assert!(v.k() == 0 || v.k() == k);
        let (mut grad, mut hess) = Jet2::zeros_like_k(k);
        for a in 0..k {
            grad[a] = fu * u.d1(a) + fv * v.d1(a);
        }
        let mut idx = 0;
        for a in 0..k {
            for b in a..k {
                hess[idx] = fuu * u.d1(a) * u.d1(b)
                    + fuv * (u.d1(a) * v.d1(b) + u.d1(b) * v.d1(a))
                    + fvv * v.d1(a) * v.d1(b)
                    + fu * u.d2(a, b)
                    + fv * v.d2(a, b);
                idx += 1;
            }
        }
        Jet2 {
            val: f,
            grad,
            hess,
            nondifferentiable: u.nondifferentiable || v.nondifferentiable,
        }
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, rhs: Jet2) -> Jet2 {
        Jet2::binary(&self, &rhs, self.val + rhs.val, 1.0, 1.0, 0.0, 0.0, 0.0)
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, rhs: Jet2) -> Jet2 {
        Jet2::binary(&self, &rhs, self.val - rhs.val, 1.0, -1.0, 0.0, 0.0, 0.0)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: Jet2) -> Jet2 {
        Jet2::binary(
            &self,
            &rhs,
            self.val * rhs.val,
            rhs.val,
            self.val,
            0.0,
            1.0,
            0.0,
        )
    }
}

impl Div for Jet2 {
    type Output = Jet2;
    fn div(self, rhs: Jet2) -> Jet2 {
        // w = u/v: f_u = 1/v, f_v = -u/v², f_uv = -1/v², f_vv = 2u/v³.
        let v = rhs.val;
        Jet2::binary(
            &self,
            &rhs,
            self.val / v,
            1.0 / v,
            -self.val / (v * v),
            0.0,
            -1.0 / (v * v),
            2.0 * self.val / (v * v * v),
        )
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(mut self) -> Jet2 {
        self.val = -self.val;
        for g in &mut self.grad {
            *g = -*g;
        }
        for h in &mut self.hess {
            *h = -*h;
        }
        self
    }
}

impl Scalar for Jet2 {
    fn from_f64(c: f64) -> Self {
        Jet2::constant(c)
    }
    fn value(&self) -> f64 {
        self.val
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e, e)
    }
    fn ln(self) -> Self {
        let v = self.val;
        self.unary(v.ln(), 1.0 / v, -1.0 / (v * v))
    }
    fn sqrt(self) -> Self {
        let v = self.val;
        let s = v.sqrt();
        self.unary(s, 0.5 / s, -0.25 / (s * v))
    }
    fn sin(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.unary(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.unary(c, -s, -c)
    }
    fn tanh(self) -> Self {
        // σ' = 1 - σ², σ'' = -2σ(1 - σ²).
        let t = self.val.tanh();
        let tp = 1.0 - t * t;
        self.unary(t, tp, -2.0 * t * tp)
    }
    fn relu(self) -> Self {
        if self.val > 0.0 {
            self
        } else if self.val < 0.0 {
            let k = self.k();
            let (grad, hess) = Jet2::zeros_like_k(k);
            Jet2 {
                val: 0.0,
                grad,
                hess,
                nondifferentiable: self.nondifferentiable,
            }
        } else {
            // Kink: value 0, derivative 0 by the side convention; flag if the
            // choice actually mattered.
            let flag = self.has_any_derivative();
            let k = self.k();
            let (grad, hess) = Jet2::zeros_like_k(k);
            Jet2 {
                val: 0.0,
                grad,
                hess,
                nondifferentiable: self.nondifferentiable || flag,
            }
        }
    }
    fn abs(self) -> Self {
        if self.val > 0.0 {
            self
        } else if self.val < 0.0 {
            -self
        } else {
            let flag = self.has_any_derivative();
            let k = self.k();
            let (grad, hess) = Jet2::zeros_like_k(k);
            Jet2 {
                val: 0.0,
                grad,
                hess,
                nondifferentiable: self.nondifferentiable || flag,
            }
        }
    }
    fn atan2(self, x: Self) -> Self {
        // w = atan2(y, x) with s = x² + y²:
        // f_y = x/s, f_x = -y/s, f_yy = -2xy/s², f_yx = (y²-x²)/s², f_xx = 2xy/s².
        let yv = self.val;
        let xv = x.val;
        let s = xv * xv + yv * yv;
        let f = yv.atan2(xv);
        if s == 0.0 {
            let k = self.k().max(x.k());
            let (grad, hess) = Jet2::zeros_like_k(k);
            return Jet2 {
                val: f,
                grad,
                hess,
                nondifferentiable: true,
            };
        }
        let s2 = s * s;
        Jet2::binary(
            &self,
            &x,
            f,
            xv / s,
            -yv / s,
            -2.0 * xv * yv / s2,
            (yv * yv - xv * xv) / s2,
            2.0 * xv * yv / s2,
        )
    }
    fn powi(self, n: i32) -> Self {
        match n {
            0 => {
                let k = self.k();
                let (grad, hess) = Jet2::zeros_like_k(k);
                Jet2 {
                    val: 1.0,
                    grad,
                    hess,
                    nondifferentiable: self.nondifferentiable,
                }
            }
            1 => self,
            _ => {
                let v = self.val;
                let f = v.powi(n);
                let fu = f64::from(n) * v.powi(n - 1);
                let fuu = f64::from(n) * f64::from(n - 1) * v.powi(n - 2);
                self.unary(f, fu, fuu)
            }
        }
    }
    fn powf(self, p: f64) -> Self {
        let v = self.val;
        let f = v.powf(p);
        let fu = p * v.powf(p - 1.0);
        let fuu = p * (p - 1.0) * v.powf(p - 2.0);
        self.unary(f, fu, fuu)
    }
}

/// Evaluates `program` at `point` with the inputs listed in `directions`
/// tracked as jet directions (in that order).
pub fn jet_eval<P: ScalarProgram + ?Sized>(program: &P, point: &[f64], directions: &[usize]) -> Jet2 {
    assert_eq!(program.arity(), point.len(), "point length != program arity");
    assert!(!directions.is_empty(), "directions must be non-empty");
    let k = directions.len();
    let inputs: Vec<Jet2> = point
        .iter()
        .enumerate()
        .map(|(j, &v)| match directions.iter().position(|&d| d == j) {
            Some(a) => Jet2::seed(v, k, a),
            None => Jet2::passive(v, k),
        })
        .collect();
    program.eval(&inputs)
}

/// Evaluates `program` with every input tracked (directions 0..n in order).
pub fn jet_eval_all<P: ScalarProgram + ?Sized>(program: &P, point: &[f64]) -> Jet2 {
    let dirs: Vec<usize> = (0..point.len()).collect();
    jet_eval(program, point, &dirs)
}

/// Result of comparing analytic jets against central finite differences.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    /// Worst relative deviation over all first and second derivatives.
    pub max_rel: f64,
    /// The analytic evaluation hit a kink/singular primitive; deviations are
    /// then reported for diagnostics but not meaningful.
    pub nondifferentiable: bool,
}

/// Mixed absolute/relative deviation: |a-b| / max(1, |a|, |b|).
pub fn rel_dev(a: f64, b: f64) -> f64 {
    if !a.is_finite() || !b.is_finite() {
        return f64::INFINITY;
    }
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

/// Checks all first and second derivatives of `program` at `point` against
/// central finite differences with the given step.
pub fn fd_check<P: ScalarProgram + ?Sized>(program: &P, point: &[f64], step: f64) -> FdReport {
    assert!(step > 0.0, "step must be positive");
    let n = point.len();
    let jet = jet_eval_all(program, point);
    let f = |x: &[f64]| -> f64 { program.eval(x) };
    let shifted = |deltas: &[(usize, f64)]| -> f64 {
        let mut p = point.to_vec();
        for &(j, d) in deltas {
            p[j] += d;
        }
        f(&p)
    };
    let mut max_rel: f64 = 0.0;
    let f0 = f(point);
    for a in 0..n {
        let fp = shifted(&[(a, step)]);
        let fm = shifted(&[(a, -step)]);
        let fd1 = (fp - fm) / (2.0 * step);
        max_rel = max_rel.max(rel_dev(jet.d1(a), fd1));
        let fd2 = (fp - 2.0 * f0 + fm) / (step * step);
        max_rel = max_rel.max(rel_dev(jet.d2(a, a), fd2));
        for b in (a + 1)..n {
            let fpp = shifted(&[(a, step), (b, step)]);
            let fpm = shifted(&[(a, step), (b, -step)]);
            let fmp = shifted(&[(a, -step), (b, step)]);
            let fmm = shifted(&[(a, -step), (b, -step)]);
            let fd2 = (fpp - fpm - fmp + fmm) / (4.0 * step * step);
            max_rel = max_rel.max(rel_dev(jet.d2(a, b), fd2));
        }
    }
    FdReport {
        max_rel,
        nondifferentiable: jet.nondifferentiable,
    }
}
