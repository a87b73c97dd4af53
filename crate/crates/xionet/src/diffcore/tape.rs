//! Reverse-mode tape over buffers of tracked scalars.
//!
//! A [`Tape`] is an append-only record of primitive operations (add, mul, div,
//! neg, exp, log, sqrt, sin, cos, tanh, relu, atan2, power, plus the linear
//! ops needed by network evaluation). Operands are rectangular buffers; every
//! entry of a tracked buffer is an independent tracked scalar, and elementwise
//! ops act entry by entry. Values are computed eagerly during recording, so
//! replaying the node list reproduces the forward pass bit-exactly; one
//! backward sweep per tape accumulates adjoints and yields exact parameter
//! gradients.

use thiserror::Error;

/// Handle to a buffer on a tape.
pub type BufId = usize;

/// Flat parameter-gradient vector aligned with a [`ParamLayout`].
pub type GradVector = Vec<f64>;

/// One named tensor inside a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamEntry {
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

/// Ordered tensor layout of a flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a rows×cols tensor and returns its entry index.
    pub fn push(&mut self, rows: usize, cols: usize) -> usize {
        let entry = ParamEntry {
            rows,
            cols,
            offset: self.total,
        };
        self.total += rows * cols;
        self.entries.push(entry);
        self.entries.len() - 1
    }
}

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("backward already ran on this tape")]
    DoubleBackward,
    #[error("loss buffer must be 1x1, got {rows}x{cols}")]
    NotScalarLoss { rows: usize, cols: usize },
}

struct Buf {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    tracked: bool,
}

impl Buf {
    fn len(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Clone, Debug)]
enum Node {
    /// out(m×n) = a(m×k) · b(k×n)
    MatMul { a: BufId, b: BufId, out: BufId },
    Add { a: BufId, b: BufId, out: BufId },
    Sub { a: BufId, b: BufId, out: BufId },
    Mul { a: BufId, b: BufId, out: BufId },
    Div { a: BufId, b: BufId, out: BufId },
    /// out = mul·a + add (elementwise; beats separate neg/scale nodes)
    Affine { a: BufId, mul: f64, add: f64, out: BufId },
    Tanh { a: BufId, out: BufId },
    Relu { a: BufId, out: BufId },
    Exp { a: BufId, out: BufId },
    Ln { a: BufId, out: BufId },
    Sqrt { a: BufId, out: BufId },
    Sin { a: BufId, out: BufId },
    Cos { a: BufId, out: BufId },
    /// out = a^e (elementwise power with fixed exponent)
    Pow { a: BufId, e: f64, out: BufId },
    Atan2 { y: BufId, x: BufId, out: BufId },
    /// out[i,j] = mat[i,j] + col[i]  (per-row bias broadcast over columns)
    BiasAdd { mat: BufId, col: BufId, out: BufId },
    /// out = a + s[0]  (scalar broadcast)
    ScalarAdd { a: BufId, s: BufId, out: BufId },
    /// out(1×len) = wᵀ(1×m) · mat[:, col0 .. col0+len]
    RowCombine {
        w: BufId,
        mat: BufId,
        col0: usize,
        len: usize,
        out: BufId,
    },
    /// out(1×1) = Σ a[i]²
    SumSquares { a: BufId, out: BufId },
    /// out(1×1) = Σ xs[i][0] over scalar buffers, in list order
    SumList { xs: Vec<BufId>, out: BufId },
}

impl Node {
    fn out(&self) -> BufId {
        match self {
            Node::MatMul { out, .. }
            | Node::Add { out, .. }
            | Node::Sub { out, .. }
            | Node::Mul { out, .. }
            | Node::Div { out, .. }
            | Node::Affine { out, .. }
            | Node::Tanh { out, .. }
            | Node::Relu { out, .. }
            | Node::Exp { out, .. }
            | Node::Ln { out, .. }
            | Node::Sqrt { out, .. }
            | Node::Sin { out, .. }
            | Node::Cos { out, .. }
            | Node::Pow { out, .. }
            | Node::Atan2 { out, .. }
            | Node::BiasAdd { out, .. }
            | Node::ScalarAdd { out, .. }
            | Node::RowCombine { out, .. }
            | Node::SumSquares { out, .. }
            | Node::SumList { out, .. } => *out,
        }
    }
}

/// Row-major GEMM: C(m×n) ← α·A·B + β·C with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Allocates (if needed) and returns the adjoint buffer of `id`.
fn ensure_grad<'a>(grads: &'a mut [Option<Vec<f64>>], bufs: &[Buf], id: BufId) -> &'a mut Vec<f64> {
    grads[id].get_or_insert_with(|| vec![0.0; bufs[id].len()])
}

/// Reverse-mode record of primitive operations. See module docs.
pub struct Tape {
    bufs: Vec<Buf>,
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    /// (buffer, flat offset) of each registered parameter tensor.
    params: Vec<(BufId, usize)>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            bufs: Vec::new(),
            nodes: Vec::new(),
            grads: Vec::new(),
            params: Vec::new(),
            backward_done: false,
        }
    }

    /// Preallocates node/buffer capacity (sized from a dry run of one batch).
    pub fn with_capacity(nodes: usize, bufs: usize) -> Self {
        Tape {
            bufs: Vec::with_capacity(bufs),
            nodes: Vec::with_capacity(nodes),
            grads: Vec::with_capacity(bufs),
            params: Vec::new(),
            backward_done: false,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn buf_count(&self) -> usize {
        self.bufs.len()
    }

    fn push_buf(&mut self, rows: usize, cols: usize, data: Vec<f64>, tracked: bool) -> BufId {
        debug_assert_eq!(data.len(), rows * cols);
        self.bufs.push(Buf {
            rows,
            cols,
            data,
            tracked,
        });
        self.grads.push(None);
        self.bufs.len() - 1
    }

    /// Untracked input buffer (problem data, coordinates, targets).
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> BufId {
        self.push_buf(rows, cols, data, false)
    }

    pub fn scalar_constant(&mut self, v: f64) -> BufId {
        self.constant(1, 1, vec![v])
    }

    /// Tracked leaf holding one parameter tensor; `offset` locates its
    /// gradient inside the flat [`GradVector`].
    pub fn param(&mut self, rows: usize, cols: usize, values: &[f64], offset: usize) -> BufId {
        assert_eq!(values.len(), rows * cols, "parameter slice length mismatch");
        let id = self.push_buf(rows, cols, values.to_vec(), true);
        self.params.push((id, offset));
        id
    }

    pub fn shape(&self, id: BufId) -> (usize, usize) {
        (self.bufs[id].rows, self.bufs[id].cols)
    }

    pub fn value(&self, id: BufId) -> &[f64] {
        &self.bufs[id].data
    }

    pub fn is_tracked(&self, id: BufId) -> bool {
        self.bufs[id].tracked
    }

    /// Adjoint of a buffer after `backward` (None if the loss does not depend
    /// on it or it is untracked).
    pub fn grad(&self, id: BufId) -> Option<&[f64]> {
        self.grads[id].as_deref()
    }

    fn new_out(&mut self, rows: usize, cols: usize, tracked: bool) -> BufId {
        self.push_buf(rows, cols, vec![0.0; rows * cols], tracked)
    }

    fn record(&mut self, node: Node) {
        Self::exec(&mut self.bufs, &node);
        self.nodes.push(node);
    }

    // ---- op builders -----------------------------------------------------

    pub fn matmul(&mut self, a: BufId, b: BufId) -> BufId {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        assert_eq!(ka, kb, "matmul inner dimension mismatch");
        let tracked = self.bufs[a].tracked || self.bufs[b].tracked;
        let out = self.new_out(m, n, tracked);
        self.record(Node::MatMul { a, b, out });
        out
    }

    fn elementwise_pair(&mut self, a: BufId, b: BufId) -> BufId {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(b), (r, c), "elementwise shape mismatch");
        let tracked = self.bufs[a].tracked || self.bufs[b].tracked;
        self.new_out(r, c, tracked)
    }

    fn elementwise_one(&mut self, a: BufId) -> BufId {
        let (r, c) = self.shape(a);
        let tracked = self.bufs[a].tracked;
        self.new_out(r, c, tracked)
    }

    pub fn add(&mut self, a: BufId, b: BufId) -> BufId {
        let out = self.elementwise_pair(a, b);
        self.record(Node::Add { a, b, out });
        out
    }

    pub fn sub(&mut self, a: BufId, b: BufId) -> BufId {
        let out = self.elementwise_pair(a, b);
        self.record(Node::Sub { a, b, out });
        out
    }

    pub fn mul(&mut self, a: BufId, b: BufId) -> BufId {
        let out = self.elementwise_pair(a, b);
        self.record(Node::Mul { a, b, out });
        out
    }

    pub fn div(&mut self, a: BufId, b: BufId) -> BufId {
        let out = self.elementwise_pair(a, b);
        self.record(Node::Div { a, b, out });
        out
    }

    /// out = mul·a + add (elementwise).
    pub fn affine(&mut self, a: BufId, mul: f64, add: f64) -> BufId {
        let out = self.elementwise_one(a);
        self.record(Node::Affine { a, mul, add, out });
        out
    }

    pub fn neg(&mut self, a: BufId) -> BufId {
        self.affine(a, -1.0, 0.0)
    }

    pub fn scale(&mut self, a: BufId, s: f64) -> BufId {
        self.affine(a, s, 0.0)
    }

    pub fn tanh(&mut self, a: BufId) -> BufId {
        let out = self.elementwise_one(a);
        self.record(Node::Tanh { a, out });
        out
    }

    pub fn relu(&mut self, a: BufId) -> BufId {
        let out = self.elementwise_one(a);
        self.record(Node::Relu { a, out });
        out
    }

    pub fn exp(&mut self, a: BufId) -> BufId {
        let out = self.elementwise_one(a);
        self.record(Node::Exp { a, out });
        out
    }

    pub fn ln(&mut self, a: BufId) -> BufId {
        let out = self.elementwise_one(a);
        self.record(Node::Ln { a, out });
        out
    }

    pub fn sqrt(&mut self, a: BufId) -> BufId {
        let out = self.elementwise_one(a);
        self.record(Node::Sqrt { a, out });
        out
    }

    pub fn sin(&mut self, a: BufId) -> BufId {
        let out = self.elementwise_one(a);
        self.record(Node::Sin { a, out });
        out
    }

    pub fn cos(&mut self, a: BufId) -> BufId {
        let out = self.elementwise_one(a);
        self.record(Node::Cos { a, out });
        out
    }

    pub fn pow(&mut self, a: BufId, e: f64) -> BufId {
        let out = self.elementwise_one(a);
        self.record(Node::Pow { a, e, out });
        out
    }

    pub fn atan2(&mut self, y: BufId, x: BufId) -> BufId {
        let out = self.elementwise_pair(y, x);
        self.record(Node::Atan2 { y, x, out });
        out
    }

    /// out[i,j] = mat[i,j] + col[i].
    pub fn bias_add(&mut self, mat: BufId, col: BufId) -> BufId {
        let (r, c) = self.shape(mat);
        assert_eq!(self.shape(col), (r, 1), "bias column shape mismatch");
        let tracked = self.bufs[mat].tracked || self.bufs[col].tracked;
        let out = self.new_out(r, c, tracked);
        self.record(Node::BiasAdd { mat, col, out });
        out
    }

    /// out = a + s (s a 1×1 buffer broadcast over all entries).
    pub fn scalar_add(&mut self, a: BufId, s: BufId) -> BufId {
        assert_eq!(self.shape(s), (1, 1), "broadcast operand must be scalar");
        let tracked = self.bufs[a].tracked || self.bufs[s].tracked;
        let (r, c) = self.shape(a);
        let out = self.new_out(r, c, tracked);
        self.record(Node::ScalarAdd { a, s, out });
        out
    }

    /// out(1×len) = wᵀ · mat[:, col0 .. col0+len] where w is m×1.
    pub fn row_combine(&mut self, w: BufId, mat: BufId, col0: usize, len: usize) -> BufId {
        let (m, one) = self.shape(w);
        assert_eq!(one, 1, "combination weights must be a column");
        let (mm, p) = self.shape(mat);
        assert_eq!(m, mm, "weight/matrix row mismatch");
        assert!(col0 + len <= p, "column range out of bounds");
        let tracked = self.bufs[w].tracked || self.bufs[mat].tracked;
        let out = self.new_out(1, len, tracked);
        self.record(Node::RowCombine {
            w,
            mat,
            col0,
            len,
            out,
        });
        out
    }

    pub fn sum_squares(&mut self, a: BufId) -> BufId {
        let tracked = self.bufs[a].tracked;
        let out = self.new_out(1, 1, tracked);
        self.record(Node::SumSquares { a, out });
        out
    }

    /// Fixed-order sum of scalar buffers.
    pub fn sum_list(&mut self, xs: &[BufId]) -> BufId {
        assert!(!xs.is_empty(), "sum_list needs at least one term");
        for &x in xs {
            assert_eq!(self.shape(x), (1, 1), "sum_list operands must be scalars");
        }
        let tracked = xs.iter().any(|&x| self.bufs[x].tracked);
        let out = self.new_out(1, 1, tracked);
        self.record(Node::SumList {
            xs: xs.to_vec(),
            out,
        });
        out
    }

    // ---- forward execution ----------------------------------------------

    /// Runs one node. Outputs are always created after their operands, so the
    /// output buffer lives in the tail of a `split_at_mut`.
    fn exec(bufs: &mut [Buf], node: &Node) {
        let out = node.out();
        let (head, tail) = bufs.split_at_mut(out);
        let ob = &mut tail[0].data;
        match node {
            Node::MatMul { a, b, .. } => {
                let (m, k) = (head[*a].rows, head[*a].cols);
                let n = head[*b].cols;
                gemm(
                    m,
                    k,
                    n,
                    1.0,
                    &head[*a].data,
                    k as isize,
                    1,
                    &head[*b].data,
                    n as isize,
                    1,
                    0.0,
                    ob,
                    n as isize,
                    1,
                );
            }
            Node::Add { a, b, .. } => {
                for ((o, x), y) in ob.iter_mut().zip(&head[*a].data).zip(&head[*b].data) {
                    *o = x + y;
                }
            }
            Node::Sub { a, b, .. } => {
                for ((o, x), y) in ob.iter_mut().zip(&head[*a].data).zip(&head[*b].data) {
                    *o = x - y;
                }
            }
            Node::Mul { a, b, .. } => {
                for ((o, x), y) in ob.iter_mut().zip(&head[*a].data).zip(&head[*b].data) {
                    *o = x * y;
                }
            }
            Node::Div { a, b, .. } => {
                for ((o, x), y) in ob.iter_mut().zip(&head[*a].data).zip(&head[*b].data) {
                    *o = x / y;
                }
            }
            Node::Affine { a, mul, add, .. } => {
                for (o, x) in ob.iter_mut().zip(&head[*a].data) {
                    *o = mul * x + add;
                }
            }
            Node::Tanh { a, .. } => {
                for (o, x) in ob.iter_mut().zip(&head[*a].data) {
                    *o = x.tanh();
                }
            }
            Node::Relu { a, .. } => {
                for (o, x) in ob.iter_mut().zip(&head[*a].data) {
                    *o = if *x > 0.0 { *x } else { 0.0 };
                }
            }
            Node::Exp { a, .. } => {
                for (o, x) in ob.iter_mut().zip(&head[*a].data) {
                    *o = x.exp();
                }
            }
            Node::Ln { a, .. } => {
                for (o, x) in ob.iter_mut().zip(&head[*a].data) {
                    *o = x.ln();
                }
            }
            Node::Sqrt { a, .. } => {
                for (o, x) in ob.iter_mut().zip(&head[*a].data) {
                    *o = x.sqrt();
                }
            }
            Node::Sin { a, .. } => {
                for (o, x) in ob.iter_mut().zip(&head[*a].data) {
                    *o = x.sin();
                }
            }
            Node::Cos { a, .. } => {
                for (o, x) in ob.iter_mut().zip(&head[*a].data) {
                    *o = x.cos();
                }
            }
            Node::Pow { a, e, .. } => {
                for (o, x) in ob.iter_mut().zip(&head[*a].data) {
                    *o = x.powf(*e);
                }
            }
            Node::Atan2 { y, x, .. } => {
                for ((o, yv), xv) in ob.iter_mut().zip(&head[*y].data).zip(&head[*x].data) {
                    *o = yv.atan2(*xv);
                }
            }
            Node::BiasAdd { mat, col, .. } => {
                let (r, c) = (head[*mat].rows, head[*mat].cols);
                for i in 0..r {
                    let bias = head[*col].data[i];
                    for j in 0..c {
                        ob[i * c + j] = head[*mat].data[i * c + j] + bias;
                    }
                }
            }
            Node::ScalarAdd { a, s, .. } => {
                let sv = head[*s].data[0];
                for (o, x) in ob.iter_mut().zip(&head[*a].data) {
                    *o = x + sv;
                }
            }
            Node::RowCombine {
                w,
                mat,
                col0,
                len,
                ..
            } => {
                let m = head[*w].rows;
                let p = head[*mat].cols;
                gemm(
                    1,
                    m,
                    *len,
                    1.0,
                    &head[*w].data,
                    1,
                    1,
                    &head[*mat].data[*col0..],
                    p as isize,
                    1,
                    0.0,
                    ob,
                    *len as isize,
                    1,
                );
            }
            Node::SumSquares { a, .. } => {
                ob[0] = head[*a].data.iter().map(|v| v * v).sum();
            }
            Node::SumList { xs, .. } => {
                ob[0] = xs.iter().map(|&x| head[x].data[0]).sum();
            }
        }
    }

    /// Re-executes every recorded node in order (used to verify that replay
    /// reproduces the forward values bit-exactly).
    pub fn replay(&mut self) {
        for i in 0..self.nodes.len() {
            let node = self.nodes[i].clone();
            Self::exec(&mut self.bufs, &node);
        }
    }

    // ---- backward --------------------------------------------------------

    /// Accumulates dLoss/d(buffer) for every tracked buffer, starting from a
    /// scalar loss. Consumes the tape's single backward allowance.
    pub fn backward(&mut self, loss: BufId) -> Result<(), TapeError> {
        if self.backward_done {
            return Err(TapeError::DoubleBackward);
        }
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(TapeError::NotScalarLoss { rows: r, cols: c });
        }
        self.backward_done = true;
        ensure_grad(&mut self.grads, &self.bufs, loss)[0] = 1.0;

        for idx in (0..self.nodes.len()).rev() {
            let node = self.nodes[idx].clone();
            // Once this node runs, nothing earlier consumes `out`'s adjoint,
            // so taking it is safe and frees memory as the sweep proceeds.
            let go = match self.grads[node.out()].take() {
                Some(g) => g,
                None => continue,
            };
            Self::vjp(&self.bufs, &mut self.grads, &node, &go);
        }
        Ok(())
    }

    fn vjp(bufs: &[Buf], grads: &mut [Option<Vec<f64>>], node: &Node, go: &[f64]) {
        match node {
            Node::MatMul { a, b, .. } => {
                let (m, k) = (bufs[*a].rows, bufs[*a].cols);
                let n = bufs[*b].cols;
                if bufs[*a].tracked {
                    let ga = ensure_grad(grads, bufs, *a);
                    // dA += dOut · Bᵀ
                    gemm(
                        m,
                        n,
                        k,
                        1.0,
                        go,
                        n as isize,
                        1,
                        &bufs[*b].data,
                        1,
                        n as isize,
                        1.0,
                        ga,
                        k as isize,
                        1,
                    );
                }
                if bufs[*b].tracked {
                    let gb = ensure_grad(grads, bufs, *b);
                    // dB += Aᵀ · dOut
                    gemm(
                        k,
                        m,
                        n,
                        1.0,
                        &bufs[*a].data,
                        1,
                        k as isize,
                        go,
                        n as isize,
                        1,
                        1.0,
                        gb,
                        n as isize,
                        1,
                    );
                }
            }
            Node::Add { a, b, .. } => {
                if bufs[*a].tracked {
                    let g = ensure_grad(grads, bufs, *a);
                    for (gi, gv) in g.iter_mut().zip(go) {
                        *gi += gv;
                    }
                }
                if bufs[*b].tracked {
                    let g = ensure_grad(grads, bufs, *b);
                    for (gi, gv) in g.iter_mut().zip(go) {
                        *gi += gv;
                    }
                }
            }
            Node::Sub { a, b, .. } => {
                if bufs[*a].tracked {
                    let g = ensure_grad(grads, bufs, *a);
                    for (gi, gv) in g.iter_mut().zip(go) {
                        *gi += gv;
                    }
                }
                if bufs[*b].tracked {
                    let g = ensure_grad(grads, bufs, *b);
                    for (gi, gv) in g.iter_mut().zip(go) {
                        *gi -= gv;
                    }
                }
            }
            Node::Mul { a, b, .. } => {
                if bufs[*a].tracked {
                    let bv = &bufs[*b].data;
                    let g = ensure_grad(grads, bufs, *a);
                    for i in 0..bv.len() {
                        g[i] += go[i] * bv[i];
                    }
                }
                if bufs[*b].tracked {
                    let av = &bufs[*a].data;
                    let g = ensure_grad(grads, bufs, *b);
                    for i in 0..av.len() {
                        g[i] += go[i] * av[i];
                    }
                }
            }
            Node::Div { a, b, out } => {
                // o = a/b: dA += go/b, dB -= go·o/b.
                if bufs[*a].tracked {
                    let bv = &bufs[*b].data;
                    let g = ensure_grad(grads, bufs, *a);
                    for i in 0..bv.len() {
                        g[i] += go[i] / bv[i];
                    }
                }
                if bufs[*b].tracked {
                    let bv = &bufs[*b].data;
                    let ov = &bufs[*out].data;
                    let g = ensure_grad(grads, bufs, *b);
                    for i in 0..bv.len() {
                        g[i] -= go[i] * ov[i] / bv[i];
                    }
                }
            }
            Node::Affine { a, mul, .. } => {
                if bufs[*a].tracked {
                    let g = ensure_grad(grads, bufs, *a);
                    for (gi, gv) in g.iter_mut().zip(go) {
                        *gi += mul * gv;
                    }
                }
            }
            Node::Tanh { a, out } => {
                if bufs[*a].tracked {
                    let ov = &bufs[*out].data;
                    let g = ensure_grad(grads, bufs, *a);
                    for i in 0..ov.len() {
                        g[i] += go[i] * (1.0 - ov[i] * ov[i]);
                    }
                }
            }
            Node::Relu { a, .. } => {
                // subgradient 0 at the kink
                if bufs[*a].tracked {
                    let av = &bufs[*a].data;
                    let g = ensure_grad(grads, bufs, *a);
                    for i in 0..av.len() {
                        if av[i] > 0.0 {
                            g[i] += go[i];
                        }
                    }
                }
            }
            Node::Exp { a, out } => {
                if bufs[*a].tracked {
                    let ov = &bufs[*out].data;
                    let g = ensure_grad(grads, bufs, *a);
                    for i in 0..ov.len() {
                        g[i] += go[i] * ov[i];
                    }
                }
            }
            Node::Ln { a, .. } => {
                if bufs[*a].tracked {
                    let av = &bufs[*a].data;
                    let g = ensure_grad(grads, bufs, *a);
                    for i in 0..av.len() {
                        g[i] += go[i] / av[i];
                    }
                }
            }
            Node::Sqrt { a, out } => {
                if bufs[*a].tracked {
                    let ov = &bufs[*out].data;
                    let g = ensure_grad(grads, bufs, *a);
                    for i in 0..ov.len() {
                        g[i] += go[i] * 0.5 / ov[i];
                    }
                }
            }
            Node::Sin { a, .. } => {
                if bufs[*a].tracked {
                    let av = &bufs[*a].data;
                    let g = ensure_grad(grads, bufs, *a);
                    for i in 0..av.len() {
                        g[i] += go[i] * av[i].cos();
                    }
                }
            }
            Node::Cos { a, .. } => {
                if bufs[*a].tracked {
                    let av = &bufs[*a].data;
                    let g = ensure_grad(grads, bufs, *a);
                    for i in 0..av.len() {
                        g[i] -= go[i] * av[i].sin();
                    }
                }
            }
            Node::Pow { a, e, .. } => {
                if bufs[*a].tracked {
                    let av = &bufs[*a].data;
                    let g = ensure_grad(grads, bufs, *a);
                    for i in 0..av.len() {
                        g[i] += go[i] * e * av[i].powf(e - 1.0);
                    }
                }
            }
            Node::Atan2 { y, x, .. } => {
                // d atan2(y,x) = (x·dy - y·dx)/s, s = x²+y².
                let yv = &bufs[*y].data;
                let xv = &bufs[*x].data;
                if bufs[*y].tracked {
                    let g = ensure_grad(grads, bufs, *y);
                    for i in 0..yv.len() {
                        g[i] += go[i] * xv[i] / (xv[i] * xv[i] + yv[i] * yv[i]);
                    }
                }
                if bufs[*x].tracked {
                    let g = ensure_grad(grads, bufs, *x);
                    for i in 0..yv.len() {
                        g[i] -= go[i] * yv[i] / (xv[i] * xv[i] + yv[i] * yv[i]);
                    }
                }
            }
            Node::BiasAdd { mat, col, .. } => {
                let (r, c) = (bufs[*mat].rows, bufs[*mat].cols);
                if bufs[*mat].tracked {
                    let g = ensure_grad(grads, bufs, *mat);
                    for (gi, gv) in g.iter_mut().zip(go) {
                        *gi += gv;
                    }
                }
                if bufs[*col].tracked {
                    let g = ensure_grad(grads, bufs, *col);
                    for i in 0..r {
                        let mut s = 0.0;
                        for j in 0..c {
                            s += go[i * c + j];
                        }
                        g[i] += s;
                    }
                }
            }
            Node::ScalarAdd { a, s, .. } => {
                if bufs[*a].tracked {
                    let g = ensure_grad(grads, bufs, *a);
                    for (gi, gv) in g.iter_mut().zip(go) {
                        *gi += gv;
                    }
                }
                if bufs[*s].tracked {
                    let total: f64 = go.iter().sum();
                    ensure_grad(grads, bufs, *s)[0] += total;
                }
            }
            Node::RowCombine {
                w,
                mat,
                col0,
                len,
                ..
            } => {
                let m = bufs[*w].rows;
                let p = bufs[*mat].cols;
                if bufs[*w].tracked {
                    let gw = ensure_grad(grads, bufs, *w);
                    // dW(m×1) += mat_view(m×len) · goᵀ(len×1)
                    gemm(
                        m,
                        *len,
                        1,
                        1.0,
                        &bufs[*mat].data[*col0..],
                        p as isize,
                        1,
                        go,
                        1,
                        1,
                        1.0,
                        gw,
                        1,
                        1,
                    );
                }
                if bufs[*mat].tracked {
                    let gm = ensure_grad(grads, bufs, *mat);
                    // dMat_view(m×len) += w(m×1) · go(1×len)
                    gemm(
                        m,
                        1,
                        *len,
                        1.0,
                        &bufs[*w].data,
                        1,
                        1,
                        go,
                        *len as isize,
                        1,
                        1.0,
                        &mut gm[*col0..],
                        p as isize,
                        1,
                    );
                }
            }
            Node::SumSquares { a, .. } => {
                if bufs[*a].tracked {
                    let av = &bufs[*a].data;
                    let g = ensure_grad(grads, bufs, *a);
                    for i in 0..av.len() {
                        g[i] += 2.0 * go[0] * av[i];
                    }
                }
            }
            Node::SumList { xs, .. } => {
                for &x in xs {
                    if bufs[x].tracked {
                        ensure_grad(grads, bufs, x)[0] += go[0];
                    }
                }
            }
        }
    }

    /// Assembles the flat gradient for registered parameters after `backward`.
    pub fn param_gradient(&self, total: usize) -> GradVector {
        let mut flat = vec![0.0; total];
        for &(id, offset) in &self.params {
            if let Some(g) = &self.grads[id] {
                flat[offset..offset + g.len()].copy_from_slice(g);
            }
        }
        flat
    }

    /// One-call gradient of a recorded scalar loss with respect to all
    /// registered parameters.
    pub fn gradient(&mut self, loss: BufId, total: usize) -> Result<GradVector, TapeError> {
        self.backward(loss)?;
        Ok(self.param_gradient(total))
    }
}
