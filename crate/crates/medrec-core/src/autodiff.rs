//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] is a define-by-run graph: every operation appends a node holding
//! the forward value and enough information to push gradients back to its
//! inputs. All model math in this crate (encoders, graph convolutions, the
//! decoder, the loss) is expressed through these ops, so a single
//! [`Tape::backward`] call yields exact analytic gradients for every
//! parameter. Finite-difference tests in this module and in the acceptance
//! suite pin the op set down numerically.
//!
//! Shapes are deliberately rigid: everything is a 2-D array, vectors are
//! `1×n` rows or `n×1` columns. Shape violations are programming errors and
//! panic; user-facing validation happens in the layers above.

use ndarray::{s, Array2, Axis};

// ============ Tape and variables ============

/// Handle to a value stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Additive constant used to mask logits before a softmax; large enough that
/// the masked entry underflows to exactly zero probability in `f64`.
pub const MASK_NEG: f64 = -1e9;

enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `a (m×n) + row (1×n)` broadcast over rows.
    AddRow(Var, Var),
    /// Elementwise product of same-shape matrices.
    Mul(Var, Var),
    /// `a (m×n) ⊙ row (1×n)` broadcast over rows.
    MulRow(Var, Var),
    /// `a (m×n) ⊙ col (m×1)` broadcast over columns.
    MulCol(Var, Var),
    /// `s (1×1) * a`, scalar held on the tape (e.g. a learnable gate).
    ScalarMul(Var, Var),
    Scale(Var, f64),
    /// Add a fixed matrix (attention masks etc.); gradient passes through.
    AddConst(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Ln(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    },
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        a: Var,
        start: usize,
        len: usize,
    },
    SliceRows {
        a: Var,
        start: usize,
        len: usize,
    },
    /// `out[i, :] = a[ids[i], :]` (embedding lookup); backward scatter-adds.
    GatherRows {
        a: Var,
        ids: Vec<usize>,
    },
    /// `out[i, 0] = a[coords[i].0, coords[i].1]`.
    SelectEntries {
        a: Var,
        coords: Vec<(usize, usize)>,
    },
    SumAll(Var),
    /// Divide each row by its sum (renormalising a nonnegative score row).
    NormalizeRows(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads {
    g: Vec<Option<Array2<f64>>>,
}

impl Grads {
    /// Gradient of the loss w.r.t. `v`; zero-filled if the value never
    /// influenced the loss.
    pub fn get(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        match &self.g[v.0] {
            Some(a) => a.clone(),
            None => Array2::zeros(shape),
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&Array2<f64>> {
        self.g[v.0].as_ref()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let d = self.nodes[v.0].value.dim();
        (d.0, d.1)
    }

    /// Scalar stored in a `1×1` value.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let a = self.value(v);
        assert_eq!(a.dim(), (1, 1), "scalar_value on non-1×1 tensor");
        a[(0, 0)]
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        // Non-finite values are deliberately allowed onto the tape: a
        // diverging model legitimately overflows mid-forward, and the
        // training loop reports that cleanly by checking the loss value.
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    // ============ Leaves ============

    /// Constant input: gradients are not tracked through it.
    pub fn constant(&mut self, a: Array2<f64>) -> Var {
        self.push(a, Op::Leaf, false)
    }

    /// Trainable input: [`Grads::get`] will hold `∂loss/∂param` after backward.
    pub fn param(&mut self, a: Array2<f64>) -> Var {
        self.push(a, Op::Leaf, true)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    // ============ Arithmetic ============

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.ncols(),
            vb.nrows(),
            "matmul inner dims: {:?} × {:?}",
            va.dim(),
            vb.dim()
        );
        let out = va.dot(vb);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Matmul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let out = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let out = self.value(a) - self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row: second arg must be 1×n");
        assert_eq!(self.shape(a).1, self.shape(row).1, "add_row width");
        let out = self.value(a) + self.value(row);
        let ng = self.needs(a) || self.needs(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let out = self.value(a) * self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "mul_row: second arg must be 1×n");
        assert_eq!(self.shape(a).1, self.shape(row).1, "mul_row width");
        let out = self.value(a) * self.value(row);
        let ng = self.needs(a) || self.needs(row);
        self.push(out, Op::MulRow(a, row), ng)
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        assert_eq!(self.shape(col).1, 1, "mul_col: second arg must be m×1");
        assert_eq!(self.shape(a).0, self.shape(col).0, "mul_col height");
        let out = self.value(a) * self.value(col);
        let ng = self.needs(a) || self.needs(col);
        self.push(out, Op::MulCol(a, col), ng)
    }

    pub fn scalar_mul(&mut self, sc: Var, a: Var) -> Var {
        assert_eq!(self.shape(sc), (1, 1), "scalar_mul: first arg must be 1×1");
        let out = self.value(a) * self.scalar_value(sc);
        let ng = self.needs(a) || self.needs(sc);
        self.push(out, Op::ScalarMul(sc, a), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, c), ng)
    }

    pub fn add_const(&mut self, a: Var, c: &Array2<f64>) -> Var {
        assert_eq!(self.value(a).dim(), c.dim(), "add_const shape mismatch");
        let out = self.value(a) + c;
        let ng = self.needs(a);
        self.push(out, Op::AddConst(a), ng)
    }

    // ============ Nonlinearities ============

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        let ng = self.needs(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let ng = self.needs(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::ln);
        let ng = self.needs(a);
        self.push(out, Op::Ln(a), ng)
    }

    /// Numerically stable softmax along each row. Entries pushed to
    /// [`MASK_NEG`] come out as exactly zero.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = va.clone();
        for mut row in out.rows_mut() {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - mx).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        let ng = self.needs(a);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Per-row layer normalisation with affine parameters (`gain`, `bias`
    /// are `1×n`): `y = gain ⊙ (x − μ)/√(σ² + eps) + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let n = self.shape(x).1;
        assert_eq!(self.shape(gain), (1, n), "layer_norm gain shape");
        assert_eq!(self.shape(bias), (1, n), "layer_norm bias shape");
        let vx = self.value(x);
        let vg = self.value(gain);
        let vb = self.value(bias);
        let mut out = Array2::zeros(vx.dim());
        for (r, row) in vx.rows().into_iter().enumerate() {
            let mean = row.mean().unwrap();
            let var = row.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..n {
                out[(r, c)] = vg[(0, c)] * (row[c] - mean) * inv + vb[(0, c)];
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(out, Op::LayerNorm { x, gain, bias, eps }, ng)
    }

    // ============ Shape manipulation ============

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        let ng = self.needs(a);
        self.push(out, Op::Transpose(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.shape(parts[0]).0;
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Array2::zeros((rows, total));
        let mut at = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.nrows(), rows, "concat_cols row mismatch");
            out.slice_mut(s![.., at..at + v.ncols()]).assign(v);
            at += v.ncols();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.shape(parts[0]).1;
        let total: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut out = Array2::zeros((total, cols));
        let mut at = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.ncols(), cols, "concat_rows col mismatch");
            out.slice_mut(s![at..at + v.nrows(), ..]).assign(v);
            at += v.nrows();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= self.shape(a).1, "slice_cols out of range");
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        let ng = self.needs(a);
        self.push(out, Op::SliceCols { a, start, len }, ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= self.shape(a).0, "slice_rows out of range");
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let ng = self.needs(a);
        self.push(out, Op::SliceRows { a, start, len }, ng)
    }

    pub fn gather_rows(&mut self, a: Var, ids: &[usize]) -> Var {
        let va = self.value(a);
        let mut out = Array2::zeros((ids.len(), va.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < va.nrows(), "gather_rows: id {} out of {}", id, va.nrows());
            out.row_mut(i).assign(&va.row(id));
        }
        let ng = self.needs(a);
        self.push(
            out,
            Op::GatherRows {
                a,
                ids: ids.to_vec(),
            },
            ng,
        )
    }

    pub fn select_entries(&mut self, a: Var, coords: &[(usize, usize)]) -> Var {
        let va = self.value(a);
        let mut out = Array2::zeros((coords.len(), 1));
        for (i, &(r, c)) in coords.iter().enumerate() {
            out[(i, 0)] = va[(r, c)];
        }
        let ng = self.needs(a);
        self.push(
            out,
            Op::SelectEntries {
                a,
                coords: coords.to_vec(),
            },
            ng,
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.needs(a);
        self.push(out, Op::SumAll(a), ng)
    }

    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = va.clone();
        for mut row in out.rows_mut() {
            let sum: f64 = row.sum();
            // A finite non-positive sum is a construction bug; a non-finite
            // sum is a diverged model, which must propagate to the loss so
            // the training loop can abort cleanly instead of panicking here.
            assert!(
                !(sum.is_finite() && sum <= 0.0),
                "normalize_rows: non-positive row sum {sum}"
            );
            row.mapv_inplace(|x| x / sum);
        }
        let ng = self.needs(a);
        self.push(out, Op::NormalizeRows(a), ng)
    }

    // ============ Backward pass ============

    /// Backpropagate from a `1×1` loss node. Returns per-variable gradients.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward: loss must be 1×1");
        let mut g: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        g[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=loss.0).rev() {
            if g[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let dout = g[i].clone().unwrap();
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    if self.needs(*a) {
                        let d = dout.dot(&self.value(*b).t());
                        acc(&mut g, *a, d);
                    }
                    if self.needs(*b) {
                        let d = self.value(*a).t().dot(&dout);
                        acc(&mut g, *b, d);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        acc(&mut g, *a, dout.clone());
                    }
                    if self.needs(*b) {
                        acc(&mut g, *b, dout.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        acc(&mut g, *a, dout.clone());
                    }
                    if self.needs(*b) {
                        acc(&mut g, *b, -&dout);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*a) {
                        acc(&mut g, *a, dout.clone());
                    }
                    if self.needs(*row) {
                        let d = dout.sum_axis(Axis(0)).insert_axis(Axis(0));
                        acc(&mut g, *row, d);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        acc(&mut g, *a, &dout * self.value(*b));
                    }
                    if self.needs(*b) {
                        acc(&mut g, *b, &dout * self.value(*a));
                    }
                }
                Op::MulRow(a, row) => {
                    if self.needs(*a) {
                        acc(&mut g, *a, &dout * self.value(*row));
                    }
                    if self.needs(*row) {
                        let d = (&dout * self.value(*a))
                            .sum_axis(Axis(0))
                            .insert_axis(Axis(0));
                        acc(&mut g, *row, d);
                    }
                }
                Op::MulCol(a, col) => {
                    if self.needs(*a) {
                        acc(&mut g, *a, &dout * self.value(*col));
                    }
                    if self.needs(*col) {
                        let d = (&dout * self.value(*a))
                            .sum_axis(Axis(1))
                            .insert_axis(Axis(1));
                        acc(&mut g, *col, d);
                    }
                }
                Op::ScalarMul(sc, a) => {
                    if self.needs(*sc) {
                        let d = (&dout * self.value(*a)).sum();
                        acc(&mut g, *sc, Array2::from_elem((1, 1), d));
                    }
                    if self.needs(*a) {
                        acc(&mut g, *a, &dout * self.scalar_value(*sc));
                    }
                }
                Op::Scale(a, c) => {
                    if self.needs(*a) {
                        acc(&mut g, *a, &dout * *c);
                    }
                }
                Op::AddConst(a) => {
                    if self.needs(*a) {
                        acc(&mut g, *a, dout.clone());
                    }
                }
                Op::Relu(a) => {
                    if self.needs(*a) {
                        let mask = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                        acc(&mut g, *a, &dout * &mask);
                    }
                }
                Op::Tanh(a) => {
                    if self.needs(*a) {
                        let y = &self.nodes[i].value;
                        acc(&mut g, *a, &dout * &y.mapv(|v| 1.0 - v * v));
                    }
                }
                Op::Sigmoid(a) => {
                    if self.needs(*a) {
                        let y = &self.nodes[i].value;
                        acc(&mut g, *a, &dout * &y.mapv(|v| v * (1.0 - v)));
                    }
                }
                Op::Ln(a) => {
                    if self.needs(*a) {
                        acc(&mut g, *a, &dout / self.value(*a));
                    }
                }
                Op::SoftmaxRows(a) => {
                    if self.needs(*a) {
                        let y = &self.nodes[i].value;
                        let mut dx = Array2::zeros(y.dim());
                        for r in 0..y.nrows() {
                            let dot: f64 = (0..y.ncols()).map(|c| dout[(r, c)] * y[(r, c)]).sum();
                            for c in 0..y.ncols() {
                                dx[(r, c)] = y[(r, c)] * (dout[(r, c)] - dot);
                            }
                        }
                        acc(&mut g, *a, dx);
                    }
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let vx = self.value(*x);
                    let vg = self.value(*gain);
                    let n = vx.ncols() as f64;
                    let mut dx = Array2::zeros(vx.dim());
                    let mut dgain = Array2::zeros((1, vx.ncols()));
                    let mut dbias = Array2::zeros((1, vx.ncols()));
                    for r in 0..vx.nrows() {
                        let row = vx.row(r);
                        let mean = row.mean().unwrap();
                        let var = row.mapv(|v| (v - mean).powi(2)).mean().unwrap();
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|&v| (v - mean) * inv).collect();
                        let dxhat: Vec<f64> = (0..vx.ncols())
                            .map(|c| dout[(r, c)] * vg[(0, c)])
                            .collect();
                        let mean_dxhat: f64 = dxhat.iter().sum::<f64>() / n;
                        let mean_dxhat_xhat: f64 =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
                        for c in 0..vx.ncols() {
                            dgain[(0, c)] += dout[(r, c)] * xhat[c];
                            dbias[(0, c)] += dout[(r, c)];
                            dx[(r, c)] =
                                inv * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
                        }
                    }
                    if self.needs(*x) {
                        acc(&mut g, *x, dx);
                    }
                    if self.needs(*gain) {
                        acc(&mut g, *gain, dgain);
                    }
                    if self.needs(*bias) {
                        acc(&mut g, *bias, dbias);
                    }
                }
                Op::Transpose(a) => {
                    if self.needs(*a) {
                        acc(&mut g, *a, dout.t().to_owned());
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.shape(p).1;
                        if self.needs(p) {
                            let d = dout.slice(s![.., at..at + w]).to_owned();
                            acc(&mut g, p, d);
                        }
                        at += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let h = self.shape(p).0;
                        if self.needs(p) {
                            let d = dout.slice(s![at..at + h, ..]).to_owned();
                            acc(&mut g, p, d);
                        }
                        at += h;
                    }
                }
                Op::SliceCols { a, start, len } => {
                    if self.needs(*a) {
                        let mut d = Array2::zeros(self.value(*a).dim());
                        d.slice_mut(s![.., *start..*start + *len]).assign(&dout);
                        acc(&mut g, *a, d);
                    }
                }
                Op::SliceRows { a, start, len } => {
                    if self.needs(*a) {
                        let mut d = Array2::zeros(self.value(*a).dim());
                        d.slice_mut(s![*start..*start + *len, ..]).assign(&dout);
                        acc(&mut g, *a, d);
                    }
                }
                Op::GatherRows { a, ids } => {
                    if self.needs(*a) {
                        let mut d = Array2::zeros(self.value(*a).dim());
                        for (i_row, &id) in ids.iter().enumerate() {
                            let mut dst = d.row_mut(id);
                            dst += &dout.row(i_row);
                        }
                        acc(&mut g, *a, d);
                    }
                }
                Op::SelectEntries { a, coords } => {
                    if self.needs(*a) {
                        let mut d = Array2::zeros(self.value(*a).dim());
                        for (i_row, &(r, c)) in coords.iter().enumerate() {
                            d[(r, c)] += dout[(i_row, 0)];
                        }
                        acc(&mut g, *a, d);
                    }
                }
                Op::SumAll(a) => {
                    if self.needs(*a) {
                        let d = Array2::from_elem(self.value(*a).dim(), dout[(0, 0)]);
                        acc(&mut g, *a, d);
                    }
                }
                Op::NormalizeRows(a) => {
                    if self.needs(*a) {
                        let y = &self.nodes[i].value;
                        let va = self.value(*a);
                        let mut dx = Array2::zeros(y.dim());
                        for r in 0..y.nrows() {
                            let sum: f64 = va.row(r).sum();
                            let dot: f64 = (0..y.ncols()).map(|c| dout[(r, c)] * y[(r, c)]).sum();
                            for c in 0..y.ncols() {
                                dx[(r, c)] = (dout[(r, c)] - dot) / sum;
                            }
                        }
                        acc(&mut g, *a, dx);
                    }
                }
            }
        }
        Grads { g }
    }
}

fn acc(g: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
    match &mut g[v.0] {
        Some(existing) => *existing += &delta,
        slot @ None => *slot = Some(delta),
    }
}

// ============ Tests ============
