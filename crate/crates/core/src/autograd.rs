//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar (1×1) node walks the tape in reverse and
//! returns the gradient of that scalar with respect to every node that
//! transitively depends on a trainable leaf. Constant leaves (frozen weights,
//! raw inputs) never receive gradients.

use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, GemmArg, Matrix};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Relu(Var),
    Tanh(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Transpose(Var),
    Softmax(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SegmentMax(Var, Vec<usize>),
    MeanRows(Var),
    SumAll(Var),
    CrossEntropy {
        logits: Var,
        probs: Matrix,
        targets: Vec<Option<usize>>,
        weights: Vec<f64>,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Which score entries a row of [`Graph::softmax_rows`] may attend to.
#[derive(Clone, Debug)]
pub struct SoftmaxMask<'a> {
    /// Restrict row `i` to columns `j <= i + offset`.
    pub causal: bool,
    /// Absolute position of row 0 when queries are a suffix of the keys.
    pub offset: usize,
    /// Columns marked `false` are excluded for every row.
    pub valid: Option<&'a [bool]>,
}

/// Per-row options for [`Graph::cross_entropy`].
pub struct CrossEntropyTargets<'a> {
    /// Target column per row; `None` rows contribute nothing.
    pub targets: &'a [Option<usize>],
    /// Per-row multiplier on the negative log-likelihood.
    pub weights: &'a [f64],
    /// Optional per-row admissible columns; excluded columns get zero probability.
    pub allowed: Option<&'a [Vec<bool>]>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bindings: Vec<(Var, ParamId)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf bound to a trainable parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.bindings.push((v, id));
        v
    }

    /// A leaf with a gradient but no parameter binding (used by gradient checks).
    pub fn variable(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.cols, vb.rows, "matmul {:?} x {:?}", va.shape(), vb.shape());
        let mut out = Matrix::zeros(va.rows, vb.cols);
        gemm(GemmArg::plain(va), GemmArg::plain(vb), &mut out, 0.0);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "elementwise shape");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| f(*x, *y)).collect();
        Matrix {
            rows: va.rows,
            cols: va.cols,
            data,
        }
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Matrix {
        let va = self.value(a);
        Matrix {
            rows: va.rows,
            cols: va.cols,
            data: va.data.iter().map(|x| f(*x)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    /// Adds a 1×n row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.rows, 1, "add_row expects a single row");
        assert_eq!(va.cols, vr.cols, "add_row width");
        let mut out = va.clone();
        for r in 0..out.rows {
            for (x, b) in out.row_mut(r).iter_mut().zip(&vr.data) {
                *x += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, f: f64) -> Var {
        let out = self.map(a, |x| x * f);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, f), ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        let ng = self.ng(a);
        self.push(out, Op::Gelu(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.map(a, |x| x.max(0.0));
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::tanh);
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    /// Row-wise layer normalization with 1×n gain and offset.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let vx = self.value(x);
        let (vg, vb) = (self.value(gain), self.value(bias));
        assert_eq!(vg.shape(), (1, vx.cols), "layer_norm gain shape");
        assert_eq!(vb.shape(), (1, vx.cols), "layer_norm bias shape");
        let n = vx.cols as f64;
        let mut xhat = Matrix::zeros(vx.rows, vx.cols);
        let mut out = Matrix::zeros(vx.rows, vx.cols);
        let mut inv_std = Vec::with_capacity(vx.rows);
        for r in 0..vx.rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for c in 0..vx.cols {
                let h = (row[c] - mean) * is;
                xhat.data[r * vx.cols + c] = h;
                out.data[r * vx.cols + c] = h * vg.data[c] + vb.data[c];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(out, Op::Transpose(a), ng)
    }

    /// Row-wise softmax restricted by `mask`. Rows with no admissible entry
    /// produce all zeros.
    pub fn softmax_rows(&mut self, a: Var, mask: SoftmaxMask<'_>) -> Var {
        let va = self.value(a);
        if let Some(valid) = mask.valid {
            assert_eq!(valid.len(), va.cols, "softmax mask width");
        }
        let mut out = Matrix::zeros(va.rows, va.cols);
        for r in 0..va.rows {
            let allowed = |c: usize| {
                (!mask.causal || c <= r + mask.offset) && mask.valid.map_or(true, |v| v[c])
            };
            let row = va.row(r);
            let mut max = f64::NEG_INFINITY;
            for (c, x) in row.iter().enumerate() {
                if allowed(c) && *x > max {
                    max = *x;
                }
            }
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut sum = 0.0;
            let orow = out.row_mut(r);
            for (c, x) in row.iter().enumerate() {
                if allowed(c) {
                    let e = (x - max).exp();
                    orow[c] = e;
                    sum += e;
                }
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::Softmax(a), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let va = self.value(a);
        assert!(start + len <= va.cols, "slice_cols out of range");
        let mut out = Matrix::zeros(va.rows, len);
        for r in 0..va.rows {
            out.row_mut(r).copy_from_slice(&va.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let vp = self.value(*p);
            assert_eq!(vp.rows, rows, "concat_cols row count");
            for r in 0..rows {
                out.row_mut(r)[off..off + vp.cols].copy_from_slice(vp.row(r));
            }
            off += vp.cols;
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let va = self.value(a);
        assert!(start + len <= va.rows, "slice_rows out of range");
        let data = va.data[start * va.cols..(start + len) * va.cols].to_vec();
        let out = Matrix {
            rows: len,
            cols: va.cols,
            data,
        };
        let ng = self.ng(a);
        self.push(out, Op::SliceRows(a, start), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let vp = self.value(*p);
            assert_eq!(vp.cols, cols, "concat_rows width");
            data.extend_from_slice(&vp.data);
            rows += vp.rows;
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(Matrix { rows, cols, data }, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let vt = self.value(table);
        let mut out = Matrix::zeros(indices.len(), vt.cols);
        for (i, &ix) in indices.iter().enumerate() {
            assert!(ix < vt.rows, "gather index {ix} out of {} rows", vt.rows);
            out.row_mut(i).copy_from_slice(vt.row(ix));
        }
        let ng = self.ng(table);
        self.push(out, Op::GatherRows(table, indices.to_vec()), ng)
    }

    /// Column-wise maximum over all rows, producing 1×cols.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let rows = self.value(a).rows;
        self.segment_max(a, rows)
    }

    /// Column-wise maximum over consecutive blocks of `seg` rows, producing
    /// (rows/seg)×cols. Ties pick the first row of the block.
    pub fn segment_max(&mut self, a: Var, seg: usize) -> Var {
        let va = self.value(a);
        assert!(seg > 0 && va.rows % seg == 0, "segment_max: {} rows by {seg}", va.rows);
        let blocks = va.rows / seg;
        let mut arg = vec![0; blocks * va.cols];
        let mut out = Matrix::zeros(blocks, va.cols);
        for b in 0..blocks {
            let base = b * seg;
            out.row_mut(b).copy_from_slice(va.row(base));
            for r in base..base + seg {
                for (c, x) in va.row(r).iter().enumerate() {
                    let o = b * va.cols + c;
                    if r == base {
                        arg[o] = r;
                    } else if *x > out.data[o] {
                        out.data[o] = *x;
                        arg[o] = r;
                    }
                }
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::SegmentMax(a, arg), ng)
    }

    /// Column-wise mean over rows, producing 1×cols.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        assert!(va.rows > 0, "mean over zero rows");
        let mut out = Matrix::zeros(1, va.cols);
        for r in 0..va.rows {
            for (o, x) in out.data.iter_mut().zip(va.row(r)) {
                *o += x;
            }
        }
        let n = va.rows as f64;
        out.data.iter_mut().for_each(|o| *o /= n);
        let ng = self.ng(a);
        self.push(out, Op::MeanRows(a), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let ng = self.ng(a);
        self.push(Matrix::filled(1, 1, s), Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Var {
        let d = self.sub(pred, target);
        let sq = self.mul(d, d);
        self.mean_all(sq)
    }

    /// Weighted sum over rows of `-ln softmax(logits)[target]` (natural log).
    pub fn cross_entropy(&mut self, logits: Var, spec: CrossEntropyTargets<'_>) -> Var {
        let vl = self.value(logits);
        assert_eq!(spec.targets.len(), vl.rows, "cross_entropy targets");
        assert_eq!(spec.weights.len(), vl.rows, "cross_entropy weights");
        let mut probs = Matrix::zeros(vl.rows, vl.cols);
        let mut loss = 0.0;
        for r in 0..vl.rows {
            let Some(t) = spec.targets[r] else { continue };
            let allowed = |c: usize| spec.allowed.map_or(true, |a| a[r][c]);
            assert!(allowed(t), "cross_entropy target {t} is masked out");
            let row = vl.row(r);
            let max = (0..vl.cols)
                .filter(|c| allowed(*c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = (0..vl.cols)
                .filter(|c| allowed(*c))
                .map(|c| (row[c] - max).exp())
                .sum();
            let lse = max + sum.ln();
            for c in (0..vl.cols).filter(|c| allowed(*c)) {
                probs.set(r, c, (row[c] - lse).exp());
            }
            loss += spec.weights[r] * (lse - row[t]);
        }
        let ng = self.ng(logits);
        self.push(
            Matrix::filled(1, 1, loss),
            Op::CrossEntropy {
                logits,
                probs,
                targets: spec.targets.to_vec(),
                weights: spec.weights.to_vec(),
            },
            ng,
        )
    }

    /// Reverse sweep from a 1×1 node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward from non-scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients {
            grads,
            bindings: self.bindings.clone(),
        }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, delta: Matrix| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let mut da = Matrix::zeros(va.rows, va.cols);
                    gemm(GemmArg::plain(g), GemmArg::t(vb), &mut da, 0.0);
                    acc(*a, da);
                }
                if self.ng(*b) {
                    let mut db = Matrix::zeros(vb.rows, vb.cols);
                    gemm(GemmArg::t(va), GemmArg::plain(g), &mut db, 0.0);
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                let mut neg = g.clone();
                neg.scale_assign(-1.0);
                acc(*b, neg);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let da = elementwise(g, vb, |x, y| x * y);
                let db = elementwise(g, va, |x, y| x * y);
                acc(*a, da);
                acc(*b, db);
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                let mut dr = Matrix::zeros(1, g.cols);
                for r in 0..g.rows {
                    for (d, x) in dr.data.iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
                acc(*row, dr);
            }
            Op::Scale(a, f) => {
                let mut d = g.clone();
                d.scale_assign(*f);
                acc(*a, d);
            }
            Op::Gelu(a) => {
                let d = elementwise(g, self.value(*a), |gy, x| {
                    let u = GELU_C * (x + 0.044715 * x * x * x);
                    let t = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                    gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                });
                acc(*a, d);
            }
            Op::Relu(a) => {
                let d = elementwise(g, self.value(*a), |gy, x| if x > 0.0 { gy } else { 0.0 });
                acc(*a, d);
            }
            Op::Tanh(a) => {
                let d = elementwise(g, &node.value, |gy, y| gy * (1.0 - y * y));
                acc(*a, d);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let vg = self.value(*gain);
                let cols = g.cols;
                let n = cols as f64;
                let mut dg = Matrix::zeros(1, cols);
                let mut db = Matrix::zeros(1, cols);
                let mut dx = Matrix::zeros(g.rows, cols);
                for r in 0..g.rows {
                    let gy = g.row(r);
                    let xh = xhat.row(r);
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for c in 0..cols {
                        dg.data[c] += gy[c] * xh[c];
                        db.data[c] += gy[c];
                        let dxh = gy[c] * vg.data[c];
                        sum_d += dxh;
                        sum_dx += dxh * xh[c];
                    }
                    let out = dx.row_mut(r);
                    for c in 0..cols {
                        let dxh = gy[c] * vg.data[c];
                        out[c] = inv_std[r] / n * (n * dxh - sum_d - xh[c] * sum_dx);
                    }
                }
                acc(*x, dx);
                acc(*gain, dg);
                acc(*bias, db);
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Softmax(a) => {
                let y = &node.value;
                let mut d = Matrix::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (o, (p, q)) in d.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = p * (q - dot);
                    }
                }
                acc(*a, d);
            }
            Op::SliceCols(a, start) => {
                let va = self.value(*a);
                let mut d = Matrix::zeros(va.rows, va.cols);
                for r in 0..va.rows {
                    d.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                }
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols;
                    let mut d = Matrix::zeros(g.rows, w);
                    for r in 0..g.rows {
                        d.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                    }
                    acc(*p, d);
                    off += w;
                }
            }
            Op::SliceRows(a, start) => {
                let va = self.value(*a);
                let mut d = Matrix::zeros(va.rows, va.cols);
                d.data[start * va.cols..(start + g.rows) * va.cols].copy_from_slice(&g.data);
                acc(*a, d);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let vp = self.value(*p);
                    let n = vp.len();
                    let d = Matrix {
                        rows: vp.rows,
                        cols: vp.cols,
                        data: g.data[off..off + n].to_vec(),
                    };
                    acc(*p, d);
                    off += n;
                }
            }
            Op::GatherRows(table, indices) => {
                let vt = self.value(*table);
                let mut d = Matrix::zeros(vt.rows, vt.cols);
                for (i, &ix) in indices.iter().enumerate() {
                    for (o, x) in d.row_mut(ix).iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                acc(*table, d);
            }
            Op::SegmentMax(a, arg) => {
                let va = self.value(*a);
                let mut d = Matrix::zeros(va.rows, va.cols);
                for (o, &r) in arg.iter().enumerate() {
                    let c = o % va.cols;
                    d.data[r * va.cols + c] += g.data[o];
                }
                acc(*a, d);
            }
            Op::MeanRows(a) => {
                let va = self.value(*a);
                let n = va.rows as f64;
                let mut d = Matrix::zeros(va.rows, va.cols);
                for r in 0..va.rows {
                    for (o, x) in d.row_mut(r).iter_mut().zip(&g.data) {
                        *o = x / n;
                    }
                }
                acc(*a, d);
            }
            Op::SumAll(a) => {
                let va = self.value(*a);
                acc(*a, Matrix::filled(va.rows, va.cols, g.data[0]));
            }
            Op::CrossEntropy {
                logits,
                probs,
                targets,
                weights,
            } => {
                let scale = g.data[0];
                let mut d = Matrix::zeros(probs.rows, probs.cols);
                for r in 0..probs.rows {
                    let Some(t) = targets[r] else { continue };
                    let w = weights[r] * scale;
                    for (o, p) in d.row_mut(r).iter_mut().zip(probs.row(r)) {
                        *o = w * p;
                    }
                    d.data[r * probs.cols + t] -= w;
                }
                acc(*logits, d);
            }
        }
    }
}

fn elementwise(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    Matrix {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect(),
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    bindings: Vec<(Var, ParamId)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradients summed per bound parameter (a parameter bound twice gets both
    /// contributions).
    pub fn param_grads(&self) -> Vec<(ParamId, Matrix)> {
        let mut out: Vec<(ParamId, Matrix)> = Vec::new();
        for (v, id) in &self.bindings {
            let Some(g) = &self.grads[v.0] else { continue };
            match out.iter_mut().find(|(pid, _)| pid == id) {
                Some((_, m)) => m.add_assign(g),
                None => out.push((*id, g.clone())),
            }
        }
        out
    }
}
