//! Reverse-mode automatic differentiation over dense [`Tensor`]s.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding its
//! value and a description of how it was produced. [`Tape::backward`] walks the
//! nodes in reverse creation order, which is a valid reverse topological order
//! because operations only ever reference earlier nodes.
//!
//! Parameters enter the tape through [`Tape::param`], which remembers the
//! parameter name so gradients can be returned keyed by name.

use std::collections::BTreeMap;
use std::rc::Rc;

use super::params::{Gradients, ParameterSet};
use super::tensor::{matmul_a_bt_into, matmul_at_b_into, matmul_into};
use super::{NumericsError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise unary nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    LeakyRelu(f64),
    Exp,
    Cos,
    Identity,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Unary::Exp => x.exp(),
            Unary::Cos => x.cos(),
            Unary::Identity => x,
        }
    }

    /// Derivative expressed in terms of input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Unary::Exp => y,
            Unary::Cos => -x.sin(),
            Unary::Identity => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Exp => "exp",
            Unary::Cos => "cos",
            Unary::Identity => "identity",
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// How the right operand of a binary op is broadcast against the left.
#[derive(Clone, Copy, Debug)]
enum Broadcast {
    Same,
    Row,
    Scalar,
}

#[derive(Clone, Copy, Debug)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinaryKind, Broadcast, Var, Var),
    Affine(Var, f64),
    Unary(Unary, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Rc<[usize]>),
    ScatterRows(Var, Var, Rc<[usize]>),
    Sum(Var),
    GroupRowSum(Var, usize),
    Softmax(Var, usize),
    SegmentSoftmax(Var, Rc<[usize]>),
    SegmentWeightedSum(Var, Var, Rc<[usize]>),
    Bce(Var, Rc<[f64]>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Lower clamp for probabilities fed to the binary cross-entropy.
pub const PROB_EPS: f64 = 1e-7;

/// Computation tape for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

type Res = Result<Var, NumericsError>;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Res {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf. Registering the same name twice returns the first node.
    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Res {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = params
            .get(name)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))?
            .clone();
        let v = self.push(t, Op::Leaf, true, "param")?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, t: Tensor) -> Res {
        self.push(t, Op::Leaf, false, "constant")
    }

    /// A leaf that receives gradients but is not a named parameter. Used by
    /// gradient checks that differentiate with respect to inputs.
    pub fn input(&mut self, t: Tensor) -> Res {
        self.push(t, Op::Leaf, true, "input")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Res {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, k, k2, m) = (ta.rows(), ta.cols(), tb.rows(), tb.cols());
        if k != k2 {
            return Err(NumericsError::Shape(format!(
                "matmul {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut out = vec![0.0; n * m];
        matmul_into(ta.data(), tb.data(), &mut out, n, k, m);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(&[n, m], out)?, Op::MatMul(a, b), rg, "matmul")
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Res {
        let (ta, tb) = (self.value(a), self.value(b));
        let (r, c) = (ta.rows(), ta.cols());
        let bc = if tb.rows() == r && tb.cols() == c {
            Broadcast::Same
        } else if tb.rows() == 1 && tb.cols() == c {
            Broadcast::Row
        } else if tb.len() == 1 {
            Broadcast::Scalar
        } else {
            return Err(NumericsError::Shape(format!(
                "cannot broadcast {:?} against {:?}",
                tb.shape(),
                ta.shape()
            )));
        };
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let (da, db) = (ta.data(), tb.data());
        let out: Vec<f64> = match bc {
            Broadcast::Same => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Row => da
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, db[i % c]))
                .collect(),
            Broadcast::Scalar => da.iter().map(|&x| f(x, db[0])).collect(),
        };
        let rg = self.rg(a) || self.rg(b);
        let shape = ta.shape().to_vec();
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        };
        self.push(
            Tensor::new(&shape, out)?,
            Op::Binary(kind, bc, a, b),
            rg,
            name,
        )
    }

    /// `a + b`; `b` may be the same shape, a `[1, cols]` row or a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Res {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Res {
        self.binary(BinaryKind::Sub, a, b)
    }

    /// Elementwise (Hadamard) product with the same broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Res {
        self.binary(BinaryKind::Mul, a, b)
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Res {
        let t = self.value(a).map(|x| scale * x + shift);
        let rg = self.rg(a);
        self.push(t, Op::Affine(a, scale), rg, "affine")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Res {
        self.affine(a, s, 0.0)
    }

    pub fn unary(&mut self, f: Unary, a: Var) -> Res {
        let t = self.value(a).map(|x| f.apply(x));
        let rg = self.rg(a);
        self.push(t, Op::Unary(f, a), rg, f.name())
    }

    pub fn sigmoid(&mut self, a: Var) -> Res {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Res {
        self.unary(Unary::Tanh, a)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Res {
        self.unary(Unary::LeakyRelu(slope), a)
    }

    pub fn exp(&mut self, a: Var) -> Res {
        self.unary(Unary::Exp, a)
    }

    pub fn cos(&mut self, a: Var) -> Res {
        self.unary(Unary::Cos, a)
    }

    /// Concatenate along columns; all parts need the same row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Res {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(NumericsError::Shape("concat of nothing".into())),
        };
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(NumericsError::Shape("concat_cols row mismatch".into()));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::new(&[rows, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
            "concat_cols",
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Res {
        let cols = match parts.first() {
            Some(&p) => self.value(p).cols(),
            None => return Err(NumericsError::Shape("concat of nothing".into())),
        };
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(NumericsError::Shape("concat_rows column mismatch".into()));
        }
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
            rows += self.value(p).rows();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::new(&[rows, cols], out)?,
            Op::ConcatRows(parts.to_vec()),
            rg,
            "concat_rows",
        )
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Res {
        let t = self.value(a);
        if start > end || end > t.cols() {
            return Err(NumericsError::Shape(format!(
                "slice {start}..{end} of {} columns",
                t.cols()
            )));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(t.rows() * w);
        for r in 0..t.rows() {
            out.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        let rows = t.rows();
        let rg = self.rg(a);
        self.push(
            Tensor::new(&[rows, w], out)?,
            Op::SliceCols(a, start),
            rg,
            "slice_cols",
        )
    }

    /// Rows of `a` selected by `idx` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: Rc<[usize]>) -> Res {
        let t = self.value(a);
        let c = t.cols();
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(NumericsError::Shape(format!(
                "row {bad} out of range for {} rows",
                t.rows()
            )));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            out.extend_from_slice(t.row_slice(i));
        }
        let rg = self.rg(a);
        self.push(
            Tensor::new(&[idx.len(), c], out)?,
            Op::GatherRows(a, idx),
            rg,
            "gather_rows",
        )
    }

    /// Copy of `base` with row `idx[i]` replaced by row `i` of `rows`.
    /// Indices must be distinct.
    pub fn scatter_rows(&mut self, base: Var, rows: Var, idx: Rc<[usize]>) -> Res {
        let (tb, tr) = (self.value(base), self.value(rows));
        if tb.cols() != tr.cols() || tr.rows() != idx.len() {
            return Err(NumericsError::Shape("scatter_rows shape mismatch".into()));
        }
        let mut seen = vec![false; tb.rows()];
        for &i in idx.iter() {
            if i >= tb.rows() || std::mem::replace(&mut seen[i], true) {
                return Err(NumericsError::Shape(format!(
                    "scatter index {i} out of range or repeated"
                )));
            }
        }
        let mut out = tb.clone();
        for (k, &i) in idx.iter().enumerate() {
            out.row_slice_mut(i).copy_from_slice(tr.row_slice(k));
        }
        let rg = self.rg(base) || self.rg(rows);
        self.push(out, Op::ScatterRows(base, rows, idx), rg, "scatter_rows")
    }

    /// Sum of all entries as a `[1, 1]` tensor.
    pub fn sum(&mut self, a: Var) -> Res {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Res {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Splits the columns into `groups` equal contiguous blocks and sums each
    /// block per row, giving `[rows, groups]`. With one group this is a row sum.
    pub fn group_row_sum(&mut self, a: Var, groups: usize) -> Res {
        let t = self.value(a);
        let c = t.cols();
        if groups == 0 || !c.is_multiple_of(groups) {
            return Err(NumericsError::Shape(format!(
                "{c} columns do not split into {groups} groups"
            )));
        }
        let w = c / groups;
        let mut out = Vec::with_capacity(t.rows() * groups);
        for r in 0..t.rows() {
            let row = t.row_slice(r);
            for g in 0..groups {
                out.push(row[g * w..(g + 1) * w].iter().sum());
            }
        }
        let rows = t.rows();
        let rg = self.rg(a);
        self.push(
            Tensor::new(&[rows, groups], out)?,
            Op::GroupRowSum(a, groups),
            rg,
            "group_row_sum",
        )
    }

    /// Softmax along `axis` (0: down each column, 1: across each row), with
    /// max-subtraction.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Res {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        if axis > 1 {
            return Err(NumericsError::Shape(format!("softmax axis {axis}")));
        }
        if (axis == 0 && r == 0) || (axis == 1 && c == 0) || t.is_empty() {
            return Err(NumericsError::EmptyAxis);
        }
        let mut out = t.data().to_vec();
        let (outer, inner, stride_o, stride_i) = if axis == 1 {
            (r, c, c, 1)
        } else {
            (c, r, 1, c)
        };
        for o in 0..outer {
            let idx = |i: usize| o * stride_o + i * stride_i;
            let mx = (0..inner)
                .map(|i| out[idx(i)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for i in 0..inner {
                let e = (out[idx(i)] - mx).exp();
                out[idx(i)] = e;
                z += e;
            }
            for i in 0..inner {
                out[idx(i)] /= z;
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(
            Tensor::new(&shape, out)?,
            Op::Softmax(a, axis),
            rg,
            "softmax",
        )
    }

    /// Softmax over row segments, independently per column. Segment `s` covers
    /// rows `offsets[s]..offsets[s + 1]`; empty segments are allowed.
    pub fn segment_softmax(&mut self, a: Var, offsets: Rc<[usize]>) -> Res {
        let t = self.value(a);
        check_offsets(&offsets, t.rows())?;
        let c = t.cols();
        let mut out = t.data().to_vec();
        for w in offsets.windows(2) {
            let (s, e) = (w[0], w[1]);
            if s == e {
                continue;
            }
            for col in 0..c {
                let mx = (s..e)
                    .map(|r| out[r * c + col])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for r in s..e {
                    let v = (out[r * c + col] - mx).exp();
                    out[r * c + col] = v;
                    z += v;
                }
                for r in s..e {
                    out[r * c + col] /= z;
                }
            }
        }
        let shape = t.shape().to_vec();
        let rg = self.rg(a);
        self.push(
            Tensor::new(&shape, out)?,
            Op::SegmentSoftmax(a, offsets),
            rg,
            "segment_softmax",
        )
    }

    /// Per-segment weighted sum of value rows. `weights` is `[n, heads]`,
    /// `values` is `[n, d]` with `d` divisible by `heads`; head `h` weights
    /// the `h`-th contiguous block of value columns. Returns `[segments, d]`,
    /// with zero rows for empty segments. Rows are accumulated in order.
    pub fn segment_weighted_sum(&mut self, weights: Var, values: Var, offsets: Rc<[usize]>) -> Res {
        let (tw, tv) = (self.value(weights), self.value(values));
        let (n, heads, d) = (tw.rows(), tw.cols(), tv.cols());
        if tv.rows() != n || heads == 0 || d % heads != 0 {
            return Err(NumericsError::Shape(format!(
                "segment_weighted_sum weights {:?} values {:?}",
                tw.shape(),
                tv.shape()
            )));
        }
        check_offsets(&offsets, n)?;
        let w = d / heads;
        let segs = offsets.len() - 1;
        let mut out = vec![0.0; segs * d];
        for s in 0..segs {
            let orow = &mut out[s * d..(s + 1) * d];
            for r in offsets[s]..offsets[s + 1] {
                let vrow = tv.row_slice(r);
                let wrow = tw.row_slice(r);
                for (h, &a) in wrow.iter().enumerate().take(heads) {
                    for j in h * w..(h + 1) * w {
                        orow[j] += a * vrow[j];
                    }
                }
            }
        }
        let rg = self.rg(weights) || self.rg(values);
        self.push(
            Tensor::new(&[segs, d], out)?,
            Op::SegmentWeightedSum(weights, values, offsets),
            rg,
            "segment_weighted_sum",
        )
    }

    /// Mean binary cross-entropy of probabilities against 0/1 labels.
    /// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
    pub fn bce(&mut self, prob: Var, labels: Rc<[f64]>) -> Res {
        let t = self.value(prob);
        if t.len() != labels.len() || labels.is_empty() {
            return Err(NumericsError::Shape(format!(
                "bce over {} probabilities and {} labels",
                t.len(),
                labels.len()
            )));
        }
        let loss = t
            .data()
            .iter()
            .zip(labels.iter())
            .map(|(&p, &y)| {
                let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / labels.len() as f64;
        let rg = self.rg(prob);
        self.push(Tensor::scalar(loss), Op::Bce(prob, labels), rg, "bce")
    }

    /// Backpropagate from a scalar `loss`. Every parameter registered on the
    /// tape gets an entry in the result; unreachable ones are zero.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let grads = self.backward_all(loss)?;
        let mut out = BTreeMap::new();
        for (name, &v) in &self.params {
            let g = grads[v.0]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
            out.insert(name.clone(), g);
        }
        Ok(Gradients::from_map(out))
    }

    /// Gradients for every node (None where nothing flowed back).
    pub fn backward_all(&self, loss: Var) -> Result<Vec<Option<Tensor>>, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::NonScalarLoss(
                self.value(loss).shape().to_vec(),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut Tensor)) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        f(slot.as_mut().expect("initialised above"));
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                // dA = G·Bᵀ, dB = Aᵀ·G
                self.acc(grads, *a, |ga| {
                    matmul_a_bt_into(g.data(), tb.data(), ga.data_mut(), n, m, k)
                });
                self.acc(grads, *b, |gb| {
                    matmul_at_b_into(ta.data(), g.data(), gb.data_mut(), n, k, m)
                });
            }
            Op::Binary(kind, bc, a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let c = ta.cols();
                let bidx = |j: usize| match bc {
                    Broadcast::Same => j,
                    Broadcast::Row => j % c,
                    Broadcast::Scalar => 0,
                };
                self.acc(grads, *a, |ga| {
                    for (j, (o, &gv)) in ga.data_mut().iter_mut().zip(g.data()).enumerate() {
                        *o += match kind {
                            BinaryKind::Add | BinaryKind::Sub => gv,
                            BinaryKind::Mul => gv * tb.data()[bidx(j)],
                        };
                    }
                });
                self.acc(grads, *b, |gb| {
                    let gbd = gb.data_mut();
                    for (j, &gv) in g.data().iter().enumerate() {
                        gbd[bidx(j)] += match kind {
                            BinaryKind::Add => gv,
                            BinaryKind::Sub => -gv,
                            BinaryKind::Mul => gv * ta.data()[j],
                        };
                    }
                });
            }
            Op::Affine(a, s) => {
                self.acc(grads, *a, |ga| {
                    for (o, &gv) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o += s * gv;
                    }
                });
            }
            Op::Unary(f, a) => {
                let x = self.value(*a);
                self.acc(grads, *a, |ga| {
                    for (j, o) in ga.data_mut().iter_mut().enumerate() {
                        *o += g.data()[j] * f.derivative(x.data()[j], y.data()[j]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = y.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.acc(grads, p, |gp| {
                        for r in 0..gp.rows() {
                            let src = &g.data()[r * total + off..r * total + off + w];
                            for (o, s) in gp.row_slice_mut(r).iter_mut().zip(src) {
                                *o += s;
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.acc(grads, p, |gp| {
                        for (o, s) in gp.data_mut().iter_mut().zip(&g.data()[off..off + n]) {
                            *o += s;
                        }
                    });
                    off += n;
                }
            }
            Op::SliceCols(a, start) => {
                let w = y.cols();
                self.acc(grads, *a, |ga| {
                    for r in 0..y.rows() {
                        let dst = &mut ga.row_slice_mut(r)[*start..*start + w];
                        for (o, s) in dst.iter_mut().zip(g.row_slice(r)) {
                            *o += s;
                        }
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                self.acc(grads, *a, |ga| {
                    for (k, &row) in idx.iter().enumerate() {
                        let src = g.row_slice(k);
                        for (o, s) in ga.row_slice_mut(row).iter_mut().zip(src) {
                            *o += s;
                        }
                    }
                });
            }
            Op::ScatterRows(base, rows, idx) => {
                self.acc(grads, *base, |gb| {
                    let mut replaced = vec![false; gb.rows()];
                    for &r in idx.iter() {
                        replaced[r] = true;
                    }
                    for (r, skip) in replaced.into_iter().enumerate() {
                        if !skip {
                            for (o, s) in gb.row_slice_mut(r).iter_mut().zip(g.row_slice(r)) {
                                *o += s;
                            }
                        }
                    }
                });
                self.acc(grads, *rows, |gr| {
                    for (k, &r) in idx.iter().enumerate() {
                        for (o, s) in gr.row_slice_mut(k).iter_mut().zip(g.row_slice(r)) {
                            *o += s;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                self.acc(grads, *a, |ga| {
                    for o in ga.data_mut() {
                        *o += gv;
                    }
                });
            }
            Op::GroupRowSum(a, groups) => {
                let c = self.value(*a).cols();
                let w = c / groups;
                self.acc(grads, *a, |ga| {
                    for r in 0..ga.rows() {
                        let grow = g.row_slice(r);
                        for (j, o) in ga.row_slice_mut(r).iter_mut().enumerate() {
                            *o += grow[j / w];
                        }
                    }
                });
            }
            Op::Softmax(a, axis) => {
                let (r, c) = (y.rows(), y.cols());
                let (outer, inner, so, si) = if *axis == 1 {
                    (r, c, c, 1)
                } else {
                    (c, r, 1, c)
                };
                self.acc(grads, *a, |ga| {
                    let gad = ga.data_mut();
                    for o in 0..outer {
                        let idx = |i: usize| o * so + i * si;
                        let dot: f64 = (0..inner)
                            .map(|i| g.data()[idx(i)] * y.data()[idx(i)])
                            .sum();
                        for i in 0..inner {
                            gad[idx(i)] += y.data()[idx(i)] * (g.data()[idx(i)] - dot);
                        }
                    }
                });
            }
            Op::SegmentSoftmax(a, offsets) => {
                let c = y.cols();
                self.acc(grads, *a, |ga| {
                    let gad = ga.data_mut();
                    for w in offsets.windows(2) {
                        for col in 0..c {
                            let dot: f64 = (w[0]..w[1])
                                .map(|r| g.data()[r * c + col] * y.data()[r * c + col])
                                .sum();
                            for r in w[0]..w[1] {
                                let j = r * c + col;
                                gad[j] += y.data()[j] * (g.data()[j] - dot);
                            }
                        }
                    }
                });
            }
            Op::SegmentWeightedSum(wv, vv, offsets) => {
                let (tw, tv) = (self.value(*wv), self.value(*vv));
                let (heads, d) = (tw.cols(), tv.cols());
                let w = d / heads;
                self.acc(grads, *wv, |gw| {
                    for s in 0..offsets.len() - 1 {
                        let grow = g.row_slice(s);
                        for r in offsets[s]..offsets[s + 1] {
                            let vrow = tv.row_slice(r);
                            let gwr = gw.row_slice_mut(r);
                            for (h, gh) in gwr.iter_mut().enumerate().take(heads) {
                                *gh += (h * w..(h + 1) * w).map(|j| grow[j] * vrow[j]).sum::<f64>();
                            }
                        }
                    }
                });
                self.acc(grads, *vv, |gv| {
                    for s in 0..offsets.len() - 1 {
                        let grow = g.row_slice(s);
                        for r in offsets[s]..offsets[s + 1] {
                            let wrow = tw.row_slice(r);
                            let gvr = gv.row_slice_mut(r);
                            for (j, o) in gvr.iter_mut().enumerate() {
                                *o += wrow[j / w] * grow[j];
                            }
                        }
                    }
                });
            }
            Op::Bce(p, labels) => {
                let tp = self.value(*p);
                let n = labels.len() as f64;
                let gv = g.data()[0];
                self.acc(grads, *p, |gp| {
                    for (j, o) in gp.data_mut().iter_mut().enumerate() {
                        let raw = tp.data()[j];
                        if !(PROB_EPS..=1.0 - PROB_EPS).contains(&raw) {
                            continue;
                        }
                        let yv = labels[j];
                        *o += gv * (-(yv / raw) + (1.0 - yv) / (1.0 - raw)) / n;
                    }
                });
            }
        }
    }
}

fn check_offsets(offsets: &[usize], rows: usize) -> Result<(), NumericsError> {
    let ok = !offsets.is_empty()
        && offsets[0] == 0
        && *offsets.last().expect("non-empty") == rows
        && offsets.windows(2).all(|w| w[0] <= w[1]);
    if ok {
        Ok(())
    } else {
        Err(NumericsError::Shape(format!(
            "segment offsets do not partition {rows} rows"
        )))
    }
}

/// Offsets for consecutive segments of the given lengths.
pub fn offsets_from_lengths(lengths: impl IntoIterator<Item = usize>) -> Rc<[usize]> {
    let mut out = vec![0];
    let mut acc = 0;
    for l in lengths {
        acc += l;
        out.push(acc);
    }
    out.into()
}
