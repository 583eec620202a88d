use std::borrow::Cow;
use std::sync::Arc;

use super::{gemm_acc, CsrMatrix, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Reduction axis: `Rows` collapses the row dimension (`r × c → 1 × c`),
/// `Cols` collapses columns (`r × c → r × 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Tanh(Var),
    Relu(Var),
    Extremum { input: Var, axis: Axis, arg: Vec<usize> },
    Sum(Var),
    Mean(Var),
    SumAxis(Var, Axis),
    Square(Var),
    Sqrt(Var),
    Abs(Var),
    Scale(Var, f64),
    AddScalar(Var),
    GatherRows(Var, Arc<Vec<usize>>),
    SliceRows(Var, usize),
    SparseMul(Arc<CsrMatrix>, Var),
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 2] {
        use Op::*;
        match self {
            Leaf => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | AddBias(a, b) => [Some(*a), Some(*b)],
            Tanh(a) | Relu(a) | Sum(a) | Mean(a) | SumAxis(a, _) | Square(a) | Sqrt(a) | Abs(a)
            | Scale(a, _) | AddScalar(a) | GatherRows(a, _) | SliceRows(a, _) | SparseMul(_, a) => {
                [Some(*a), None]
            }
            Extremum { input, .. } => [Some(*input), None],
        }
    }
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Eager record of tensor operations for one forward pass.
///
/// Leaves may borrow their values (network weights) for the tape's lifetime.
/// A tape is single-threaded; independent tapes can run on separate threads.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of every leaf that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_leaf(Cow::Owned(value), requires_grad)
    }

    pub fn leaf_ref(&mut self, value: &'a Tensor, requires_grad: bool) -> Var {
        self.push_leaf(Cow::Borrowed(value), requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push_leaf(&mut self, value: Cow<'a, Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFiniteValue(format!("forward {name}")));
        }
        let needs_grad = op
            .inputs()
            .iter()
            .flatten()
            .any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn map(&mut self, a: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(x.rows(), x.cols(), data)?;
        self.push(out, op, name)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch(name, x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(x.rows(), x.cols(), data)?;
        self.push(out, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), "add", |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), "sub", |p, q| p - q)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), "mul", |p, q| p * q)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(mismatch("matmul", x, y));
        }
        let (m, k, n) = (x.rows(), x.cols(), y.cols());
        let mut out = Tensor::zeros(m, n);
        gemm_acc(
            m,
            k,
            n,
            x.data(),
            (k as isize, 1),
            y.data(),
            (n as isize, 1),
            out.data_mut(),
        );
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// `x + 1·bias` where `bias` is a single row broadcast over `x`'s rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(mismatch("add_bias", xv, bv));
        }
        let cols = xv.cols();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_exact_mut(cols.max(1)) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias(x, bias), "add_bias")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a), "tanh", f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a), "relu", |v| v.max(0.0))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Square(a), "square", |v| v * v)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sqrt(a), "sqrt", f64::sqrt)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Abs(a), "abs", f64::abs)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, Op::Scale(a, c), "scale", |v| v * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, Op::AddScalar(a), "add_scalar", |v| v + c)
    }

    /// Maximum along `axis`; the gradient flows to the argmax only, lowest
    /// index on ties.
    pub fn max_over_axis(&mut self, a: Var, axis: Axis) -> Result<Var> {
        self.extremum(a, axis, |cand, best| cand > best, "max_over_axis")
    }

    /// Minimum along `axis`, same tie rule as [`Tape::max_over_axis`].
    pub fn min_over_axis(&mut self, a: Var, axis: Axis) -> Result<Var> {
        self.extremum(a, axis, |cand, best| cand < best, "min_over_axis")
    }

    /// Values and argmax of the last reduction node, if `v` is one.
    pub fn argext(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes[v.0].op {
            Op::Extremum { arg, .. } => Some(arg),
            _ => None,
        }
    }

    fn extremum(&mut self, a: Var, axis: Axis, better: fn(f64, f64) -> bool, name: &'static str) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = (x.rows(), x.cols());
        if r == 0 || c == 0 {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: vec![r, c],
                rhs: vec![],
            });
        }
        let (out, arg) = match axis {
            Axis::Rows => {
                let mut vals = x.row_slice(0).to_vec();
                let mut arg = vec![0; c];
                for i in 1..r {
                    for (j, &v) in x.row_slice(i).iter().enumerate() {
                        if better(v, vals[j]) {
                            vals[j] = v;
                            arg[j] = i;
                        }
                    }
                }
                (Tensor::row(vals), arg)
            }
            Axis::Cols => {
                let mut vals = Vec::with_capacity(r);
                let mut arg = Vec::with_capacity(r);
                for i in 0..r {
                    let row = x.row_slice(i);
                    let mut best = 0;
                    for j in 1..c {
                        if better(row[j], row[best]) {
                            best = j;
                        }
                    }
                    vals.push(row[best]);
                    arg.push(best);
                }
                (Tensor::new(r, 1, vals)?, arg)
            }
        };
        self.push(out, Op::Extremum { input: a, axis, arg }, name)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "mean",
                lhs: x.shape().to_vec(),
                rhs: vec![],
            });
        }
        let s = x.data().iter().sum::<f64>() / x.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), "mean")
    }

    pub fn sum_over_axis(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let x = self.value(a);
        let (r, c) = (x.rows(), x.cols());
        let out = match axis {
            Axis::Rows => {
                let mut s = vec![0.0; c];
                for i in 0..r {
                    for (o, v) in s.iter_mut().zip(x.row_slice(i)) {
                        *o += v;
                    }
                }
                Tensor::row(s)
            }
            Axis::Cols => Tensor::new(r, 1, (0..r).map(|i| x.row_slice(i).iter().sum()).collect())?,
        };
        self.push(out, Op::SumAxis(a, axis), "sum_over_axis")
    }

    /// Row `k` of the output is row `indices[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, indices: Vec<usize>) -> Result<Var> {
        let x = self.value(a);
        let c = x.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in &indices {
            if i >= x.rows() {
                return Err(Error::ShapeMismatch {
                    op: "gather_rows",
                    lhs: x.shape().to_vec(),
                    rhs: vec![i],
                });
            }
            data.extend_from_slice(x.row_slice(i));
        }
        let out = Tensor::new(indices.len(), c, data)?;
        self.push(out, Op::GatherRows(a, Arc::new(indices)), "gather_rows")
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(a);
        if start > end || end > x.rows() {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                lhs: x.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let c = x.cols();
        let out = Tensor::new(end - start, c, x.data()[start * c..end * c].to_vec())?;
        self.push(out, Op::SliceRows(a, start), "slice_rows")
    }

    /// Sparse-times-dense product `m · a`.
    pub fn sparse_matmul(&mut self, m: Arc<CsrMatrix>, a: Var) -> Result<Var> {
        let x = self.value(a);
        if m.cols() != x.rows() {
            return Err(Error::ShapeMismatch {
                op: "sparse_matmul",
                lhs: vec![m.rows(), m.cols()],
                rhs: x.shape().to_vec(),
            });
        }
        let out = Tensor::new(m.rows(), x.cols(), m.mul_dense(x.data(), x.cols()))?;
        self.push(out, Op::SparseMul(m, a), "sparse_matmul")
    }

    /// Reverse pass from a scalar node. Each node is visited once, in
    /// reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: lv.shape().to_vec(),
                rhs: vec![1, 1],
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.rows(), lv.cols(), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if !g.is_finite() {
                return Err(Error::NonFiniteValue(format!("gradient at node {id}")));
            }
            self.propagate(id, &g, &mut grads);
        }

        for (id, g) in grads.iter_mut().enumerate() {
            let node = &self.nodes[id];
            if !(matches!(node.op, Op::Leaf) && node.needs_grad) {
                *g = None;
            } else if let Some(t) = g {
                if !t.is_finite() {
                    return Err(Error::NonFiniteValue(format!("gradient of leaf {id}")));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[id].value;
        let gd = g.data();
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        accumulate(self, grads, v, gd.iter().copied());
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(self, grads, *a, gd.iter().copied());
                }
                if self.wants(*b) {
                    accumulate(self, grads, *b, gd.iter().map(|g| -g));
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if self.wants(v) {
                        let o = self.value(other).data();
                        accumulate(self, grads, v, gd.iter().zip(o).map(|(g, o)| g * o));
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k, n) = (x.rows(), x.cols(), y.cols());
                if self.wants(*a) {
                    // dA = G · Bᵀ
                    gemm_acc(m, n, k, gd, (n as isize, 1), y.data(), (1, n as isize), acc(self, grads, *a));
                }
                if self.wants(*b) {
                    // dB = Aᵀ · G
                    gemm_acc(k, m, n, x.data(), (1, k as isize), gd, (n as isize, 1), acc(self, grads, *b));
                }
            }
            Op::AddBias(x, bias) => {
                if self.wants(*x) {
                    accumulate(self, grads, *x, gd.iter().copied());
                }
                if self.wants(*bias) {
                    let cols = g.cols();
                    let db = acc(self, grads, *bias);
                    for row in gd.chunks_exact(cols.max(1)) {
                        axpy(db, 1.0, row);
                    }
                }
            }
            Op::Tanh(a) => {
                let y = out.data();
                accumulate(self, grads, *a, gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)));
            }
            Op::Relu(a) => {
                let y = out.data();
                accumulate(self, grads, *a, gd.iter().zip(y).map(|(&g, &y)| if y > 0.0 { g } else { 0.0 }));
            }
            Op::Extremum { input, axis, arg } => {
                let c = self.value(*input).cols();
                let d = acc(self, grads, *input);
                match axis {
                    Axis::Rows => {
                        for (j, &i) in arg.iter().enumerate() {
                            d[i * c + j] += gd[j];
                        }
                    }
                    Axis::Cols => {
                        for (i, &j) in arg.iter().enumerate() {
                            d[i * c + j] += gd[i];
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                accumulate(self, grads, *a, std::iter::repeat_n(gd[0], n));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                accumulate(self, grads, *a, std::iter::repeat_n(gd[0] / n as f64, n));
            }
            Op::SumAxis(a, axis) => {
                let c = self.value(*a).cols();
                let d = acc(self, grads, *a);
                for (idx, v) in d.iter_mut().enumerate() {
                    *v += match axis {
                        Axis::Rows => gd[idx % c],
                        Axis::Cols => gd[idx / c],
                    };
                }
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                accumulate(self, grads, *a, gd.iter().zip(x).map(|(g, x)| 2.0 * x * g));
            }
            Op::Sqrt(a) => {
                let y = out.data();
                accumulate(self, grads, *a, gd.iter().zip(y).map(|(g, y)| g / (2.0 * y)));
            }
            Op::Abs(a) => {
                let x = self.value(*a).data();
                let sign = |x: f64| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 };
                accumulate(self, grads, *a, gd.iter().zip(x).map(|(&g, &x)| sign(x) * g));
            }
            Op::Scale(a, c) => accumulate(self, grads, *a, gd.iter().map(|g| c * g)),
            Op::AddScalar(a) => accumulate(self, grads, *a, gd.iter().copied()),
            Op::GatherRows(a, indices) => {
                let c = g.cols();
                let d = acc(self, grads, *a);
                for (k, &i) in indices.iter().enumerate() {
                    axpy(&mut d[i * c..(i + 1) * c], 1.0, &gd[k * c..(k + 1) * c]);
                }
            }
            Op::SliceRows(a, start) => {
                let c = g.cols();
                let d = acc(self, grads, *a);
                axpy(&mut d[start * c..start * c + gd.len()], 1.0, gd);
            }
            Op::SparseMul(m, a) => {
                let c = g.cols();
                m.mul_transpose_acc(gd, c, acc(self, grads, *a));
            }
        }
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Adds `contrib` to the gradient of `v`, or moves it in on first touch so
/// large buffers are not zero-filled only to be added to.
fn accumulate(tape: &Tape, grads: &mut [Option<Tensor>], v: Var, contrib: impl Iterator<Item = f64>) {
    match &mut grads[v.0] {
        Some(t) => {
            for (d, c) in t.data_mut().iter_mut().zip(contrib) {
                *d += c;
            }
        }
        slot @ None => {
            let x = tape.value(v);
            let data: Vec<f64> = contrib.collect();
            debug_assert_eq!(data.len(), x.len());
            *slot = Some(Tensor::new(x.rows(), x.cols(), data).expect("contribution has the operand's shape"));
        }
    }
}

fn acc<'g>(tape: &Tape, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut [f64] {
    let x = tape.value(v);
    grads[v.0]
        .get_or_insert_with(|| Tensor::zeros(x.rows(), x.cols()))
        .data_mut()
}
