//! Tape-based reverse-mode differentiation over small dense tensors.
//!
//! Nodes are appended to a [`Graph`] in evaluation order and may only refer
//! to earlier nodes, so the tape is a topological order by construction and
//! cycles cannot be expressed. [`Graph::backward`] walks it in reverse.
//!
//! Covered operations: matrix multiply, transpose, add, scale, tanh, exp, log,
//! row softmax, column concatenation, row stacking, inner product, element
//! selection and mean.

use std::fmt;

use thiserror::Error;

pub const MAX_AXES: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("shape {shape:?} holds {expected} values, got {got}")]
    BadLength { shape: Vec<usize>, expected: usize, got: usize },
    #[error("tensors have at most {MAX_AXES} axes, got {0}")]
    TooManyAxes(usize),
    #[error("{0} needs at least one input")]
    Empty(&'static str),
    #[error("index {index} out of range for {len} values")]
    OutOfRange { index: usize, len: usize },
}

/// Row-major dense tensor with up to three axes.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor").field("shape", &self.shape).field("data", &self.data).finish()
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.len() > MAX_AXES {
            return Err(TensorError::TooManyAxes(shape.len()));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::BadLength { shape: shape.to_vec(), expected, got: data.len() });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::new(shape, vec![0.0; shape.iter().product()]).expect("valid shape")
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        Tensor::new(&[rows, cols], data)
    }

    /// `1 × n`.
    pub fn row(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::new(&[1, n], data).expect("row")
    }

    /// `1 × 1`.
    pub fn scalar(v: f64) -> Self {
        Tensor::row(vec![v])
    }

    /// Stacks equal-length rows into a matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(TensorError::ShapeMismatch { op: "from_rows", left: vec![cols], right: vec![bad.len()] });
        }
        Tensor::matrix(rows.len(), cols, rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a matrix view: all leading axes folded together.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            n => self.shape[..n - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if !self.is_matrix() || !other.is_matrix() || self.shape[1] != other.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Tensor::matrix(m, n, out)
    }

    pub fn transpose(&self) -> Result<Tensor, TensorError> {
        if !self.is_matrix() {
            return Err(TensorError::ShapeMismatch { op: "transpose", left: self.shape.clone(), right: vec![] });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::matrix(n, m, out)
    }

    /// Softmax along the last axis, with the row maximum subtracted first.
    pub fn row_softmax(&self) -> Tensor {
        let c = self.cols();
        let mut out = self.data.clone();
        if c == 0 {
            return self.clone();
        }
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Tensor { shape: self.shape.clone(), data: out }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    RowSoftmax(Var),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    Dot(Var, Var),
    Index(Var, usize),
    Mean(Vec<Var>),
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Dot(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::RowSoftmax(a)
            | Op::Index(a, _) => vec![*a],
            Op::ConcatCols(v) | Op::StackRows(v) | Op::Mean(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch { op, left: a.shape.clone(), right: b.shape.clone() }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: gradients flow to it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf: no gradient is computed for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape != y.shape {
            return Err(mismatch("add", x, y));
        }
        let mut out = x.clone();
        out.add_assign(y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let out = self.value(a).row_softmax();
        self.push(out, Op::RowSoftmax(a))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::Empty("concat_cols"))?;
        let rows = self.value(*first).rows();
        for p in parts {
            let t = self.value(*p);
            if !t.is_matrix() || t.rows() != rows {
                return Err(mismatch("concat_cols", self.value(*first), t));
            }
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                out.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let t = Tensor::matrix(rows, cols, out)?;
        Ok(self.push(t, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks matrices with equal column counts along the row axis.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::Empty("stack_rows"))?;
        let cols = self.value(*first).cols();
        for p in parts {
            let t = self.value(*p);
            if !t.is_matrix() || t.cols() != cols {
                return Err(mismatch("stack_rows", self.value(*first), t));
            }
        }
        let rows: usize = parts.iter().map(|p| self.value(*p).rows()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for p in parts {
            out.extend_from_slice(self.value(*p).data());
        }
        let t = Tensor::matrix(rows, cols, out)?;
        Ok(self.push(t, Op::StackRows(parts.to_vec())))
    }

    /// Inner product of two equally shaped tensors, as a `1 × 1` tensor.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape != y.shape {
            return Err(mismatch("dot", x, y));
        }
        let s = x.data.iter().zip(&y.data).map(|(p, q)| p * q).sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b)))
    }

    /// Selects one value (flat row-major index) as a `1 × 1` tensor.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var, TensorError> {
        let t = self.value(a);
        let v = *t.data.get(i).ok_or(TensorError::OutOfRange { index: i, len: t.len() })?;
        Ok(self.push(Tensor::scalar(v), Op::Index(a, i)))
    }

    /// Mean of `1 × 1` tensors.
    pub fn mean(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::Empty("mean"));
        }
        let mut s = 0.0;
        for p in parts {
            let t = self.value(*p);
            if t.len() != 1 {
                return Err(mismatch("mean", t, &Tensor::scalar(0.0)));
            }
            s += t.data[0];
        }
        let out = Tensor::scalar(s / parts.len() as f64);
        Ok(self.push(out, Op::Mean(parts.to_vec())))
    }

    /// Reverse pass from a single-valued output. Gradient buffers start at
    /// zero on every call.
    pub fn backward(&self, output: Var) -> Gradients {
        let n = self.nodes.len();
        assert!(output.0 < n, "output var not in this graph");
        assert_eq!(self.value(output).len(), 1, "backward needs a single-valued output");
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[output.0] = Some(Tensor { shape: self.value(output).shape.clone(), data: vec![1.0] });

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            for p in node.op.parents() {
                assert!(p.0 < idx, "graph cycle: node {idx} depends on later node {}", p.0);
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if wants(a) {
                    acc(*a, g.matmul(&bv.transpose().expect("matrix")).expect("shapes"));
                }
                if wants(b) {
                    acc(*b, av.transpose().expect("matrix").matmul(g).expect("shapes"));
                }
            }
            Op::Transpose(a) => {
                if wants(a) {
                    acc(*a, g.transpose().expect("matrix"));
                }
            }
            Op::Add(a, b) => {
                if wants(a) {
                    acc(*a, g.clone());
                }
                if wants(b) {
                    acc(*b, g.clone());
                }
            }
            Op::Scale(a, c) => {
                if wants(a) {
                    acc(*a, g.map(|v| v * c));
                }
            }
            Op::Tanh(a) => {
                if wants(a) {
                    let y = &node.value;
                    let data = g.data.iter().zip(&y.data).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect();
                    acc(*a, Tensor { shape: y.shape.clone(), data });
                }
            }
            Op::Exp(a) => {
                if wants(a) {
                    let y = &node.value;
                    let data = g.data.iter().zip(&y.data).map(|(gv, yv)| gv * yv).collect();
                    acc(*a, Tensor { shape: y.shape.clone(), data });
                }
            }
            Op::Log(a) => {
                if wants(a) {
                    let x = self.value(*a);
                    let data = g.data.iter().zip(&x.data).map(|(gv, xv)| gv / xv).collect();
                    acc(*a, Tensor { shape: x.shape.clone(), data });
                }
            }
            Op::RowSoftmax(a) => {
                if wants(a) {
                    let y = &node.value;
                    let c = y.cols();
                    let mut data = vec![0.0; y.len()];
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                        let inner: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for k in 0..c {
                            data[r * c + k] = yr[k] * (gr[k] - inner);
                        }
                    }
                    acc(*a, Tensor { shape: y.shape.clone(), data });
                }
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for p in parts {
                    let pc = self.value(*p).cols();
                    if wants(p) {
                        let mut data = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row_slice(r)[offset..offset + pc]);
                        }
                        acc(*p, Tensor { shape: vec![rows, pc], data });
                    }
                    offset += pc;
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if wants(p) {
                        let data = g.data[offset..offset + len].to_vec();
                        acc(*p, Tensor { shape: self.value(*p).shape.clone(), data });
                    }
                    offset += len;
                }
            }
            Op::Dot(a, b) => {
                let s = g.data[0];
                if wants(a) {
                    acc(*a, self.value(*b).map(|v| v * s));
                }
                if wants(b) {
                    acc(*b, self.value(*a).map(|v| v * s));
                }
            }
            Op::Index(a, i) => {
                if wants(a) {
                    let mut t = Tensor::zeros(&self.value(*a).shape);
                    t.data[*i] = g.data[0];
                    acc(*a, t);
                }
            }
            Op::Mean(parts) => {
                let share = g.data[0] / parts.len() as f64;
                for p in parts {
                    if wants(p) {
                        acc(*p, Tensor::scalar(share));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.dot(x, x).unwrap();
        let grads = g.backward(y);
        assert_eq!(g.value(y).data(), &[9.0]);
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn reused_leaf_accumulates() {
        // y = x*x + 2x at x=1.5 -> dy/dx = 2x + 2 = 5
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(1.5));
        let sq = g.dot(x, x).unwrap();
        let two_x = g.scale(x, 2.0);
        let y = g.add(sq, two_x).unwrap();
        assert_eq!(g.backward(y).get(x).unwrap().data(), &[5.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let x = g.param(Tensor::scalar(4.0));
        let y = g.dot(c, x).unwrap();
        let grads = g.backward(y);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let t = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 1000.0, 1000.0, -1000.0]).unwrap();
        let s = t.row_softmax();
        for r in 0..2 {
            let sum: f64 = s.row_slice(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(s.row_slice(r).iter().all(|&v| v >= 0.0));
        }
        assert!((s.get(1, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn matmul_values() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::matrix(2, 1, vec![5.0, 6.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[17.0, 39.0]);
        assert!(b.matmul(&a).is_err());
        assert_eq!(a.transpose().unwrap().data(), &[1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn shape_checks() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::row(vec![1.0, 2.0]));
        let b = g.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        assert!(g.add(a, b).is_err());
        assert!(g.dot(a, b).is_err());
        assert!(g.stack_rows(&[a, b]).is_err());
        assert!(g.concat_cols(&[]).is_err());
        assert!(g.index(a, 2).is_err());
        assert!(matches!(Tensor::new(&[1, 1, 1, 1], vec![0.0]), Err(TensorError::TooManyAxes(4))));
        assert!(Tensor::new(&[2, 2], vec![0.0]).is_err());
    }

    #[test]
    fn concat_and_stack_gradients_route_back() {
        let mut g = Graph::new();
        let a = g.param(Tensor::row(vec![1.0, 2.0]));
        let b = g.param(Tensor::row(vec![3.0]));
        let c = g.concat_cols(&[a, b]).unwrap();
        let w = g.constant(Tensor::row(vec![10.0, 20.0, 30.0]));
        let y = g.dot(c, w).unwrap();
        let grads = g.backward(y);
        assert_eq!(grads.get(a).unwrap().data(), &[10.0, 20.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[30.0]);

        let mut g = Graph::new();
        let a = g.param(Tensor::row(vec![1.0, 2.0]));
        let b = g.param(Tensor::row(vec![3.0, 4.0]));
        let s = g.stack_rows(&[a, b]).unwrap();
        let i = g.index(s, 3).unwrap();
        let grads = g.backward(i);
        assert_eq!(grads.get(a).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn log_exp_mean() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let e = g.exp(x);
        let l = g.log(e);
        let m = g.mean(&[l, x]).unwrap();
        let grads = g.backward(m);
        assert!((g.value(m).data()[0] - 2.0).abs() < 1e-15);
        assert!((grads.get(x).unwrap().data()[0] - 1.0).abs() < 1e-15);
    }
}
