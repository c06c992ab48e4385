//! Define-by-run reverse-mode differentiation tape.
//!
//! The tape is rebuilt on every forward pass, which keeps changing structure
//! (trim masks, frozen closest-face assignments) trivially correct. A tape
//! and its [`Value`] handles are confined to one thread; independent tapes
//! may run concurrently. Backward accumulates gradients in reverse recording
//! order, so two runs over the same tape produce bit-identical results.

use super::{AutodiffError, SparseMat, Tensor};
use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

/// Numeric storage precision for tape values.
///
/// `F32` rounds every stored tensor (and the final gradients) to float32
/// precision while accumulating in float64 — the storage model of a
/// mixed-precision trainer. Default is full float64.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// Shared, fixed edge structure for graph aggregation ops: directed edges
/// `(dst, src)` including self loops, plus `1 / degree(dst)`.
#[derive(Debug)]
pub struct EdgeSet {
    pub edges: Vec<(u32, u32)>,
    pub inv_degree: Vec<f64>,
}

impl EdgeSet {
    /// Builds from neighbor lists, adding a self loop per vertex.
    pub fn from_adjacency(adjacency: &[Vec<u32>]) -> EdgeSet {
        let mut edges = Vec::new();
        let mut inv_degree = Vec::with_capacity(adjacency.len());
        for (i, neighbors) in adjacency.iter().enumerate() {
            edges.push((i as u32, i as u32));
            for &j in neighbors {
                edges.push((i as u32, j));
            }
            inv_degree.push(1.0 / (neighbors.len() + 1) as f64);
        }
        EdgeSet { edges, inv_degree }
    }

    pub fn vertex_count(&self) -> usize {
        self.inv_degree.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

/// Backward closure for custom ops: `(upstream, input_values, input_grads)`;
/// implementations add their contribution into each input gradient.
type CustomBackward = Box<dyn Fn(&Tensor, &[Arc<Tensor>], &mut [Tensor])>;

enum Op {
    Leaf,
    Matmul(usize, usize),
    Spmm { mat: Arc<SparseMat>, input: usize },
    Add(usize, usize),
    AddRowVec(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    Scale(usize, f64),
    ConcatCols(usize, usize),
    SliceRows { input: usize, start: usize },
    Reshape(usize),
    Elu { input: usize, alpha: f64 },
    SoftmaxRows(usize),
    Sum(usize),
    Mean(usize),
    SumSq(usize),
    Sqrt { input: usize },
    Mse(usize, usize),
    VecNorm(usize),
    EdgeAggregate {
        attention: usize,
        features: Vec<usize>,
        edges: Arc<EdgeSet>,
    },
    Custom {
        inputs: Vec<usize>,
        backward: CustomBackward,
    },
}

struct Node {
    value: Arc<Tensor>,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

struct TapeInner {
    nodes: RefCell<Vec<Node>>,
    precision: Precision,
}

/// A reverse-mode differentiation tape.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<TapeInner>,
}

/// Handle to a tensor recorded on a tape.
#[derive(Clone)]
pub struct Value {
    tape: Rc<TapeInner>,
    id: usize,
    rows: usize,
    cols: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::with_precision(Precision::F64)
    }

    pub fn with_precision(precision: Precision) -> Tape {
        Tape {
            inner: Rc::new(TapeInner {
                nodes: RefCell::new(Vec::new()),
                precision,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, mut value: Tensor, requires_grad: bool, op: Op) -> Value {
        if self.inner.precision == Precision::F32 {
            value.quantize_f32();
        }
        let (rows, cols) = value.shape();
        let mut nodes = self.inner.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Arc::new(value),
            grad: None,
            requires_grad,
            op,
        });
        Value {
            tape: Rc::clone(&self.inner),
            id,
            rows,
            cols,
        }
    }

    fn push_shared(&self, value: Arc<Tensor>, requires_grad: bool) -> Value {
        let (rows, cols) = value.shape();
        let mut nodes = self.inner.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Value {
            tape: Rc::clone(&self.inner),
            id,
            rows,
            cols,
        }
    }

    /// Records a leaf holding a copy of `data`.
    pub fn leaf(&self, data: Tensor, requires_grad: bool) -> Value {
        self.push(data, requires_grad, Op::Leaf)
    }

    /// Records a leaf that shares storage with the caller (used for model
    /// parameters, avoiding a copy per forward pass).
    pub fn shared_leaf(&self, data: Arc<Tensor>, requires_grad: bool) -> Value {
        self.push_shared(data, requires_grad)
    }

    pub fn constant(&self, data: Tensor) -> Value {
        self.push(data, false, Op::Leaf)
    }

    pub fn scalar(&self, v: f64) -> Value {
        self.constant(Tensor::scalar(v))
    }

    /// Gradient of the last backward pass with respect to `value`.
    /// Zero tensor if the value did not participate.
    pub fn grad(&self, value: &Value) -> Tensor {
        let nodes = self.inner.nodes.borrow();
        nodes[value.id]
            .grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(value.rows, value.cols))
    }

    /// Clears gradients, keeping recorded values.
    pub fn zero_grads(&self) {
        for node in self.inner.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// Reverse accumulation from a scalar loss.
    pub fn backward(&self, loss: &Value) -> Result<(), AutodiffError> {
        if !(loss.rows == 1 && loss.cols == 1) {
            return Err(AutodiffError::NonScalarLoss {
                shape: (loss.rows, loss.cols),
            });
        }
        if !Rc::ptr_eq(&self.inner, &loss.tape) {
            return Err(AutodiffError::TapeMismatch);
        }
        let mut nodes = self.inner.nodes.borrow_mut();
        if nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        for node in nodes.iter_mut() {
            node.grad = None;
        }
        nodes[loss.id].grad = Some(Tensor::scalar(1.0));

        for id in (0..=loss.id).rev() {
            let grad = match nodes[id].grad.take() {
                Some(g) => g,
                None => continue,
            };
            if nodes[id].requires_grad {
                // Split borrows: the op acts on strictly earlier nodes.
                let (before, rest) = nodes.split_at_mut(id);
                let node = &mut rest[0];
                propagate(&node.op, &grad, &node.value, before)?;
                node.grad = Some(grad);
            } else {
                nodes[id].grad = Some(grad);
            }
        }
        if self.inner.precision == Precision::F32 {
            for node in nodes.iter_mut() {
                if let Some(g) = &mut node.grad {
                    g.quantize_f32();
                }
            }
        }
        Ok(())
    }
}

fn accumulate(nodes: &mut [Node], id: usize, delta: &Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    let (rows, cols) = nodes[id].value.shape();
    let grad = nodes[id].grad.get_or_insert_with(|| Tensor::zeros(rows, cols));
    grad.add_assign_scaled(delta, 1.0);
}

fn accumulate_owned(nodes: &mut [Node], id: usize, delta: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut nodes[id].grad {
        Some(g) => g.add_assign_scaled(&delta, 1.0),
        slot @ None => *slot = Some(delta),
    }
}

fn propagate(
    op: &Op,
    grad: &Tensor,
    output: &Arc<Tensor>,
    nodes: &mut [Node],
) -> Result<(), AutodiffError> {
    match op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let av = Arc::clone(&nodes[*a].value);
            let bv = Arc::clone(&nodes[*b].value);
            if nodes[*a].requires_grad {
                accumulate_owned(nodes, *a, grad.matmul_transpose(&bv)?);
            }
            if nodes[*b].requires_grad {
                accumulate_owned(nodes, *b, av.transpose_matmul(grad)?);
            }
        }
        Op::Spmm { mat, input } => {
            if nodes[*input].requires_grad {
                accumulate_owned(nodes, *input, mat.transpose_mul_dense(grad)?);
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, *a, grad);
            accumulate(nodes, *b, grad);
        }
        Op::AddRowVec(a, v) => {
            accumulate(nodes, *a, grad);
            if nodes[*v].requires_grad {
                let mut col_sum = Tensor::zeros(1, grad.cols());
                for i in 0..grad.rows() {
                    col_sum.add_assign_scaled(
                        &Tensor::from_vec(1, grad.cols(), grad.row(i).to_vec()),
                        1.0,
                    );
                }
                accumulate_owned(nodes, *v, col_sum);
            }
        }
        Op::Sub(a, b) => {
            accumulate(nodes, *a, grad);
            if nodes[*b].requires_grad {
                accumulate_owned(nodes, *b, grad.map(|g| -g));
            }
        }
        Op::Hadamard(a, b) => {
            let av = Arc::clone(&nodes[*a].value);
            let bv = Arc::clone(&nodes[*b].value);
            if nodes[*a].requires_grad {
                accumulate_owned(nodes, *a, grad.zip_map(&bv, |g, b| g * b));
            }
            if nodes[*b].requires_grad {
                accumulate_owned(nodes, *b, grad.zip_map(&av, |g, a| g * a));
            }
        }
        Op::Scale(a, s) => {
            if nodes[*a].requires_grad {
                accumulate_owned(nodes, *a, grad.map(|g| g * s));
            }
        }
        Op::ConcatCols(a, b) => {
            let ac = nodes[*a].value.cols();
            let bc = nodes[*b].value.cols();
            if nodes[*a].requires_grad {
                let mut ga = Tensor::zeros(grad.rows(), ac);
                for i in 0..grad.rows() {
                    ga.row_mut(i).copy_from_slice(&grad.row(i)[..ac]);
                }
                accumulate_owned(nodes, *a, ga);
            }
            if nodes[*b].requires_grad {
                let mut gb = Tensor::zeros(grad.rows(), bc);
                for i in 0..grad.rows() {
                    gb.row_mut(i).copy_from_slice(&grad.row(i)[ac..ac + bc]);
                }
                accumulate_owned(nodes, *b, gb);
            }
        }
        Op::SliceRows { input, start } => {
            if nodes[*input].requires_grad {
                let (rows, cols) = nodes[*input].value.shape();
                let mut gi = Tensor::zeros(rows, cols);
                for i in 0..grad.rows() {
                    gi.row_mut(start + i).copy_from_slice(grad.row(i));
                }
                accumulate_owned(nodes, *input, gi);
            }
        }
        Op::Reshape(input) => {
            if nodes[*input].requires_grad {
                let (rows, cols) = nodes[*input].value.shape();
                accumulate_owned(nodes, *input, grad.reshaped(rows, cols)?);
            }
        }
        Op::Elu { input, alpha } => {
            if nodes[*input].requires_grad {
                let x = Arc::clone(&nodes[*input].value);
                let delta = grad.zip_map(&x, |g, x| {
                    if x > 0.0 {
                        g
                    } else {
                        g * alpha * x.exp()
                    }
                });
                accumulate_owned(nodes, *input, delta);
            }
        }
        Op::SoftmaxRows(input) => {
            if nodes[*input].requires_grad {
                // dx_j = y_j * (g_j - sum_k g_k y_k), per row.
                let y = output;
                let mut delta = Tensor::zeros(grad.rows(), grad.cols());
                for i in 0..grad.rows() {
                    let yr = y.row(i);
                    let gr = grad.row(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for (d, (&yj, &gj)) in delta.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                        *d = yj * (gj - dot);
                    }
                }
                accumulate_owned(nodes, *input, delta);
            }
        }
        Op::Sum(input) => {
            if nodes[*input].requires_grad {
                let g = grad.item();
                let (rows, cols) = nodes[*input].value.shape();
                accumulate_owned(nodes, *input, Tensor::from_fn(rows, cols, |_, _| g));
            }
        }
        Op::Mean(input) => {
            if nodes[*input].requires_grad {
                let (rows, cols) = nodes[*input].value.shape();
                let g = grad.item() / (rows * cols) as f64;
                accumulate_owned(nodes, *input, Tensor::from_fn(rows, cols, |_, _| g));
            }
        }
        Op::SumSq(input) => {
            if nodes[*input].requires_grad {
                let g = grad.item();
                let x = Arc::clone(&nodes[*input].value);
                accumulate_owned(nodes, *input, x.map(|x| 2.0 * g * x));
            }
        }
        Op::Sqrt { input } => {
            if nodes[*input].requires_grad {
                // d sqrt(x + eps) = g / (2 sqrt); guarded at zero.
                let delta = grad.zip_map(output, |g, y| if y < 1e-12 { 0.0 } else { 0.5 * g / y });
                accumulate_owned(nodes, *input, delta);
            }
        }
        Op::Mse(a, b) => {
            let av = Arc::clone(&nodes[*a].value);
            let bv = Arc::clone(&nodes[*b].value);
            let scale = 2.0 * grad.item() / av.len() as f64;
            if nodes[*a].requires_grad {
                accumulate_owned(nodes, *a, av.zip_map(&bv, |x, y| scale * (x - y)));
            }
            if nodes[*b].requires_grad {
                accumulate_owned(nodes, *b, av.zip_map(&bv, |x, y| -scale * (x - y)));
            }
        }
        Op::VecNorm(input) => {
            if nodes[*input].requires_grad {
                let norm = output.item();
                let g = grad.item();
                let x = Arc::clone(&nodes[*input].value);
                accumulate_owned(nodes, *input, x.map(|x| g * x / norm));
            }
        }
        Op::EdgeAggregate {
            attention,
            features,
            edges,
        } => {
            let q = Arc::clone(&nodes[*attention].value);
            let feats: Vec<Arc<Tensor>> = features
                .iter()
                .map(|&f| Arc::clone(&nodes[f].value))
                .collect();
            let _ = feats.len();
            let out_cols = grad.cols();

            if nodes[*attention].requires_grad {
                let mut dq = Tensor::zeros(q.rows(), q.cols());
                for (e, &(dst, src)) in edges.edges.iter().enumerate() {
                    let inv_deg = edges.inv_degree[dst as usize];
                    let grow = grad.row(dst as usize);
                    for (m, feat) in feats.iter().enumerate() {
                        let frow = feat.row(src as usize);
                        let mut dot = 0.0;
                        for k in 0..out_cols {
                            dot += grow[k] * frow[k];
                        }
                        dq.set(e, m, inv_deg * dot);
                    }
                }
                accumulate_owned(nodes, *attention, dq);
            }
            for (m, &fid) in features.iter().enumerate() {
                if !nodes[fid].requires_grad {
                    continue;
                }
                let mut df = Tensor::zeros(feats[m].rows(), out_cols);
                for (e, &(dst, src)) in edges.edges.iter().enumerate() {
                    let w = edges.inv_degree[dst as usize] * q.get(e, m);
                    if w == 0.0 {
                        continue;
                    }
                    let grow = grad.row(dst as usize);
                    let drow = df.row_mut(src as usize);
                    for k in 0..out_cols {
                        drow[k] += w * grow[k];
                    }
                }
                accumulate_owned(nodes, fid, df);
            }
        }
        Op::Custom { inputs, backward } => {
            let values: Vec<Arc<Tensor>> = inputs
                .iter()
                .map(|&i| Arc::clone(&nodes[i].value))
                .collect();
            let mut grads: Vec<Tensor> = values
                .iter()
                .map(|v| Tensor::zeros(v.rows(), v.cols()))
                .collect();
            backward(grad, &values, &mut grads);
            for (&i, g) in inputs.iter().zip(grads) {
                accumulate_owned(nodes, i, g);
            }
        }
    }
    Ok(())
}

impl Value {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Snapshot of the stored tensor.
    pub fn value(&self) -> Arc<Tensor> {
        Arc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    /// Handle to the tape this value lives on.
    pub fn owner(&self) -> Tape {
        self.tape()
    }

    fn tape(&self) -> Tape {
        Tape {
            inner: Rc::clone(&self.tape),
        }
    }

    fn same_tape(&self, other: &Value) -> Result<(), AutodiffError> {
        if Rc::ptr_eq(&self.tape, &other.tape) {
            Ok(())
        } else {
            Err(AutodiffError::TapeMismatch)
        }
    }

    fn requires_with(&self, other: &Value) -> bool {
        self.requires_grad() || other.requires_grad()
    }

    pub fn matmul(&self, other: &Value) -> Result<Value, AutodiffError> {
        self.same_tape(other)?;
        let out = self.value().matmul(&other.value())?;
        Ok(self
            .tape()
            .push(out, self.requires_with(other), Op::Matmul(self.id, other.id)))
    }

    /// `sparse * self`; the sparse matrix is a fixed constant.
    pub fn spmm(&self, sparse: &Arc<SparseMat>) -> Result<Value, AutodiffError> {
        let out = sparse.mul_dense(&self.value())?;
        Ok(self.tape().push(
            out,
            self.requires_grad(),
            Op::Spmm {
                mat: Arc::clone(sparse),
                input: self.id,
            },
        ))
    }

    pub fn add(&self, other: &Value) -> Result<Value, AutodiffError> {
        self.same_tape(other)?;
        if self.shape() != other.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "add",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let out = self.value().zip_map(&other.value(), |a, b| a + b);
        Ok(self
            .tape()
            .push(out, self.requires_with(other), Op::Add(self.id, other.id)))
    }

    /// Adds a (1 x C) row vector to every row of an (N x C) matrix.
    pub fn add_rowvec(&self, row: &Value) -> Result<Value, AutodiffError> {
        self.same_tape(row)?;
        if row.rows != 1 || row.cols != self.cols {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_rowvec",
                left: self.shape(),
                right: row.shape(),
            });
        }
        let rv = row.value();
        let sv = self.value();
        let mut out = Tensor::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (o, (&a, &b)) in out
                .row_mut(i)
                .iter_mut()
                .zip(sv.row(i).iter().zip(rv.row(0)))
            {
                *o = a + b;
            }
        }
        Ok(self
            .tape()
            .push(out, self.requires_with(row), Op::AddRowVec(self.id, row.id)))
    }

    pub fn sub(&self, other: &Value) -> Result<Value, AutodiffError> {
        self.same_tape(other)?;
        if self.shape() != other.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "sub",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let out = self.value().zip_map(&other.value(), |a, b| a - b);
        Ok(self
            .tape()
            .push(out, self.requires_with(other), Op::Sub(self.id, other.id)))
    }

    pub fn hadamard(&self, other: &Value) -> Result<Value, AutodiffError> {
        self.same_tape(other)?;
        if self.shape() != other.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "hadamard",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let out = self.value().zip_map(&other.value(), |a, b| a * b);
        Ok(self.tape().push(
            out,
            self.requires_with(other),
            Op::Hadamard(self.id, other.id),
        ))
    }

    pub fn scale(&self, s: f64) -> Value {
        let out = self.value().map(|x| x * s);
        self.tape()
            .push(out, self.requires_grad(), Op::Scale(self.id, s))
    }

    pub fn concat_cols(&self, other: &Value) -> Result<Value, AutodiffError> {
        self.same_tape(other)?;
        if self.rows != other.rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat_cols",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let a = self.value();
        let b = other.value();
        let mut out = Tensor::zeros(self.rows, self.cols + other.cols);
        for i in 0..self.rows {
            out.row_mut(i)[..self.cols].copy_from_slice(a.row(i));
            out.row_mut(i)[self.cols..].copy_from_slice(b.row(i));
        }
        Ok(self.tape().push(
            out,
            self.requires_with(other),
            Op::ConcatCols(self.id, other.id),
        ))
    }

    pub fn slice_rows(&self, start: usize, count: usize) -> Result<Value, AutodiffError> {
        if start + count > self.rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_rows",
                left: self.shape(),
                right: (start, count),
            });
        }
        let v = self.value();
        let mut out = Tensor::zeros(count, self.cols);
        for i in 0..count {
            out.row_mut(i).copy_from_slice(v.row(start + i));
        }
        Ok(self.tape().push(
            out,
            self.requires_grad(),
            Op::SliceRows {
                input: self.id,
                start,
            },
        ))
    }

    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Value, AutodiffError> {
        let out = self.value().reshaped(rows, cols)?;
        Ok(self
            .tape()
            .push(out, self.requires_grad(), Op::Reshape(self.id)))
    }

    pub fn elu(&self, alpha: f64) -> Value {
        let out = self
            .value()
            .map(|x| if x > 0.0 { x } else { alpha * (x.exp() - 1.0) });
        self.tape().push(
            out,
            self.requires_grad(),
            Op::Elu {
                input: self.id,
                alpha,
            },
        )
    }

    pub fn softmax_rows(&self) -> Value {
        let v = self.value();
        let mut out = Tensor::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let row = v.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &x) in out.row_mut(i).iter_mut().zip(row) {
                *o = (x - max).exp();
                sum += *o;
            }
            for o in out.row_mut(i) {
                *o /= sum;
            }
        }
        self.tape()
            .push(out, self.requires_grad(), Op::SoftmaxRows(self.id))
    }

    pub fn sum(&self) -> Value {
        let out = Tensor::scalar(self.value().sum_all());
        self.tape()
            .push(out, self.requires_grad(), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Value {
        let out = Tensor::scalar(self.value().sum_all() / self.value().len() as f64);
        self.tape()
            .push(out, self.requires_grad(), Op::Mean(self.id))
    }

    pub fn sumsq(&self) -> Value {
        let out = Tensor::scalar(self.value().sum_squares());
        self.tape()
            .push(out, self.requires_grad(), Op::SumSq(self.id))
    }

    /// Elementwise `sqrt(x + eps)`; the guard keeps the derivative finite
    /// at zero.
    pub fn sqrt_guarded(&self, eps: f64) -> Value {
        let out = self.value().map(|x| (x + eps).max(0.0).sqrt());
        self.tape().push(
            out,
            self.requires_grad(),
            Op::Sqrt { input: self.id },
        )
    }

    pub fn sqrt(&self) -> Value {
        self.sqrt_guarded(0.0)
    }

    /// Mean squared difference over all entries.
    pub fn mse(&self, other: &Value) -> Result<Value, AutodiffError> {
        self.same_tape(other)?;
        if self.shape() != other.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mse",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let a = self.value();
        let b = other.value();
        let mut acc = 0.0;
        for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
            let d = x - y;
            acc += d * d;
        }
        let out = Tensor::scalar(acc / a.len() as f64);
        Ok(self
            .tape()
            .push(out, self.requires_with(other), Op::Mse(self.id, other.id)))
    }

    /// Euclidean norm of all entries, with a 1e-12 epsilon inside the root
    /// so the gradient is defined at zero.
    pub fn vecnorm(&self) -> Value {
        let out = Tensor::scalar((self.value().sum_squares() + 1e-12).sqrt());
        self.tape()
            .push(out, self.requires_grad(), Op::VecNorm(self.id))
    }

    /// Attention-weighted neighborhood aggregation:
    /// `y_i = (1/deg(i)) * sum_{e=(i,j)} sum_m q[e,m] * features[m][j]`.
    pub fn edge_aggregate(
        attention: &Value,
        features: &[Value],
        edges: &Arc<EdgeSet>,
    ) -> Result<Value, AutodiffError> {
        assert!(!features.is_empty(), "edge_aggregate needs features");
        let heads = features.len();
        if attention.cols != heads || attention.rows != edges.edge_count() {
            return Err(AutodiffError::ShapeMismatch {
                op: "edge_aggregate",
                left: attention.shape(),
                right: (edges.edge_count(), heads),
            });
        }
        let n = edges.vertex_count();
        let out_cols = features[0].cols;
        let mut requires = attention.requires_grad();
        for f in features {
            attention.same_tape(f)?;
            if f.rows != n || f.cols != out_cols {
                return Err(AutodiffError::ShapeMismatch {
                    op: "edge_aggregate",
                    left: f.shape(),
                    right: (n, out_cols),
                });
            }
            requires = requires || f.requires_grad();
        }
        let q = attention.value();
        let feats: Vec<Arc<Tensor>> = features.iter().map(|f| f.value()).collect();
        let mut out = Tensor::zeros(n, out_cols);
        for (e, &(dst, src)) in edges.edges.iter().enumerate() {
            let inv_deg = edges.inv_degree[dst as usize];
            for (m, feat) in feats.iter().enumerate() {
                let w = inv_deg * q.get(e, m);
                if w == 0.0 {
                    continue;
                }
                let frow = feat.row(src as usize);
                let orow = out.row_mut(dst as usize);
                for k in 0..out_cols {
                    orow[k] += w * frow[k];
                }
            }
        }
        Ok(attention.tape().push(
            out,
            requires,
            Op::EdgeAggregate {
                attention: attention.id,
                features: features.iter().map(|f| f.id).collect(),
                edges: Arc::clone(edges),
            },
        ))
    }

    /// Records a custom operation with a caller-supplied backward rule.
    pub fn custom(
        inputs: &[&Value],
        output: Tensor,
        backward: CustomBackward,
    ) -> Result<Value, AutodiffError> {
        assert!(!inputs.is_empty(), "custom op needs inputs");
        let mut requires = false;
        for window in inputs.windows(2) {
            window[0].same_tape(window[1])?;
        }
        for input in inputs {
            requires = requires || input.requires_grad();
        }
        Ok(inputs[0].tape().push(
            output,
            requires,
            Op::Custom {
                inputs: inputs.iter().map(|v| v.id).collect(),
                backward,
            },
        ))
    }
}
