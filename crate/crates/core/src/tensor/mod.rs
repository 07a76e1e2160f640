//! Dense 2-D tensors with reverse-mode automatic differentiation.
//!
//! Every operation records its inputs; [`Tensor::backward`] walks the
//! recorded graph from a scalar in reverse creation order and accumulates
//! gradients into every reachable tensor that requires them. Node ids come
//! from a per-thread counter, so a child always has a larger id than its
//! parents and sorting by id is a valid topological order.
//!
//! Graphs are single-threaded (`Rc`); a training run owns its tensors.

mod activation;
mod gradcheck;
mod matrix;
mod sparse;

use std::cell::{Cell, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use activation::{ActivationKind, ELU_ALPHA, LEAKY_RELU_SLOPE};
pub use gradcheck::{check_gradients, GradCheck, FD_STEP, REL_ERROR_FLOOR};
pub use matrix::Matrix;
pub(crate) use matrix::{gemm, Operand};
pub use sparse::SparseMatrix;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Runs `f` without recording any graph; results are constants.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|c| c.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|c| c.replace(false)));
    f()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReduceMode {
    Sum,
    Mean,
    Max,
}

/// In-neighbor lists: `lists[target]` holds the source rows feeding `target`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NeighborLists {
    lists: Vec<Vec<usize>>,
}

impl NeighborLists {
    pub fn new(lists: Vec<Vec<usize>>) -> Self {
        Self { lists }
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn of(&self, target: usize) -> &[usize] {
        &self.lists[target]
    }
}

enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    AddRow(Tensor, Tensor),
    MulRow(Tensor, Tensor),
    Scale(Tensor, f64),
    Activation(Tensor, ActivationKind),
    ConcatCols(Vec<Tensor>),
    GatherRows(Tensor, Rc<[Option<usize>]>),
    Reduce {
        src: Tensor,
        groups: Rc<[usize]>,
        mode: ReduceMode,
        counts: Vec<usize>,
        argmax: Vec<usize>,
    },
    Propagate(Tensor, Rc<SparseMatrix>),
    NeighborMax {
        src: Tensor,
        argmax: Vec<Option<usize>>,
    },
    BatchNorm {
        src: Tensor,
        gamma: Tensor,
        beta: Tensor,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Tensor,
        labels: Rc<[usize]>,
        probs: Vec<f64>,
    },
    MultiMargin {
        logits: Tensor,
        labels: Rc<[usize]>,
    },
    Sum(Tensor),
    Mean(Tensor),
}

impl Op {
    fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::AddRow(x, r) | Op::MulRow(x, r) => vec![x, r],
            Op::Scale(x, _) | Op::Activation(x, _) | Op::GatherRows(x, _) | Op::Propagate(x, _) => {
                vec![x]
            }
            Op::ConcatCols(parts) => parts.iter().collect(),
            Op::Reduce { src, .. } | Op::NeighborMax { src, .. } => vec![src],
            Op::BatchNorm {
                src, gamma, beta, ..
            } => vec![src, gamma, beta],
            Op::CrossEntropy { logits, .. } | Op::MultiMargin { logits, .. } => vec![logits],
            Op::Sum(x) | Op::Mean(x) => vec![x],
        }
    }
}

struct Node {
    id: u64,
    rows: usize,
    cols: usize,
    value: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    op: Op,
}

/// A node in the differentiation graph. Cloning is cheap (shared handle).
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .field("value", &self.0.value.borrow())
            .finish()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl Tensor {
    fn leaf(m: Matrix, requires_grad: bool) -> Tensor {
        let (rows, cols) = m.shape();
        Tensor(Rc::new(Node {
            id: next_id(),
            rows,
            cols,
            value: RefCell::new(m.into_data()),
            grad: RefCell::new(None),
            requires_grad,
            op: Op::Leaf,
        }))
    }

    fn from_op(rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Tensor {
        debug_assert_eq!(value.len(), rows * cols);
        let requires_grad = grad_enabled() && op.parents().iter().any(|p| p.0.requires_grad);
        Tensor(Rc::new(Node {
            id: next_id(),
            rows,
            cols,
            value: RefCell::new(value),
            grad: RefCell::new(None),
            requires_grad,
            op: if requires_grad { op } else { Op::Leaf },
        }))
    }

    /// A learnable leaf.
    pub fn parameter(m: Matrix) -> Tensor {
        Self::leaf(m, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(m: Matrix) -> Tensor {
        Self::leaf(m, false)
    }

    pub fn scalar(v: f64) -> Tensor {
        Self::constant(Matrix::filled(1, 1, v))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn rows(&self) -> usize {
        self.0.rows
    }

    pub fn cols(&self) -> usize {
        self.0.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.0.rows, self.0.cols)
    }

    pub fn len(&self) -> usize {
        self.0.rows * self.0.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.0.op, Op::Leaf)
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::new(self.0.rows, self.0.cols, self.0.value.borrow().clone())
            .expect("node shape is consistent")
    }

    pub fn values(&self) -> Vec<f64> {
        self.0.value.borrow().clone()
    }

    pub fn with_values<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.0.value.borrow())
    }

    /// Value of a 1×1 tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() on a non-scalar tensor");
        self.0.value.borrow()[0]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.0.value.borrow()[r * self.0.cols + c]
    }

    pub fn grad(&self) -> Option<Matrix> {
        self.0
            .grad
            .borrow()
            .as_ref()
            .map(|g| Matrix::new(self.0.rows, self.0.cols, g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Mutates a leaf's values in place together with a view of its gradient.
    pub fn update_leaf(&self, f: impl FnOnce(&mut [f64], Option<&[f64]>)) {
        assert!(self.is_leaf(), "update_leaf on a non-leaf tensor");
        let grad = self.0.grad.borrow();
        let mut value = self.0.value.borrow_mut();
        f(&mut value, grad.as_deref());
    }

    pub fn set_values(&self, m: &Matrix) -> Result<()> {
        if m.shape() != self.shape() {
            return Err(Error::Shape {
                op: "set_values",
                left: self.shape(),
                right: m.shape(),
            });
        }
        self.0.value.borrow_mut().copy_from_slice(m.data());
        Ok(())
    }

    // ---- forward operations -------------------------------------------------

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols() != other.rows() {
            return Err(shape_err("matmul", self, other));
        }
        let (m, k, n) = (self.rows(), self.cols(), other.cols());
        let mut out = vec![0.0; m * n];
        {
            let a = self.0.value.borrow();
            let b = other.0.value.borrow();
            gemm(Operand::plain(&a, m, k), Operand::plain(&b, k, n), &mut out, false);
        }
        Ok(Self::from_op(m, n, out, Op::MatMul(self.clone(), other.clone())))
    }

    fn zip_same(&self, other: &Tensor, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        if self.shape() != other.shape() {
            return Err(shape_err(name, self, other));
        }
        let a = self.0.value.borrow();
        let b = other.0.value.borrow();
        Ok(a.iter().zip(b.iter()).map(|(x, y)| f(*x, *y)).collect())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let v = self.zip_same(other, "add", |a, b| a + b)?;
        Ok(Self::from_op(self.rows(), self.cols(), v, Op::Add(self.clone(), other.clone())))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let v = self.zip_same(other, "sub", |a, b| a - b)?;
        Ok(Self::from_op(self.rows(), self.cols(), v, Op::Sub(self.clone(), other.clone())))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let v = self.zip_same(other, "mul", |a, b| a * b)?;
        Ok(Self::from_op(self.rows(), self.cols(), v, Op::Mul(self.clone(), other.clone())))
    }

    /// Adds a `1×cols` row to every row.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        if row.rows() != 1 || row.cols() != self.cols() {
            return Err(shape_err("add_row", self, row));
        }
        let cols = self.cols();
        let v = {
            let x = self.0.value.borrow();
            let r = row.0.value.borrow();
            x.iter().enumerate().map(|(i, v)| v + r[i % cols]).collect()
        };
        Ok(Self::from_op(self.rows(), cols, v, Op::AddRow(self.clone(), row.clone())))
    }

    /// Multiplies every row elementwise by a `1×cols` row.
    pub fn mul_row(&self, row: &Tensor) -> Result<Tensor> {
        if row.rows() != 1 || row.cols() != self.cols() {
            return Err(shape_err("mul_row", self, row));
        }
        let cols = self.cols();
        let v = {
            let x = self.0.value.borrow();
            let r = row.0.value.borrow();
            x.iter().enumerate().map(|(i, v)| v * r[i % cols]).collect()
        };
        Ok(Self::from_op(self.rows(), cols, v, Op::MulRow(self.clone(), row.clone())))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        let v = self.0.value.borrow().iter().map(|x| x * s).collect();
        Self::from_op(self.rows(), self.cols(), v, Op::Scale(self.clone(), s))
    }

    pub fn activation(&self, kind: ActivationKind) -> Tensor {
        let v = self.0.value.borrow().iter().map(|&x| kind.apply(x)).collect();
        Self::from_op(self.rows(), self.cols(), v, Op::Activation(self.clone(), kind))
    }

    /// Horizontal concatenation; every part must have the same row count.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        let Some(first) = parts.first() else {
            return Err(Error::contract("concat_cols needs at least one tensor"));
        };
        let rows = first.rows();
        for p in parts {
            if p.rows() != rows {
                return Err(shape_err("concat_cols", first, p));
            }
        }
        let cols: usize = parts.iter().map(Tensor::cols).sum();
        let mut v = Vec::with_capacity(rows * cols);
        {
            let vals: Vec<_> = parts.iter().map(|p| p.0.value.borrow()).collect();
            for r in 0..rows {
                for (p, pv) in parts.iter().zip(&vals) {
                    let w = p.cols();
                    v.extend_from_slice(&pv[r * w..(r + 1) * w]);
                }
            }
        }
        Ok(Self::from_op(rows, cols, v, Op::ConcatCols(parts.to_vec())))
    }

    /// Row lookup; `None` entries produce zero rows.
    pub fn gather_rows(&self, index: Rc<[Option<usize>]>) -> Result<Tensor> {
        let cols = self.cols();
        let mut v = vec![0.0; index.len() * cols];
        {
            let x = self.0.value.borrow();
            for (r, idx) in index.iter().enumerate() {
                if let Some(i) = *idx {
                    if i >= self.rows() {
                        return Err(Error::contract(format!(
                            "gather index {i} out of range for {} rows",
                            self.rows()
                        )));
                    }
                    v[r * cols..(r + 1) * cols].copy_from_slice(&x[i * cols..(i + 1) * cols]);
                }
            }
        }
        Ok(Self::from_op(index.len(), cols, v, Op::GatherRows(self.clone(), index)))
    }

    /// Per-group reduction of rows. `groups[i]` is the output row of input
    /// row `i`; every group in `0..=max` must be non-empty. `Max` routes its
    /// gradient to the first arg-max row.
    pub fn reduce_rows(&self, groups: Rc<[usize]>, mode: ReduceMode) -> Result<Tensor> {
        if groups.len() != self.rows() {
            return Err(Error::contract(format!(
                "{} group ids for {} rows",
                groups.len(),
                self.rows()
            )));
        }
        let n_groups = groups.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![0usize; n_groups];
        for &g in groups.iter() {
            counts[g] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::contract(format!("group {empty} has no rows")));
        }
        let cols = self.cols();
        let x = self.0.value.borrow();
        let mut out = vec![0.0; n_groups * cols];
        let mut argmax = Vec::new();
        match mode {
            ReduceMode::Sum | ReduceMode::Mean => {
                for (i, &g) in groups.iter().enumerate() {
                    for c in 0..cols {
                        out[g * cols + c] += x[i * cols + c];
                    }
                }
                if mode == ReduceMode::Mean {
                    for (g, &n) in counts.iter().enumerate() {
                        for c in 0..cols {
                            out[g * cols + c] /= n as f64;
                        }
                    }
                }
            }
            ReduceMode::Max => {
                argmax = vec![usize::MAX; n_groups * cols];
                for (i, &g) in groups.iter().enumerate() {
                    for c in 0..cols {
                        let slot = g * cols + c;
                        let v = x[i * cols + c];
                        if argmax[slot] == usize::MAX || v > out[slot] {
                            out[slot] = v;
                            argmax[slot] = i;
                        }
                    }
                }
            }
        }
        drop(x);
        Ok(Self::from_op(
            n_groups,
            cols,
            out,
            Op::Reduce {
                src: self.clone(),
                groups,
                mode,
                counts,
                argmax,
            },
        ))
    }

    /// `S · self` for a constant sparse `S`.
    pub fn propagate(&self, s: &Rc<SparseMatrix>) -> Result<Tensor> {
        if s.cols() != self.rows() {
            return Err(Error::Shape {
                op: "propagate",
                left: (s.rows(), s.cols()),
                right: self.shape(),
            });
        }
        let cols = self.cols();
        let mut out = vec![0.0; s.rows() * cols];
        s.apply(&self.0.value.borrow(), cols, &mut out);
        Ok(Self::from_op(s.rows(), cols, out, Op::Propagate(self.clone(), Rc::clone(s))))
    }

    /// Elementwise max over each node's in-neighbors; nodes without
    /// in-neighbors get zeros.
    pub fn neighbor_max(&self, neighbors: &NeighborLists) -> Result<Tensor> {
        if neighbors.len() != self.rows() {
            return Err(Error::contract(format!(
                "neighbor lists for {} nodes, tensor has {} rows",
                neighbors.len(),
                self.rows()
            )));
        }
        let cols = self.cols();
        let n = self.rows();
        let x = self.0.value.borrow();
        let mut out = vec![0.0; n * cols];
        let mut argmax: Vec<Option<usize>> = vec![None; n * cols];
        for t in 0..n {
            for &s in neighbors.of(t) {
                if s >= n {
                    return Err(Error::contract(format!("neighbor {s} out of range")));
                }
                for c in 0..cols {
                    let slot = t * cols + c;
                    let v = x[s * cols + c];
                    if argmax[slot].is_none() || v > out[slot] {
                        out[slot] = v;
                        argmax[slot] = Some(s);
                    }
                }
            }
        }
        drop(x);
        Ok(Self::from_op(
            n,
            cols,
            out,
            Op::NeighborMax {
                src: self.clone(),
                argmax,
            },
        ))
    }

    /// Training-mode batch normalization over rows. Returns the output and
    /// the batch mean and biased variance per column.
    pub fn batch_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
        let (n, d) = self.shape();
        if gamma.shape() != (1, d) || beta.shape() != (1, d) {
            return Err(shape_err("batch_norm", self, gamma));
        }
        if n == 0 {
            return Err(Error::contract("batch_norm on an empty batch"));
        }
        let x = self.0.value.borrow();
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                mean[c] += x[r * d + c];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                let dv = x[r * d + c] - mean[c];
                var[c] += dv * dv;
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = gamma.0.value.borrow();
        let b = beta.0.value.borrow();
        let mut xhat = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            for c in 0..d {
                let i = r * d + c;
                xhat[i] = (x[i] - mean[c]) * inv_std[c];
                out[i] = g[c] * xhat[i] + b[c];
            }
        }
        drop((x, g, b));
        let t = Self::from_op(
            n,
            d,
            out,
            Op::BatchNorm {
                src: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                xhat,
                inv_std,
            },
        );
        Ok((t, mean, var))
    }

    /// Mean softmax cross-entropy of `self` (batch × classes) against labels.
    pub fn cross_entropy(&self, labels: Rc<[usize]>) -> Result<Tensor> {
        let (b, c) = self.shape();
        check_labels(b, c, &labels)?;
        let x = self.0.value.borrow();
        let mut probs = vec![0.0; b * c];
        let mut total = 0.0;
        for r in 0..b {
            let row = &x[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for j in 0..c {
                probs[r * c + j] = (row[j] - max).exp() / sum;
            }
            total += max + sum.ln() - row[labels[r]];
        }
        drop(x);
        Ok(Self::from_op(
            1,
            1,
            vec![total / b as f64],
            Op::CrossEntropy {
                logits: self.clone(),
                labels,
                probs,
            },
        ))
    }

    /// Mean multi-class hinge loss with margin 1.
    pub fn multi_margin(&self, labels: Rc<[usize]>) -> Result<Tensor> {
        let (b, c) = self.shape();
        check_labels(b, c, &labels)?;
        let total: f64 = {
            let x = self.0.value.borrow();
            (0..b)
                .map(|r| multi_margin_row(&x[r * c..(r + 1) * c], labels[r]))
                .sum()
        };
        Ok(Self::from_op(
            1,
            1,
            vec![total / b as f64],
            Op::MultiMargin {
                logits: self.clone(),
                labels,
            },
        ))
    }

    pub fn sum(&self) -> Tensor {
        let s = self.0.value.borrow().iter().sum();
        Self::from_op(1, 1, vec![s], Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Tensor {
        let n = self.len().max(1) as f64;
        let s: f64 = self.0.value.borrow().iter().sum();
        Self::from_op(1, 1, vec![s / n], Op::Mean(self.clone()))
    }

    // ---- reverse pass -------------------------------------------------------

    /// Accumulates d(self)/d(t) into every reachable tensor `t` that
    /// requires gradients. `self` must be 1×1.
    pub fn backward(&self) -> Result<()> {
        if self.shape() != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar, got {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            for p in t.0.op.parents() {
                if p.requires_grad() && !seen.contains(&p.id()) {
                    stack.push(p.clone());
                }
            }
            order.push(t);
        }
        order.sort_by(|a, b| b.id().cmp(&a.id()));

        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(self.id(), vec![1.0]);
        for node in &order {
            let Some(g) = grads.remove(&node.id()) else {
                continue;
            };
            node.backward_op(&g, &mut grads);
            let mut slot = node.0.grad.borrow_mut();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn backward_op(&self, g: &[f64], grads: &mut HashMap<u64, Vec<f64>>) {
        let mut push = |t: &Tensor, contribution: Vec<f64>| {
            if !t.requires_grad() {
                return;
            }
            match grads.get_mut(&t.id()) {
                Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, v)| *a += v),
                None => {
                    grads.insert(t.id(), contribution);
                }
            }
        };
        let (rows, cols) = self.shape();
        match &self.0.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k, n) = (a.rows(), a.cols(), b.cols());
                if a.requires_grad() {
                    let bv = b.0.value.borrow();
                    let mut ga = vec![0.0; m * k];
                    gemm(Operand::plain(g, m, n), Operand::transposed(&bv, k, n), &mut ga, false);
                    drop(bv);
                    push(a, ga);
                }
                if b.requires_grad() {
                    let av = a.0.value.borrow();
                    let mut gb = vec![0.0; k * n];
                    gemm(Operand::transposed(&av, m, k), Operand::plain(g, m, n), &mut gb, false);
                    drop(av);
                    push(b, gb);
                }
            }
            Op::Add(a, b) => {
                push(a, g.to_vec());
                push(b, g.to_vec());
            }
            Op::Sub(a, b) => {
                push(a, g.to_vec());
                push(b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                if a.requires_grad() {
                    let gb: Vec<f64> = b.with_values(|bv| g.iter().zip(bv).map(|(x, y)| x * y).collect());
                    push(a, gb);
                }
                if b.requires_grad() {
                    let ga: Vec<f64> = a.with_values(|av| g.iter().zip(av).map(|(x, y)| x * y).collect());
                    push(b, ga);
                }
            }
            Op::AddRow(x, row) => {
                push(x, g.to_vec());
                if row.requires_grad() {
                    push(row, column_sums(g, rows, cols));
                }
            }
            Op::MulRow(x, row) => {
                if x.requires_grad() {
                    let gx = row.with_values(|r| {
                        g.iter().enumerate().map(|(i, v)| v * r[i % cols]).collect()
                    });
                    push(x, gx);
                }
                if row.requires_grad() {
                    let mut gr = vec![0.0; cols];
                    x.with_values(|xv| {
                        for (i, v) in g.iter().enumerate() {
                            gr[i % cols] += v * xv[i];
                        }
                    });
                    push(row, gr);
                }
            }
            Op::Scale(x, s) => push(x, g.iter().map(|v| v * s).collect()),
            Op::Activation(x, kind) => {
                let gx = x.with_values(|xv| {
                    g.iter().zip(xv).map(|(gv, &xi)| gv * kind.derivative(xi)).collect()
                });
                push(x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = p.cols();
                    if p.requires_grad() {
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * cols + offset..r * cols + offset + w]);
                        }
                        push(p, gp);
                    }
                    offset += w;
                }
            }
            Op::GatherRows(src, index) => {
                let mut gs = vec![0.0; src.len()];
                for (r, idx) in index.iter().enumerate() {
                    if let Some(i) = *idx {
                        for c in 0..cols {
                            gs[i * cols + c] += g[r * cols + c];
                        }
                    }
                }
                push(src, gs);
            }
            Op::Reduce {
                src,
                groups,
                mode,
                counts,
                argmax,
            } => {
                let mut gs = vec![0.0; src.len()];
                match mode {
                    ReduceMode::Sum | ReduceMode::Mean => {
                        for (i, &grp) in groups.iter().enumerate() {
                            let scale = if *mode == ReduceMode::Mean {
                                1.0 / counts[grp] as f64
                            } else {
                                1.0
                            };
                            for c in 0..cols {
                                gs[i * cols + c] = g[grp * cols + c] * scale;
                            }
                        }
                    }
                    ReduceMode::Max => {
                        for (slot, &row) in argmax.iter().enumerate() {
                            let c = slot % cols;
                            gs[row * cols + c] += g[slot];
                        }
                    }
                }
                push(src, gs);
            }
            Op::Propagate(x, s) => {
                let mut gx = vec![0.0; x.len()];
                s.apply_transpose_acc(g, cols, &mut gx);
                push(x, gx);
            }
            Op::NeighborMax { src, argmax } => {
                let mut gs = vec![0.0; src.len()];
                for (slot, from) in argmax.iter().enumerate() {
                    if let Some(s) = *from {
                        gs[s * cols + slot % cols] += g[slot];
                    }
                }
                push(src, gs);
            }
            Op::BatchNorm {
                src,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = rows as f64;
                let gsum = column_sums(g, rows, cols);
                let mut gxhat_sum = vec![0.0; cols];
                for (i, v) in g.iter().enumerate() {
                    gxhat_sum[i % cols] += v * xhat[i];
                }
                if src.requires_grad() {
                    let gx = gamma.with_values(|gm| {
                        (0..rows * cols)
                            .map(|i| {
                                let c = i % cols;
                                gm[c] * inv_std[c] / n * (n * g[i] - gsum[c] - xhat[i] * gxhat_sum[c])
                            })
                            .collect()
                    });
                    push(src, gx);
                }
                push(gamma, gxhat_sum);
                push(beta, gsum);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let (b, c) = logits.shape();
                let scale = g[0] / b as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &y) in labels.iter().enumerate() {
                    gl[r * c + y] -= scale;
                }
                push(logits, gl);
            }
            Op::MultiMargin { logits, labels } => {
                let (b, c) = logits.shape();
                let scale = g[0] / (b as f64 * c as f64);
                let mut gl = vec![0.0; b * c];
                logits.with_values(|x| {
                    for (r, &y) in labels.iter().enumerate() {
                        let row = &x[r * c..(r + 1) * c];
                        for j in 0..c {
                            if j != y && 1.0 - row[y] + row[j] > 0.0 {
                                gl[r * c + j] += scale;
                                gl[r * c + y] -= scale;
                            }
                        }
                    }
                });
                push(logits, gl);
            }
            Op::Sum(x) => push(x, vec![g[0]; x.len()]),
            Op::Mean(x) => push(x, vec![g[0] / x.len().max(1) as f64; x.len()]),
        }
    }
}

fn column_sums(g: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c] += g[r * cols + c];
        }
    }
    out
}

fn check_labels(batch: usize, classes: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::contract(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::contract(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// `(1/C) Σ_{j≠y} max(0, 1 − x_y + x_j)` for one row.
pub fn multi_margin_row(row: &[f64], label: usize) -> f64 {
    let c = row.len() as f64;
    row.iter()
        .enumerate()
        .filter(|&(j, _)| j != label)
        .map(|(_, &xj)| (1.0 - row[label] + xj).max(0.0))
        .sum::<f64>()
        / c
}

/// `−log softmax(row)[label]`, max-shifted.
pub fn cross_entropy_row(row: &[f64], label: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln() - row[label]
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.matmul(b)
}

pub fn apply_activation(x: &Tensor, kind: ActivationKind) -> Tensor {
    x.activation(kind)
}

pub fn rowwise_reduce(x: &Tensor, mode: ReduceMode, groups: &[usize]) -> Result<Tensor> {
    x.reduce_rows(Rc::from(groups), mode)
}

pub fn backward(loss: &Tensor) -> Result<()> {
    loss.backward()
}
