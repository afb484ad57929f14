//! Reverse-mode automatic differentiation on a single append-only tape.
//!
//! Forward values are computed eagerly when an operation is recorded. `grad`
//! walks the recorded nodes in reverse and emits each adjoint as new tape
//! nodes built from the same primitive set, so a scalar assembled from
//! first-order gradients can itself be differentiated: second order falls out
//! of calling `grad` again, with no hand-written Hessian products anywhere.
//!
//! Invariants kept by construction:
//! - node indices are a topological order (inputs precede consumers);
//! - re-executing the tape on the same leaf values reproduces every
//!   intermediate bit-exactly (`replay` shares the forward kernel);
//! - relu contributes a zero second derivative everywhere, including at the
//!   kink: its adjoint multiplies by a 0/1 mask captured as a constant.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use super::sparse::SparseSym;
use super::tensor::{ShapeError, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Error, PartialEq)]
pub enum DiffError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("operands recorded on different tapes")]
    TapeMismatch,
    #[error("matmul inner dimensions disagree: {0}x{1} @ {2}x{3}")]
    MatMulShape(usize, usize, usize, usize),
    #[error("gradient output must be scalar, got {0}x{1}")]
    NonScalarOutput(usize, usize),
    #[error("node {0} is not a leaf")]
    NotALeaf(usize),
    #[error("leaf {0} does not require gradients")]
    LeafWithoutGrad(usize),
    #[error("masked loss received an empty mask")]
    EmptyMask,
    #[error("label {label} out of range for {classes} classes at row {row}")]
    LabelOutOfRange { label: u32, classes: usize, row: usize },
    #[error("mask index {0} out of range for {1} rows")]
    MaskOutOfRange(usize, usize),
    #[error("sparse operand has {srows} rows, dense has {drows}")]
    SparseShape { srows: usize, drows: usize },
}

/// Handle to a tape node. Carries the tape id so values from different tapes
/// cannot be mixed silently.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Val {
    tape: u64,
    index: usize,
}

impl Val {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Scale(usize, f64),
    Mul(usize, usize),
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Recip(usize),
    Rsqrt(usize),
    RowSum(usize),
    ColSum(usize),
    Reshape(usize, usize, usize),
    SparseMatMul(usize, usize), // (registered matrix, dense operand)
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Recip(a)
            | Op::Rsqrt(a)
            | Op::RowSum(a)
            | Op::ColSum(a)
            | Op::Reshape(a, _, _)
            | Op::SparseMatMul(_, a) => vec![a],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    matrices: Vec<Arc<SparseSym>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            matrices: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Val) -> &Tensor {
        debug_assert_eq!(v.tape, self.id);
        &self.nodes[v.index].value
    }

    fn check(&self, v: Val) -> Result<usize, DiffError> {
        if v.tape != self.id {
            return Err(DiffError::TapeMismatch);
        }
        Ok(v.index)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Val {
        let needs_grad = match &op {
            Op::Leaf => value.requires_grad(),
            other => other.inputs().iter().any(|&i| self.nodes[i].needs_grad),
        };
        self.nodes.push(Node { op, value, needs_grad });
        Val { tape: self.id, index: self.nodes.len() - 1 }
    }

    /// Record a leaf; gradient tracking follows the tensor's `requires_grad`.
    pub fn leaf(&mut self, value: Tensor) -> Val {
        self.push(Op::Leaf, value)
    }

    /// Leaf that participates in differentiation.
    pub fn var(&mut self, value: Tensor) -> Val {
        self.push(Op::Leaf, value.with_grad())
    }

    /// Leaf held constant.
    pub fn constant(&mut self, mut value: Tensor) -> Val {
        if value.requires_grad() {
            value = Tensor::new(value.rows(), value.cols(), value.data().to_vec()).unwrap();
        }
        self.push(Op::Leaf, value)
    }

    pub fn scalar_const(&mut self, v: f64) -> Val {
        self.constant(Tensor::scalar(v))
    }

    pub fn register_matrix(&mut self, m: Arc<SparseSym>) -> usize {
        self.matrices.push(m);
        self.matrices.len() - 1
    }

    // ─── primitive operations ───

    pub fn matmul(&mut self, a: Val, b: Val) -> Result<Val, DiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.cols() != vb.rows() {
            return Err(DiffError::MatMulShape(va.rows(), va.cols(), vb.rows(), vb.cols()));
        }
        let value = eval_matmul(va, vb);
        Ok(self.push(Op::MatMul(ia, ib), value))
    }

    pub fn transpose(&mut self, a: Val) -> Result<Val, DiffError> {
        let ia = self.check(a)?;
        let value = eval_transpose(&self.nodes[ia].value);
        Ok(self.push(Op::Transpose(ia), value))
    }

    pub fn add(&mut self, a: Val, b: Val) -> Result<Val, DiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        require_same_shape(va, vb)?;
        let value = eval_zip(va, vb, |x, y| x + y);
        Ok(self.push(Op::Add(ia, ib), value))
    }

    pub fn scale(&mut self, a: Val, c: f64) -> Result<Val, DiffError> {
        let ia = self.check(a)?;
        let value = eval_map(&self.nodes[ia].value, |x| c * x);
        Ok(self.push(Op::Scale(ia, c), value))
    }

    pub fn mul(&mut self, a: Val, b: Val) -> Result<Val, DiffError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        require_same_shape(va, vb)?;
        let value = eval_zip(va, vb, |x, y| x * y);
        Ok(self.push(Op::Mul(ia, ib), value))
    }

    pub fn relu(&mut self, a: Val) -> Result<Val, DiffError> {
        let ia = self.check(a)?;
        let value = eval_map(&self.nodes[ia].value, |x| x.max(0.0));
        Ok(self.push(Op::Relu(ia), value))
    }

    pub fn sigmoid(&mut self, a: Val) -> Result<Val, DiffError> {
        let ia = self.check(a)?;
        let value = eval_map(&self.nodes[ia].value, sigmoid_scalar);
        Ok(self.push(Op::Sigmoid(ia), value))
    }

    pub fn exp(&mut self, a: Val) -> Result<Val, DiffError> {
        let ia = self.check(a)?;
        let value = eval_map(&self.nodes[ia].value, f64::exp);
        Ok(self.push(Op::Exp(ia), value))
    }

    pub fn log(&mut self, a: Val) -> Result<Val, DiffError> {
        let ia = self.check(a)?;
        let value = eval_map(&self.nodes[ia].value, f64::ln);
        Ok(self.push(Op::Log(ia), value))
    }

    pub fn recip(&mut self, a: Val) -> Result<Val, DiffError> {
        let ia = self.check(a)?;
        let value = eval_map(&self.nodes[ia].value, f64::recip);
        Ok(self.push(Op::Recip(ia), value))
    }

    pub fn rsqrt(&mut self, a: Val) -> Result<Val, DiffError> {
        let ia = self.check(a)?;
        let value = eval_map(&self.nodes[ia].value, |x| x.sqrt().recip());
        Ok(self.push(Op::Rsqrt(ia), value))
    }

    /// Sum over columns: r x c -> r x 1.
    pub fn row_sum(&mut self, a: Val) -> Result<Val, DiffError> {
        let ia = self.check(a)?;
        let value = eval_row_sum(&self.nodes[ia].value);
        Ok(self.push(Op::RowSum(ia), value))
    }

    /// Sum over rows: r x c -> 1 x c.
    pub fn col_sum(&mut self, a: Val) -> Result<Val, DiffError> {
        let ia = self.check(a)?;
        let value = eval_col_sum(&self.nodes[ia].value);
        Ok(self.push(Op::ColSum(ia), value))
    }

    pub fn reshape(&mut self, a: Val, rows: usize, cols: usize) -> Result<Val, DiffError> {
        let ia = self.check(a)?;
        let va = &self.nodes[ia].value;
        if va.rows() * va.cols() != rows * cols {
            return Err(ShapeError::Mismatch {
                expected_rows: rows,
                expected_cols: cols,
                got_rows: va.rows(),
                got_cols: va.cols(),
            }
            .into());
        }
        let value = Tensor::new(rows, cols, va.data().to_vec()).unwrap();
        Ok(self.push(Op::Reshape(ia, rows, cols), value))
    }

    /// Product of a registered symmetric sparse matrix with a dense operand.
    pub fn sparse_matmul(&mut self, matrix: usize, a: Val) -> Result<Val, DiffError> {
        let ia = self.check(a)?;
        let s = Arc::clone(&self.matrices[matrix]);
        let va = &self.nodes[ia].value;
        if s.n() != va.rows() {
            return Err(DiffError::SparseShape { srows: s.n(), drows: va.rows() });
        }
        let value = s.matmul_dense(va);
        Ok(self.push(Op::SparseMatMul(matrix, ia), value))
    }

    // ─── differentiation ───

    /// Reverse-mode gradients of a scalar with respect to grad-tracking
    /// leaves. Adjoints are appended to the tape as ordinary nodes, so the
    /// returned values can feed further computation and be differentiated
    /// again. A requested leaf the output does not depend on yields zeros.
    pub fn grad(&mut self, output: Val, wrt: &[Val]) -> Result<Vec<Val>, DiffError> {
        let out_idx = self.check(output)?;
        {
            let v = &self.nodes[out_idx].value;
            if !v.is_scalar() {
                return Err(DiffError::NonScalarOutput(v.rows(), v.cols()));
            }
        }
        for &w in wrt {
            let iw = self.check(w)?;
            match self.nodes[iw].op {
                Op::Leaf => {
                    if !self.nodes[iw].needs_grad {
                        return Err(DiffError::LeafWithoutGrad(iw));
                    }
                }
                _ => return Err(DiffError::NotALeaf(iw)),
            }
        }

        let frontier = out_idx + 1;
        let mut adjoint: Vec<Option<Val>> = vec![None; frontier];
        adjoint[out_idx] = Some(self.scalar_const(1.0));

        for i in (0..frontier).rev() {
            let Some(a) = adjoint[i] else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let this = Val { tape: self.id, index: i };
            for (input, contrib) in self.input_adjoints(&op, this, a)? {
                adjoint[input] = Some(match adjoint[input] {
                    Some(prev) => self.add(prev, contrib)?,
                    None => contrib,
                });
            }
        }

        wrt.iter()
            .map(|&w| {
                let iw = w.index;
                match adjoint.get(iw).copied().flatten() {
                    Some(v) => Ok(v),
                    None => {
                        let shape = self.nodes[iw].value.shape();
                        Ok(self.constant(Tensor::zeros(shape[0], shape[1])))
                    }
                }
            })
            .collect()
    }

    /// Second-order entry point: differentiate a scalar that was assembled
    /// from tensors returned by `grad`. Identical mechanics, kept as its own
    /// name so call sites say what order they mean.
    pub fn grad2(&mut self, output: Val, wrt: &[Val]) -> Result<Vec<Val>, DiffError> {
        self.grad(output, wrt)
    }

    /// Adjoint contributions of one node to its inputs, expressed with
    /// recorded primitives. `this` is the node itself, `a` its adjoint.
    fn input_adjoints(&mut self, op: &Op, this: Val, a: Val) -> Result<Vec<(usize, Val)>, DiffError> {
        let relevant = |tape: &Self, idx: usize| tape.nodes[idx].needs_grad;
        let val = |tape: &Self, idx: usize| Val { tape: tape.id, index: idx };
        Ok(match *op {
            Op::Leaf => vec![],
            Op::MatMul(x, y) => {
                let mut out = Vec::new();
                if relevant(self, x) {
                    let yt = self.transpose(val(self, y))?;
                    out.push((x, self.matmul(a, yt)?));
                }
                if relevant(self, y) {
                    let xt = self.transpose(val(self, x))?;
                    out.push((y, self.matmul(xt, a)?));
                }
                out
            }
            Op::Transpose(x) => vec![(x, self.transpose(a)?)],
            Op::Add(x, y) => {
                let mut out = Vec::new();
                if relevant(self, x) {
                    out.push((x, a));
                }
                if relevant(self, y) {
                    out.push((y, a));
                }
                out
            }
            Op::Scale(x, c) => vec![(x, self.scale(a, c)?)],
            Op::Mul(x, y) => {
                let mut out = Vec::new();
                if relevant(self, x) {
                    out.push((x, self.mul(a, val(self, y))?));
                }
                if relevant(self, y) {
                    out.push((y, self.mul(a, val(self, x))?));
                }
                out
            }
            Op::Relu(x) => {
                // 0/1 mask frozen as a constant: second derivative is zero
                // everywhere by decree, kink included.
                let mask = eval_map(&self.nodes[x].value, |v| if v > 0.0 { 1.0 } else { 0.0 });
                let m = self.constant(mask);
                vec![(x, self.mul(a, m)?)]
            }
            Op::Sigmoid(x) => {
                let y = this;
                let shape = self.nodes[x].value.shape();
                let ones = self.constant(Tensor::ones(shape[0], shape[1]));
                let neg_y = self.scale(y, -1.0)?;
                let one_minus = self.add(ones, neg_y)?;
                let dy = self.mul(y, one_minus)?;
                vec![(x, self.mul(a, dy)?)]
            }
            Op::Exp(x) => vec![(x, self.mul(a, this)?)],
            Op::Log(x) => {
                let inv = self.recip(val(self, x))?;
                vec![(x, self.mul(a, inv)?)]
            }
            Op::Recip(x) => {
                let y2 = self.mul(this, this)?;
                let m = self.mul(a, y2)?;
                vec![(x, self.scale(m, -1.0)?)]
            }
            Op::Rsqrt(x) => {
                let y2 = self.mul(this, this)?;
                let y3 = self.mul(y2, this)?;
                let m = self.mul(a, y3)?;
                vec![(x, self.scale(m, -0.5)?)]
            }
            Op::RowSum(x) => {
                let cols = self.nodes[x].value.cols();
                let ones = self.constant(Tensor::ones(1, cols));
                vec![(x, self.matmul(a, ones)?)]
            }
            Op::ColSum(x) => {
                let rows = self.nodes[x].value.rows();
                let ones = self.constant(Tensor::ones(rows, 1));
                vec![(x, self.matmul(ones, a)?)]
            }
            Op::Reshape(x, _, _) => {
                let shape = self.nodes[x].value.shape();
                vec![(x, self.reshape(a, shape[0], shape[1])?)]
            }
            Op::SparseMatMul(m, x) => vec![(x, self.sparse_matmul(m, a)?)],
        })
    }

    /// Re-execute every non-leaf node from stored leaf values and return the
    /// recomputed forwards. Shares the forward kernels with recording, so on
    /// unchanged leaves the results are bit-identical to `value`.
    pub fn replay(&self) -> Result<Vec<Tensor>, DiffError> {
        let mut out: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                Op::MatMul(a, b) => eval_matmul(&out[a], &out[b]),
                Op::Transpose(a) => eval_transpose(&out[a]),
                Op::Add(a, b) => eval_zip(&out[a], &out[b], |x, y| x + y),
                Op::Scale(a, c) => eval_map(&out[a], |x| c * x),
                Op::Mul(a, b) => eval_zip(&out[a], &out[b], |x, y| x * y),
                Op::Relu(a) => eval_map(&out[a], |x| x.max(0.0)),
                Op::Sigmoid(a) => eval_map(&out[a], sigmoid_scalar),
                Op::Exp(a) => eval_map(&out[a], f64::exp),
                Op::Log(a) => eval_map(&out[a], f64::ln),
                Op::Recip(a) => eval_map(&out[a], f64::recip),
                Op::Rsqrt(a) => eval_map(&out[a], |x| x.sqrt().recip()),
                Op::RowSum(a) => eval_row_sum(&out[a]),
                Op::ColSum(a) => eval_col_sum(&out[a]),
                Op::Reshape(a, r, c) => Tensor::new(r, c, out[a].data().to_vec()).unwrap(),
                Op::SparseMatMul(m, a) => self.matrices[m].matmul_dense(&out[a]),
            };
            out.push(value);
        }
        Ok(out)
    }
}

fn require_same_shape(a: &Tensor, b: &Tensor) -> Result<(), ShapeError> {
    if !a.same_shape(b) {
        return Err(ShapeError::Mismatch {
            expected_rows: a.rows(),
            expected_cols: a.cols(),
            got_rows: b.rows(),
            got_cols: b.cols(),
        });
    }
    Ok(())
}

fn sigmoid_scalar(x: f64) -> f64 {
    // split on sign so exp never overflows
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn eval_map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = a.data().iter().map(|&x| f(x)).collect();
    Tensor::new(a.rows(), a.cols(), data).unwrap()
}

fn eval_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.rows(), a.cols(), data).unwrap()
}

fn eval_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(n, m);
    for i in 0..n {
        let arow = a.row_slice(i);
        let orow = &mut out.data_mut()[i * m..(i + 1) * m];
        for (l, &av) in arow.iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            let brow = b.row_slice(l);
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

fn eval_transpose(a: &Tensor) -> Tensor {
    let (r, c) = (a.rows(), a.cols());
    let mut out = Tensor::zeros(c, r);
    for i in 0..r {
        for j in 0..c {
            out.set(j, i, a.get(i, j));
        }
    }
    out
}

fn eval_row_sum(a: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows(), 1);
    for i in 0..a.rows() {
        out.set(i, 0, a.row_slice(i).iter().sum());
    }
    out
}

fn eval_col_sum(a: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, a.cols());
    for i in 0..a.rows() {
        for (j, &v) in a.row_slice(i).iter().enumerate() {
            let cur = out.get(0, j);
            out.set(0, j, cur + v);
        }
    }
    out
}
