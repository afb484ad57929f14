//! Composite operations assembled from tape primitives.
//!
//! Nothing here has a hand-written adjoint: every function below records
//! plain primitives, so first- and second-order gradients are inherited from
//! the verified primitive set. Numerically sensitive pieces (log-sum-exp,
//! softplus) use constant shifts that cancel in the derivative.

use super::tape::{DiffError, Tape, Val};
use super::tensor::Tensor;

impl Tape {
    pub fn neg(&mut self, a: Val) -> Result<Val, DiffError> {
        self.scale(a, -1.0)
    }

    pub fn sub(&mut self, a: Val, b: Val) -> Result<Val, DiffError> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    /// Sum of all entries, as a 1x1 value.
    pub fn sum_all(&mut self, a: Val) -> Result<Val, DiffError> {
        let cs = self.col_sum(a)?;
        self.row_sum(cs)
    }

    /// Multiply row i of `a` by `v[i]`; `v` is r x 1.
    pub fn scale_rows(&mut self, a: Val, v: Val) -> Result<Val, DiffError> {
        let cols = self.value(a).cols();
        let ones = self.constant(Tensor::ones(1, cols));
        let b = self.matmul(v, ones)?;
        self.mul(a, b)
    }

    /// Multiply column j of `a` by `v[j]`; `v` is 1 x c.
    pub fn scale_cols(&mut self, a: Val, v: Val) -> Result<Val, DiffError> {
        let rows = self.value(a).rows();
        let ones = self.constant(Tensor::ones(rows, 1));
        let b = self.matmul(ones, v)?;
        self.mul(a, b)
    }

    /// Broadcast a 1x1 value to r x c.
    pub fn broadcast_scalar(&mut self, s: Val, rows: usize, cols: usize) -> Result<Val, DiffError> {
        let col = self.constant(Tensor::ones(rows, 1));
        let row = self.constant(Tensor::ones(1, cols));
        let left = self.matmul(col, s)?;
        self.matmul(left, row)
    }

    /// Add a 1 x c bias row to every row of `a`.
    pub fn add_bias(&mut self, a: Val, bias: Val) -> Result<Val, DiffError> {
        let rows = self.value(a).rows();
        let ones = self.constant(Tensor::ones(rows, 1));
        let b = self.matmul(ones, bias)?;
        self.add(a, b)
    }

    /// Select rows by (repeatable) indices via a constant 0/1 selector.
    pub fn gather_rows(&mut self, a: Val, idx: &[usize]) -> Result<Val, DiffError> {
        let rows = self.value(a).rows();
        let mut sel = Tensor::zeros(idx.len(), rows);
        for (k, &i) in idx.iter().enumerate() {
            debug_assert!(i < rows);
            sel.set(k, i, 1.0);
        }
        let s = self.constant(sel);
        self.matmul(s, a)
    }

    /// Stack blocks vertically. All blocks must share a column count.
    pub fn concat_rows(&mut self, blocks: &[Val]) -> Result<Val, DiffError> {
        assert!(!blocks.is_empty());
        let total: usize = blocks.iter().map(|&b| self.value(b).rows()).sum();
        let mut offset = 0;
        let mut acc: Option<Val> = None;
        for &b in blocks {
            let r = self.value(b).rows();
            let mut sel = Tensor::zeros(total, r);
            for k in 0..r {
                sel.set(offset + k, k, 1.0);
            }
            let s = self.constant(sel);
            let placed = self.matmul(s, b)?;
            acc = Some(match acc {
                Some(prev) => self.add(prev, placed)?,
                None => placed,
            });
            offset += r;
        }
        Ok(acc.unwrap())
    }

    /// Stack blocks horizontally. All blocks must share a row count.
    pub fn concat_cols(&mut self, blocks: &[Val]) -> Result<Val, DiffError> {
        assert!(!blocks.is_empty());
        let total: usize = blocks.iter().map(|&b| self.value(b).cols()).sum();
        let mut offset = 0;
        let mut acc: Option<Val> = None;
        for &b in blocks {
            let c = self.value(b).cols();
            let mut sel = Tensor::zeros(c, total);
            for k in 0..c {
                sel.set(k, offset + k, 1.0);
            }
            let s = self.constant(sel);
            let placed = self.matmul(b, s)?;
            acc = Some(match acc {
                Some(prev) => self.add(prev, placed)?,
                None => placed,
            });
            offset += c;
        }
        Ok(acc.unwrap())
    }

    /// Row-wise softmax, shifted by the per-row max (captured as a constant,
    /// so gradients are unaffected) to keep exp in range.
    pub fn softmax_rows(&mut self, z: Val) -> Result<Val, DiffError> {
        let shifted = self.shift_by_row_max(z)?;
        let e = self.exp(shifted)?;
        let s = self.row_sum(e)?;
        let inv = self.recip(s)?;
        self.scale_rows(e, inv)
    }

    /// Row-wise log-softmax with the same constant-shift stabilization.
    pub fn log_softmax_rows(&mut self, z: Val) -> Result<Val, DiffError> {
        let shifted = self.shift_by_row_max(z)?;
        let e = self.exp(shifted)?;
        let s = self.row_sum(e)?;
        let l = self.log(s)?;
        let cols = self.value(z).cols();
        let ones = self.constant(Tensor::ones(1, cols));
        let lse = self.matmul(l, ones)?;
        self.sub(shifted, lse)
    }

    fn shift_by_row_max(&mut self, z: Val) -> Result<Val, DiffError> {
        let v = self.value(z);
        let (r, c) = (v.rows(), v.cols());
        let mut m = Tensor::zeros(r, 1);
        for i in 0..r {
            let mx = v.row_slice(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m.set(i, 0, mx);
        }
        let mc = self.constant(m);
        let ones = self.constant(Tensor::ones(1, c));
        let bc = self.matmul(mc, ones)?;
        self.sub(z, bc)
    }

    /// Mean cross-entropy of row-wise softmax over the masked rows.
    /// `labels[i]` is the class of row i; `mask` lists the rows that count.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Val,
        labels: &[u32],
        mask: &[usize],
    ) -> Result<Val, DiffError> {
        let v = self.value(logits);
        let (r, c) = (v.rows(), v.cols());
        if mask.is_empty() {
            return Err(DiffError::EmptyMask);
        }
        for &i in mask {
            if i >= r {
                return Err(DiffError::MaskOutOfRange(i, r));
            }
            let y = labels[i];
            if y as usize >= c {
                return Err(DiffError::LabelOutOfRange { label: y, classes: c, row: i });
            }
        }
        // loss = -(1/|mask|) sum_{i in mask} log_softmax[i, y_i], folded into
        // one inner product with a constant coefficient matrix
        let mut coeff = Tensor::zeros(r, c);
        let w = -1.0 / mask.len() as f64;
        for &i in mask {
            let j = labels[i] as usize;
            coeff.set(i, j, coeff.get(i, j) + w);
        }
        let lsm = self.log_softmax_rows(logits)?;
        let cc = self.constant(coeff);
        let prod = self.mul(lsm, cc)?;
        self.sum_all(prod)
    }

    /// Column-wise cosine mismatch: sum over columns of (1 - cos(a_j, b_j)).
    ///
    /// Zero-norm columns are resolved at record time: both zero contributes 0,
    /// exactly one zero contributes 1, and either way the smooth path is
    /// excluded so no gradient flows through those columns.
    pub fn cosine_per_column(&mut self, a: Val, b: Val) -> Result<Val, DiffError> {
        let va = self.value(a);
        let vb = self.value(b);
        if !va.same_shape(vb) {
            return Err(super::tensor::ShapeError::Mismatch {
                expected_rows: va.rows(),
                expected_cols: va.cols(),
                got_rows: vb.rows(),
                got_cols: vb.cols(),
            }
            .into());
        }
        let (r, c) = (va.rows(), va.cols());
        let mut pad = Tensor::zeros(1, c);
        let mut good = Tensor::zeros(1, c);
        let mut fixed = 0.0;
        let mut num_good = 0usize;
        for j in 0..c {
            let mut na = 0.0;
            let mut nb = 0.0;
            for i in 0..r {
                na += va.get(i, j) * va.get(i, j);
                nb += vb.get(i, j) * vb.get(i, j);
            }
            match (na == 0.0, nb == 0.0) {
                (false, false) => {
                    good.set(0, j, 1.0);
                    num_good += 1;
                }
                (true, true) => {}
                _ => fixed += 1.0,
            }
            if na == 0.0 || nb == 0.0 {
                // keep rsqrt finite in excluded lanes
                pad.set(0, j, 1.0);
            }
        }

        let aa = self.mul(a, a)?;
        let na2 = self.col_sum(aa)?;
        let bb = self.mul(b, b)?;
        let nb2 = self.col_sum(bb)?;
        let padc = self.constant(pad);
        let na2p = self.add(na2, padc)?;
        let nb2p = self.add(nb2, padc)?;
        let prod = self.mul(na2p, nb2p)?;
        let inv = self.rsqrt(prod)?;
        let ab = self.mul(a, b)?;
        let dots = self.col_sum(ab)?;
        let cos = self.mul(dots, inv)?;
        let goodc = self.constant(good);
        let masked = self.mul(cos, goodc)?;
        let total_cos = self.sum_all(masked)?;
        let base = self.scalar_const(num_good as f64 + fixed);
        self.sub(base, total_cos)
    }

    /// Numerically stable softplus log(1 + e^z), elementwise, built as
    /// relu(z) + log(1 + exp(-|z|)) so exp never overflows.
    pub fn softplus(&mut self, z: Val) -> Result<Val, DiffError> {
        let shape = self.value(z).shape();
        let pos = self.relu(z)?;
        let nz = self.neg(z)?;
        let negp = self.relu(nz)?;
        let abs = self.add(pos, negp)?;
        let nabs = self.neg(abs)?;
        let e = self.exp(nabs)?;
        let ones = self.constant(Tensor::ones(shape[0], shape[1]));
        let onepe = self.add(ones, e)?;
        let l = self.log(onepe)?;
        self.add(pos, l)
    }

    /// Elementwise absolute value as relu(z) + relu(-z).
    pub fn abs_val(&mut self, z: Val) -> Result<Val, DiffError> {
        let pos = self.relu(z)?;
        let nz = self.neg(z)?;
        let negp = self.relu(nz)?;
        self.add(pos, negp)
    }

    /// Arithmetic mean of scalar values.
    pub fn mean_of(&mut self, parts: &[Val]) -> Result<Val, DiffError> {
        assert!(!parts.is_empty());
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p)?;
        }
        self.scale(acc, 1.0 / parts.len() as f64)
    }
}
