//! CSR storage for symmetric sparse operators.
//!
//! The only sparse matrices in this engine are normalized adjacencies, which
//! are symmetric by construction. Symmetry is load-bearing: the adjoint of
//! `S @ X` reuses `S` itself instead of a transposed copy.

use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseSym {
    /// Build from strictly-upper off-diagonal entries plus an explicit diagonal.
    /// Each `(i, j, v)` with `i < j` is mirrored to `(j, i, v)`.
    pub fn from_upper(n: usize, off_diag: &[(usize, usize, f64)], diag: &[f64]) -> Self {
        assert_eq!(diag.len(), n, "diagonal length must equal n");
        let mut per_row: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for i in 0..n {
            if diag[i] != 0.0 {
                per_row[i].push((i as u32, diag[i]));
            }
        }
        for &(i, j, v) in off_diag {
            assert!(i < j && j < n, "off-diagonal entries must satisfy i < j < n");
            per_row[i].push((j as u32, v));
            per_row[j].push((i as u32, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in &mut per_row {
            row.sort_by_key(|&(c, _)| c);
            for &(c, v) in row.iter() {
                col_idx.push(c);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseSym { n, row_ptr, col_idx, vals }
    }

    pub fn identity(n: usize) -> Self {
        SparseSym::from_upper(n, &[], &vec![1.0; n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn entries_of_row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi]
            .iter()
            .zip(&self.vals[lo..hi])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries_of_row(i)
            .find(|&(c, _)| c == j)
            .map_or(0.0, |(_, v)| v)
    }

    /// Dense product `self @ x`.
    pub fn matmul_dense(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.rows(), self.n, "operand rows must equal n");
        let c = x.cols();
        let mut out = Tensor::zeros(self.n, c);
        for i in 0..self.n {
            let dst = i * c;
            for (j, v) in self.entries_of_row(i) {
                let src = x.row_slice(j);
                let row = &mut out.data_mut()[dst..dst + c];
                for k in 0..c {
                    row[k] += v * src[k];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.entries_of_row(i) {
                out.set(i, j, v);
            }
        }
        out
    }
}
