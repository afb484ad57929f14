//! Symmetric degree-normalized adjacency with self-loops:
//! N(A) = D^{-1/2} (A + I) D^{-1/2}, with D the row sums of A + I.
//!
//! Two constructions share these semantics: a sparse constant operator for
//! data graphs, and a differentiable dense composite used while the synthetic
//! adjacency is being learned. Tests pin them against each other.

use std::sync::Arc;

use crate::diff::{DiffError, SparseSym, Tape, Tensor, Val};
use crate::graph::LabeledGraph;

/// Sparse normalized adjacency, used as a constant propagation operator.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    matrix: Arc<SparseSym>,
}

impl NormalizedAdjacency {
    pub fn from_graph(g: &LabeledGraph) -> Self {
        let n = g.num_nodes();
        let mut deg = vec![1.0f64; n]; // self-loop contributes 1 to every row
        for &(u, v) in g.edges() {
            deg[u as usize] += 1.0;
            deg[v as usize] += 1.0;
        }
        let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
        let off: Vec<(usize, usize, f64)> = g
            .edges()
            .iter()
            .map(|&(u, v)| {
                let (u, v) = (u as usize, v as usize);
                (u, v, inv_sqrt[u] * inv_sqrt[v])
            })
            .collect();
        let diag: Vec<f64> = inv_sqrt.iter().map(|s| s * s).collect();
        NormalizedAdjacency { matrix: Arc::new(SparseSym::from_upper(n, &off, &diag)) }
    }

    /// Normalize a weighted symmetric adjacency given as strictly-upper
    /// entries plus an explicit diagonal (the self-affinity of condensed
    /// graphs). The self-loop `+ I` is applied on top, matching the dense
    /// training-time operator.
    pub fn from_weighted(n: usize, off_diag: &[(usize, usize, f64)], diag: &[f64]) -> Self {
        let mut deg: Vec<f64> = diag.iter().map(|d| d + 1.0).collect();
        for &(u, v, w) in off_diag {
            deg[u] += w;
            deg[v] += w;
        }
        let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
        let off: Vec<(usize, usize, f64)> = off_diag
            .iter()
            .map(|&(u, v, w)| (u, v, w * inv_sqrt[u] * inv_sqrt[v]))
            .collect();
        let new_diag: Vec<f64> = diag
            .iter()
            .zip(&inv_sqrt)
            .map(|(d, s)| (d + 1.0) * s * s)
            .collect();
        NormalizedAdjacency { matrix: Arc::new(SparseSym::from_upper(n, &off, &new_diag)) }
    }

    /// Identity operator: propagation-free training (features-only protocols).
    pub fn identity(n: usize) -> Self {
        NormalizedAdjacency { matrix: Arc::new(SparseSym::identity(n)) }
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn matrix(&self) -> &Arc<SparseSym> {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        self.matrix.matmul_dense(x)
    }

    pub fn register(&self, tape: &mut Tape) -> usize {
        tape.register_matrix(Arc::clone(&self.matrix))
    }
}

/// Differentiable normalization of a dense non-negative adjacency on the
/// tape: rsqrt degrees of A + I, then the rank-1 scaling (s s^T) ⊙ (A + I).
pub fn normalize_dense_traced(tape: &mut Tape, adj: Val) -> Result<Val, DiffError> {
    let n = tape.value(adj).rows();
    let eye = tape.constant(Tensor::eye(n));
    let a_loop = tape.add(adj, eye)?;
    let deg = tape.row_sum(a_loop)?;
    let s = tape.rsqrt(deg)?;
    let st = tape.transpose(s)?;
    let outer = tape.matmul(s, st)?;
    tape.mul(a_loop, outer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SplitSets;

    fn path_graph() -> LabeledGraph {
        // 0 - 1 - 2, plus isolated node 3
        let feats = Tensor::zeros(4, 1);
        LabeledGraph::new(
            feats,
            vec![0, 0, 0, 0],
            vec![(0, 1), (1, 2)],
            1,
            SplitSets { train: vec![0], ..Default::default() },
        )
        .unwrap()
    }

    #[test]
    fn diagonal_is_one_over_degree_plus_one() {
        let g = path_graph();
        let a = NormalizedAdjacency::from_graph(&g);
        let deg = g.degrees();
        for i in 0..4 {
            let expect = 1.0 / (deg[i] as f64 + 1.0);
            assert!((a.get(i, i) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn isolated_node_needs_no_special_case() {
        let a = NormalizedAdjacency::from_graph(&path_graph());
        assert_eq!(a.get(3, 3), 1.0);
        assert_eq!(a.get(3, 0), 0.0);
    }

    #[test]
    fn output_is_symmetric() {
        let a = NormalizedAdjacency::from_graph(&path_graph());
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(a.get(i, j), a.get(j, i));
            }
        }
    }

    #[test]
    fn matches_dense_oracle() {
        // independent dense computation of D^{-1/2}(A+I)D^{-1/2}
        let g = path_graph();
        let norm = NormalizedAdjacency::from_graph(&g);
        let n = 4;
        let mut dense = vec![vec![0.0f64; n]; n];
        for &(u, v) in g.edges() {
            dense[u as usize][v as usize] = 1.0;
            dense[v as usize][u as usize] = 1.0;
        }
        for (i, row) in dense.iter_mut().enumerate() {
            row[i] += 1.0;
        }
        let deg: Vec<f64> = dense.iter().map(|r| r.iter().sum()).collect();
        for i in 0..n {
            for j in 0..n {
                let expect = dense[i][j] / (deg[i].sqrt() * deg[j].sqrt());
                assert!((norm.get(i, j) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn traced_dense_agrees_with_sparse_on_same_matrix() {
        // weighted 3-node adjacency with unit self-affinity
        let off = [(0usize, 1usize, 0.7f64), (1, 2, 0.2)];
        let diag = [1.0, 1.0, 1.0];
        let sparse = NormalizedAdjacency::from_weighted(3, &off, &diag);

        let mut dense = Tensor::eye(3);
        for &(u, v, w) in &off {
            dense.set(u, v, w);
            dense.set(v, u, w);
        }
        let mut tape = Tape::new();
        let a = tape.var(dense);
        let norm = normalize_dense_traced(&mut tape, a).unwrap();
        let nv = tape.value(norm);
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (nv.get(i, j) - sparse.get(i, j)).abs() < 1e-14,
                    "entry ({i},{j}) disagrees between dense and sparse paths"
                );
            }
        }
    }

    #[test]
    fn traced_normalization_is_differentiable() {
        let mut tape = Tape::new();
        let a = tape.var(Tensor::new(2, 2, vec![1.0, 0.5, 0.5, 1.0]).unwrap());
        let norm = normalize_dense_traced(&mut tape, a).unwrap();
        let s = tape.sum_all(norm).unwrap();
        let g = tape.grad(s, &[a]).unwrap()[0];
        assert!(tape.value(g).all_finite());

        let f = |x: &Tensor| {
            let mut t = Tape::new();
            let av = t.var(x.clone());
            let nv = normalize_dense_traced(&mut t, av).unwrap();
            let sv = t.sum_all(nv).unwrap();
            t.value(sv).item()
        };
        let x0 = Tensor::new(2, 2, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        let numeric = crate::diff::fd::central_diff(&f, &x0, 1e-6);
        assert!(crate::diff::fd::rel_err(tape.value(g), &numeric) < 1e-8);
    }
}
