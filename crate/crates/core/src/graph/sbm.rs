//! Stochastic block model generator for desk-scale experiments.
//!
//! Planted partition: `classes` equal blocks of `per_class` nodes; an edge
//! joins two nodes with probability `p_in` inside a block and `p_out` across
//! blocks. Class-c features are `separation` times an orthonormal random
//! direction, plus isotropic Gaussian noise, so structure and features carry
//! correlated but distinct signal. Splits are stratified per class.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::graph::{GraphError, LabeledGraph, SplitSets};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SbmParams {
    pub classes: usize,
    pub per_class: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub separation: f64,
    pub noise: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SbmParams {
    fn default() -> Self {
        SbmParams {
            classes: 3,
            per_class: 200,
            p_in: 0.3,
            p_out: 0.02,
            feature_dim: 16,
            separation: 1.0,
            noise: 1.0,
            train_frac: 0.6,
            val_frac: 0.2,
            seed: 0,
        }
    }
}

impl SbmParams {
    fn validate(&self) -> Result<(), GraphError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.p_in) || !prob(self.p_out) {
            return Err(GraphError::InvalidParams(
                "edge probabilities must lie in [0, 1]".into(),
            ));
        }
        if self.p_out > self.p_in {
            return Err(GraphError::InvalidParams(format!(
                "p_out {} exceeds p_in {}: no planted structure",
                self.p_out, self.p_in
            )));
        }
        if self.classes == 0 || self.per_class == 0 {
            return Err(GraphError::InvalidParams("classes and per_class must be positive".into()));
        }
        if self.feature_dim < self.classes {
            return Err(GraphError::InvalidParams(format!(
                "feature_dim {} cannot hold {} orthogonal class directions",
                self.feature_dim, self.classes
            )));
        }
        if !(0.0..=1.0).contains(&self.train_frac)
            || !(0.0..=1.0).contains(&self.val_frac)
            || self.train_frac + self.val_frac > 1.0
            || self.train_frac == 0.0
        {
            return Err(GraphError::InvalidParams(
                "split fractions must be in [0, 1], sum to at most 1, train positive".into(),
            ));
        }
        Ok(())
    }
}

/// Orthonormalize `k` random Gaussian directions in `d` dimensions.
fn orthonormal_directions(d: usize, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(k);
    while dirs.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for prev in &dirs {
            let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            for (vi, pi) in v.iter_mut().zip(prev) {
                *vi -= dot * pi;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue; // degenerate draw, resample
        }
        for vi in v.iter_mut() {
            *vi /= norm;
        }
        dirs.push(v);
    }
    dirs
}

pub fn generate_sbm(params: &SbmParams) -> Result<LabeledGraph, GraphError> {
    params.validate()?;
    let n = params.classes * params.per_class;
    let labels: Vec<u32> = (0..n)
        .map(|i| (i / params.per_class) as u32)
        .collect();

    let mut edge_rng = stream(params.seed, tag::SBM_EDGES);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if labels[u] == labels[v] { params.p_in } else { params.p_out };
            if edge_rng.gen::<f64>() < p {
                edges.push((u as u32, v as u32));
            }
        }
    }

    let mut feat_rng = stream(params.seed, tag::SBM_FEATURES);
    let dirs = orthonormal_directions(params.feature_dim, params.classes, &mut feat_rng);
    let mut features = Tensor::zeros(n, params.feature_dim);
    for i in 0..n {
        let dir = &dirs[labels[i] as usize];
        for j in 0..params.feature_dim {
            let noise: f64 = StandardNormal.sample(&mut feat_rng);
            features.set(i, j, params.separation * dir[j] + params.noise * noise);
        }
    }

    let mut split_rng = stream(params.seed, tag::SBM_SPLIT);
    let mut split = SplitSets::default();
    for c in 0..params.classes {
        let mut ids: Vec<u32> = (0..params.per_class)
            .map(|k| (c * params.per_class + k) as u32)
            .collect();
        // Fisher-Yates so the split is uniform over permutations
        for i in (1..ids.len()).rev() {
            let j = split_rng.gen_range(0..=i);
            ids.swap(i, j);
        }
        let n_train = (params.per_class as f64 * params.train_frac).floor() as usize;
        let n_val = (params.per_class as f64 * params.val_frac).floor() as usize;
        split.train.extend(&ids[..n_train]);
        split.val.extend(&ids[n_train..n_train + n_val]);
        split.test.extend(&ids[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();

    LabeledGraph::new(features, labels, edges, params.classes, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_counts_are_exact() {
        let g = generate_sbm(&SbmParams { classes: 3, per_class: 40, ..Default::default() }).unwrap();
        let mut hist = [0usize; 3];
        for &y in g.labels() {
            hist[y as usize] += 1;
        }
        assert_eq!(hist, [40, 40, 40]);
    }

    #[test]
    fn same_seed_reproduces_graph() {
        let p = SbmParams { per_class: 30, seed: 42, ..Default::default() };
        assert_eq!(generate_sbm(&p).unwrap(), generate_sbm(&p).unwrap());
    }

    #[test]
    fn different_seed_changes_graph() {
        let a = generate_sbm(&SbmParams { per_class: 30, seed: 1, ..Default::default() }).unwrap();
        let b = generate_sbm(&SbmParams { per_class: 30, seed: 2, ..Default::default() }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn rejects_inverted_probabilities() {
        let err = generate_sbm(&SbmParams { p_in: 0.1, p_out: 0.5, ..Default::default() });
        assert!(matches!(err, Err(GraphError::InvalidParams(_))));
    }

    #[test]
    fn within_class_density_tracks_p_in() {
        // binomial concentration: mean density over 5 seeds within 20% of p_in
        let mut densities = Vec::new();
        for seed in 0..5 {
            let p = SbmParams { classes: 2, per_class: 50, p_in: 0.3, p_out: 0.05, seed, ..Default::default() };
            let g = generate_sbm(&p).unwrap();
            let within = g
                .edges()
                .iter()
                .filter(|&&(u, v)| g.labels()[u as usize] == g.labels()[v as usize])
                .count();
            let pairs = 2.0 * (50.0 * 49.0 / 2.0);
            densities.push(within as f64 / pairs);
        }
        let mean = densities.iter().sum::<f64>() / densities.len() as f64;
        assert!((mean - 0.3).abs() < 0.06, "mean within-class density {mean}");
    }

    #[test]
    fn directions_are_orthonormal() {
        let mut rng = stream(5, tag::SBM_FEATURES);
        let dirs = orthonormal_directions(8, 3, &mut rng);
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = dirs[i].iter().zip(&dirs[j]).map(|(a, b)| a * b).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let g = generate_sbm(&SbmParams { classes: 2, per_class: 20, ..Default::default() }).unwrap();
        let s = g.split();
        assert_eq!(s.train.len(), 24);
        assert_eq!(s.val.len(), 8);
        assert_eq!(s.test.len(), 8);
        for c in 0..2u32 {
            let in_train = s.train.iter().filter(|&&i| g.labels()[i as usize] == c).count();
            assert_eq!(in_train, 12);
        }
    }
}
