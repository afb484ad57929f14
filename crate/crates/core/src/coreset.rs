//! Selection baselines that keep real nodes instead of synthesizing them:
//! stratified random sampling, feature-space herding, and greedy k-center.
//! All three spend the same per-class budget as synthetic initialization and
//! draw only from the train split.

use rand::Rng;

use crate::diff::Tensor;
use crate::graph::io::CondensedArtifact;
use crate::graph::{proportional_counts, GraphError, LabeledGraph};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoresetMethod {
    Random,
    Herding,
    KCenter,
}

impl std::fmt::Display for CoresetMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CoresetMethod::Random => "random",
            CoresetMethod::Herding => "herding",
            CoresetMethod::KCenter => "kcenter",
        })
    }
}

/// Selected train-node indices, grouped by class in class order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoresetResult {
    pub per_class: Vec<Vec<usize>>,
    pub method: CoresetMethod,
}

impl CoresetResult {
    /// All selected nodes, class-contiguous.
    pub fn nodes(&self) -> Vec<usize> {
        self.per_class.iter().flatten().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.per_class.iter().map(|v| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Induced subgraph of the selection in condensed-artifact form: real
    /// features and labels, mutual edges at weight 1, no generator. Nodes are
    /// written in ascending id order, so a ratio-1 selection reproduces the
    /// train split byte for byte.
    pub fn to_artifact(&self, g: &LabeledGraph) -> Result<CondensedArtifact, GraphError> {
        let mut nodes = self.nodes();
        nodes.sort_unstable();
        let sub = g.induced_subgraph(&nodes)?;
        Ok(CondensedArtifact {
            features: sub.features().clone(),
            labels: sub.labels().to_vec(),
            adjacency: sub.edges().iter().map(|&(u, v)| (u, v, 1.0)).collect(),
            phi: None,
            num_classes: g.num_classes(),
            threshold: 0.0,
        })
    }
}

/// Per-class budgets for `ratio`, by the same proportional rule synthetic
/// initialization uses.
fn class_budgets(g: &LabeledGraph, ratio: f64) -> Result<Vec<usize>, GraphError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(GraphError::InvalidParams(format!(
            "ratio {ratio} outside (0, 1]"
        )));
    }
    let total = (ratio * g.split().train.len() as f64).floor() as usize;
    proportional_counts(&g.train_label_histogram(), total)
}

/// Class pool in ascending node order, so index ties resolve to the lower
/// node id in every method.
fn sorted_pool(g: &LabeledGraph, c: u32) -> Vec<usize> {
    let mut pool = g.train_nodes_of_class(c);
    pool.sort_unstable();
    pool
}

fn euclidean(f: &Tensor, a: usize, b: usize) -> f64 {
    f.row_slice(a)
        .iter()
        .zip(f.row_slice(b))
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Seeded stratified sample: each class contributes a uniform subset of its
/// budgeted size.
pub fn random_select(
    g: &LabeledGraph,
    ratio: f64,
    seed: u64,
) -> Result<CoresetResult, GraphError> {
    let counts = class_budgets(g, ratio)?;
    let mut rng = stream(seed, tag::CORESET);
    let mut per_class = Vec::with_capacity(counts.len());
    for c in 0..g.num_classes() as u32 {
        let mut pool = sorted_pool(g, c);
        let take = counts[c as usize];
        // partial Fisher-Yates: the first `take` entries are the sample
        for i in 0..take {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(take);
        per_class.push(pool);
    }
    Ok(CoresetResult { per_class, method: CoresetMethod::Random })
}

/// Deterministic feature-space herding: per class, greedily add the point
/// that brings the running mean closest to the class mean.
pub fn herding_select(g: &LabeledGraph, ratio: f64) -> Result<CoresetResult, GraphError> {
    let counts = class_budgets(g, ratio)?;
    let f = g.features();
    let d = g.num_features();
    let mut per_class = Vec::with_capacity(counts.len());
    for c in 0..g.num_classes() as u32 {
        let pool = sorted_pool(g, c);
        let take = counts[c as usize];
        let mut mean = vec![0.0; d];
        for &i in &pool {
            for (m, &v) in mean.iter_mut().zip(f.row_slice(i)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= pool.len().max(1) as f64;
        }
        let mut used = vec![false; pool.len()];
        let mut sum = vec![0.0; d];
        let mut chosen = Vec::with_capacity(take);
        for t in 1..=take {
            let mut best: Option<(f64, usize)> = None;
            for (slot, &i) in pool.iter().enumerate() {
                if used[slot] {
                    continue;
                }
                let gap: f64 = mean
                    .iter()
                    .zip(&sum)
                    .zip(f.row_slice(i))
                    .map(|((&m, &s), &v)| {
                        let e = m - (s + v) / t as f64;
                        e * e
                    })
                    .sum::<f64>()
                    .sqrt();
                // strict < keeps ties on the lower node id
                if best.map_or(true, |(b, _)| gap < b) {
                    best = Some((gap, slot));
                }
            }
            let (_, slot) = best.expect("budget never exceeds the pool");
            used[slot] = true;
            for (s, &v) in sum.iter_mut().zip(f.row_slice(pool[slot])) {
                *s += v;
            }
            chosen.push(pool[slot]);
        }
        per_class.push(chosen);
    }
    Ok(CoresetResult { per_class, method: CoresetMethod::Herding })
}

/// Greedy k-center (2-approximation): per class, a seeded first center, then
/// repeatedly the point farthest from its nearest chosen center.
pub fn kcenter_select(
    g: &LabeledGraph,
    ratio: f64,
    seed: u64,
) -> Result<CoresetResult, GraphError> {
    let counts = class_budgets(g, ratio)?;
    let f = g.features();
    let mut rng = stream(seed, tag::CORESET);
    let mut per_class = Vec::with_capacity(counts.len());
    for c in 0..g.num_classes() as u32 {
        let pool = sorted_pool(g, c);
        let take = counts[c as usize];
        if take == 0 {
            per_class.push(Vec::new());
            continue;
        }
        let start = rng.gen_range(0..pool.len());
        let mut chosen = vec![pool[start]];
        let mut nearest: Vec<f64> =
            pool.iter().map(|&i| euclidean(f, i, pool[start])).collect();
        while chosen.len() < take {
            let mut far = (f64::NEG_INFINITY, usize::MAX);
            for (slot, &dist) in nearest.iter().enumerate() {
                // strict > keeps ties on the lower node id
                if dist > far.0 {
                    far = (dist, slot);
                }
            }
            let slot = far.1;
            chosen.push(pool[slot]);
            for (nd, &i) in nearest.iter_mut().zip(&pool) {
                *nd = nd.min(euclidean(f, i, pool[slot]));
            }
        }
        per_class.push(chosen);
    }
    Ok(CoresetResult { per_class, method: CoresetMethod::KCenter })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SplitSets;

    /// Single-feature graph: one node per value, labels and split explicit.
    fn toy(
        rows: &[(Vec<f64>, u32)],
        num_classes: usize,
        train: Vec<u32>,
        edges: Vec<(u32, u32)>,
    ) -> LabeledGraph {
        let d = rows[0].0.len();
        let mut f = Tensor::zeros(rows.len(), d);
        let mut labels = Vec::new();
        for (i, (row, y)) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                f.set(i, j, v);
            }
            labels.push(*y);
        }
        let split = SplitSets { train, val: vec![], test: vec![] };
        LabeledGraph::new(f, labels, edges, num_classes, split).unwrap()
    }

    fn all_train(rows: &[(Vec<f64>, u32)], num_classes: usize) -> LabeledGraph {
        toy(rows, num_classes, (0..rows.len() as u32).collect(), vec![])
    }

    #[test]
    fn random_is_deterministic_and_stays_in_the_train_split() {
        let rows: Vec<(Vec<f64>, u32)> = (0..12)
            .map(|i| (vec![i as f64, (i * i) as f64], (i % 3) as u32))
            .collect();
        // nodes 9..12 are held out of train; they must never be selected
        let g = toy(&rows, 3, (0..9).collect(), vec![]);
        let a = random_select(&g, 0.5, 7).unwrap();
        let b = random_select(&g, 0.5, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.nodes().iter().all(|&i| i < 9));
        assert_eq!(a.method, CoresetMethod::Random);
    }

    #[test]
    fn random_at_ratio_one_returns_the_whole_train_split() {
        let rows: Vec<(Vec<f64>, u32)> =
            (0..10).map(|i| (vec![i as f64], (i % 2) as u32)).collect();
        let g = all_train(&rows, 2);
        let mut got = random_select(&g, 1.0, 0).unwrap().nodes();
        got.sort_unstable();
        assert_eq!(got, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn random_counts_follow_the_proportional_rule() {
        // train histogram [5, 3, 2], budget floor(0.5 * 10) = 5:
        // ideals [2.5, 1.5, 1.0] floor to [2, 1, 1]; the leftover slot goes
        // to the larger remainder, tie to the lower class: [3, 1, 1]
        let mut rows: Vec<(Vec<f64>, u32)> = Vec::new();
        for (c, n) in [(0u32, 5), (1, 3), (2, 2)] {
            for k in 0..n {
                rows.push((vec![c as f64 * 10.0 + k as f64], c));
            }
        }
        let g = all_train(&rows, 3);
        let sel = random_select(&g, 0.5, 3).unwrap();
        let sizes: Vec<usize> = sel.per_class.iter().map(|v| v.len()).collect();
        assert_eq!(sizes, vec![3, 1, 1]);
    }

    #[test]
    fn herding_with_one_slot_takes_the_point_nearest_the_mean() {
        // collinear at 0, 1, 5: mean 2, nearest is node 1
        let rows = vec![
            (vec![0.0], 0u32),
            (vec![1.0], 0),
            (vec![5.0], 0),
            (vec![9.0], 1),
            (vec![9.0], 1),
            (vec![9.0], 1),
        ];
        let g = all_train(&rows, 2);
        let sel = herding_select(&g, 2.0 / 6.0).unwrap();
        assert_eq!(sel.per_class[0], vec![1]);
    }

    #[test]
    fn herding_at_full_budget_keeps_every_point() {
        let rows: Vec<(Vec<f64>, u32)> = (0..8)
            .map(|i| (vec![i as f64, -(i as f64)], (i % 2) as u32))
            .collect();
        let g = all_train(&rows, 2);
        let mut got = herding_select(&g, 1.0).unwrap().nodes();
        got.sort_unstable();
        assert_eq!(got, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn herding_matches_an_exhaustive_greedy_oracle() {
        let rows = vec![
            (vec![0.0, 0.0], 0u32),
            (vec![4.0, 0.0], 0),
            (vec![0.0, 3.0], 0),
            (vec![2.0, 2.0], 0),
            (vec![1.0, -1.0], 0),
        ];
        let g = all_train(&rows, 1);
        let sel = herding_select(&g, 2.0 / 5.0).unwrap();

        // oracle recomputes every candidate mean from scratch
        let pts: Vec<&[f64]> = (0..5).map(|i| g.features().row_slice(i)).collect();
        let mean = [
            pts.iter().map(|p| p[0]).sum::<f64>() / 5.0,
            pts.iter().map(|p| p[1]).sum::<f64>() / 5.0,
        ];
        let mut picked: Vec<usize> = Vec::new();
        for t in 1..=2usize {
            let (mut best, mut who) = (f64::INFINITY, usize::MAX);
            for i in 0..5 {
                if picked.contains(&i) {
                    continue;
                }
                let mut cand = picked.clone();
                cand.push(i);
                let mut gap = 0.0;
                for j in 0..2 {
                    let avg =
                        cand.iter().map(|&k| pts[k][j]).sum::<f64>() / t as f64;
                    gap += (mean[j] - avg) * (mean[j] - avg);
                }
                if gap < best {
                    best = gap;
                    who = i;
                }
            }
            picked.push(who);
        }
        assert_eq!(sel.per_class[0], picked);
    }

    #[test]
    fn herding_breaks_ties_toward_the_lower_node() {
        // nodes 0 and 1 are equidistant from the mean on opposite sides
        let rows = vec![(vec![-1.0], 0u32), (vec![1.0], 0), (vec![0.0], 0)];
        let g = toy(&rows, 1, vec![0, 1], vec![]);
        let sel = herding_select(&g, 0.5).unwrap();
        assert_eq!(sel.per_class[0], vec![0]);
    }

    #[test]
    fn kcenter_with_one_slot_returns_a_seeded_start() {
        let rows: Vec<(Vec<f64>, u32)> =
            (0..6).map(|i| (vec![i as f64], 0u32)).collect();
        let g = all_train(&rows, 1);
        let a = kcenter_select(&g, 1.0 / 6.0, 4).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a, kcenter_select(&g, 1.0 / 6.0, 4).unwrap());
        // over seeds the start point must actually vary
        let starts: std::collections::HashSet<usize> =
            (0..20).map(|s| kcenter_select(&g, 1.0 / 6.0, s).unwrap().nodes()[0]).collect();
        assert!(starts.len() > 1);
    }

    #[test]
    fn kcenter_on_a_square_picks_a_diagonal() {
        let rows = vec![
            (vec![0.0, 0.0], 0u32),
            (vec![0.0, 1.0], 0),
            (vec![1.0, 0.0], 0),
            (vec![1.0, 1.0], 0),
        ];
        let g = all_train(&rows, 1);
        for seed in 0..8 {
            let sel = kcenter_select(&g, 0.5, seed).unwrap();
            let n = sel.nodes();
            let (a, b) = (g.features().row_slice(n[0]), g.features().row_slice(n[1]));
            assert!(
                (a[0] - b[0]).abs() == 1.0 && (a[1] - b[1]).abs() == 1.0,
                "seed {seed}: {n:?} is not a diagonal"
            );
        }
    }

    #[test]
    fn kcenter_at_full_budget_keeps_every_point() {
        let rows: Vec<(Vec<f64>, u32)> =
            (0..8).map(|i| (vec![(i * i) as f64], 0u32)).collect();
        let g = all_train(&rows, 1);
        let mut got = kcenter_select(&g, 1.0, 0).unwrap().nodes();
        got.sort_unstable();
        assert_eq!(got, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn kcenter_radius_is_within_twice_the_brute_force_optimum() {
        for seed in 0..12u64 {
            let mut rng = stream(seed, 0x7e57);
            let n = 10;
            let rows: Vec<(Vec<f64>, u32)> = (0..n)
                .map(|_| (vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], 0u32))
                .collect();
            let g = all_train(&rows, 1);
            let k = 3;
            let sel = kcenter_select(&g, (k as f64 + 0.5) / n as f64, seed).unwrap();
            assert_eq!(sel.len(), k);

            let radius = |centers: &[usize]| -> f64 {
                (0..n)
                    .map(|i| {
                        centers
                            .iter()
                            .map(|&c| euclidean(g.features(), i, c))
                            .fold(f64::INFINITY, f64::min)
                    })
                    .fold(0.0, f64::max)
            };
            let got = radius(&sel.nodes());
            let mut best = f64::INFINITY;
            for a in 0..n {
                for b in a + 1..n {
                    for c in b + 1..n {
                        best = best.min(radius(&[a, b, c]));
                    }
                }
            }
            assert!(got <= 2.0 * best + 1e-12, "seed {seed}: {got} vs optimal {best}");
        }
    }

    #[test]
    fn artifact_is_the_induced_subgraph_at_unit_weight() {
        let rows = vec![
            (vec![0.0], 0u32),
            (vec![1.0], 0),
            (vec![2.0], 1),
            (vec![3.0], 1),
        ];
        // edges: 0-1 inside the selection, 1-2 straddling, 2-3 inside
        let g = toy(&rows, 2, vec![0, 1, 2, 3], vec![(0, 1), (1, 2), (2, 3)]);
        let sel = CoresetResult {
            per_class: vec![vec![0, 1], vec![3]],
            method: CoresetMethod::Random,
        };
        let art = sel.to_artifact(&g).unwrap();
        assert_eq!(art.num_nodes(), 3);
        assert_eq!(art.labels, vec![0, 0, 1]);
        assert_eq!(art.adjacency, vec![(0, 1, 1.0)]);
        assert!(art.phi.is_none());
        assert_eq!(art.features.get(2, 0), 3.0);
    }

    #[test]
    fn bad_ratio_is_rejected() {
        let rows = vec![(vec![0.0], 0u32), (vec![1.0], 0)];
        let g = all_train(&rows, 1);
        assert!(random_select(&g, 0.0, 0).is_err());
        assert!(herding_select(&g, 1.5).is_err());
    }
}
