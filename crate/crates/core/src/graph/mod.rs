//! Labeled-graph data model shared by every stage of the pipeline.

pub mod adjacency;
pub mod io;
pub mod sbm;

use thiserror::Error;

use crate::diff::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    EdgeOutOfRange(u32, u32, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(u32),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(u32, u32),
    #[error("label {0} at node {1} out of range for {2} classes")]
    LabelOutOfRange(u32, usize, usize),
    #[error("labels length {0} does not match {1} nodes")]
    LabelCount(usize, usize),
    #[error("split index {0} out of range for {1} nodes")]
    SplitOutOfRange(u32, usize),
    #[error("node {0} appears in more than one split")]
    SplitOverlap(u32),
    #[error("train split is empty")]
    EmptyTrain,
    #[error("non-finite feature at node {0}, column {1}")]
    NonFiniteFeature(usize, usize),
    #[error("feature matrix has {0} rows for {1} nodes")]
    FeatureRows(usize, usize),
    #[error("{0}")]
    InvalidParams(String),
}

/// Disjoint train / validation / test node index sets. Validation and test
/// may be empty; train may not.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitSets {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

/// Undirected simple graph with node features, labels, and a split.
/// Edges are stored once as (u, v) with u < v, sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGraph {
    num_classes: usize,
    features: Tensor,
    labels: Vec<u32>,
    edges: Vec<(u32, u32)>,
    split: SplitSets,
}

impl LabeledGraph {
    pub fn new(
        features: Tensor,
        labels: Vec<u32>,
        mut edges: Vec<(u32, u32)>,
        num_classes: usize,
        split: SplitSets,
    ) -> Result<Self, GraphError> {
        let n = features.rows();
        if labels.len() != n {
            return Err(GraphError::LabelCount(labels.len(), n));
        }
        for i in 0..n {
            for j in 0..features.cols() {
                if !features.get(i, j).is_finite() {
                    return Err(GraphError::NonFiniteFeature(i, j));
                }
            }
        }
        for (i, &y) in labels.iter().enumerate() {
            if y as usize >= num_classes {
                return Err(GraphError::LabelOutOfRange(y, i, num_classes));
            }
        }
        for e in edges.iter_mut() {
            if e.0 == e.1 {
                return Err(GraphError::SelfLoop(e.0));
            }
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
            if e.1 as usize >= n {
                return Err(GraphError::EdgeOutOfRange(e.0, e.1, n));
            }
        }
        edges.sort_unstable();
        for w in edges.windows(2) {
            if w[0] == w[1] {
                return Err(GraphError::DuplicateEdge(w[0].0, w[0].1));
            }
        }
        let mut seen = vec![false; n];
        for &i in split.train.iter().chain(&split.val).chain(&split.test) {
            if i as usize >= n {
                return Err(GraphError::SplitOutOfRange(i, n));
            }
            if seen[i as usize] {
                return Err(GraphError::SplitOverlap(i));
            }
            seen[i as usize] = true;
        }
        if split.train.is_empty() {
            return Err(GraphError::EmptyTrain);
        }
        Ok(LabeledGraph { num_classes, features, labels, edges, split })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn split(&self) -> &SplitSets {
        &self.split
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0usize; self.num_nodes()];
        for &(u, v) in &self.edges {
            d[u as usize] += 1;
            d[v as usize] += 1;
        }
        d
    }

    /// Train node indices carrying class `c`.
    pub fn train_nodes_of_class(&self, c: u32) -> Vec<usize> {
        self.split
            .train
            .iter()
            .filter(|&&i| self.labels[i as usize] == c)
            .map(|&i| i as usize)
            .collect()
    }

    /// Histogram of labels over the train split.
    pub fn train_label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0usize; self.num_classes];
        for &i in &self.split.train {
            h[self.labels[i as usize] as usize] += 1;
        }
        h
    }

    /// Subgraph induced by `nodes` (kept in the given order); edges are
    /// remapped, all retained nodes become train nodes.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<LabeledGraph, GraphError> {
        let mut remap = vec![usize::MAX; self.num_nodes()];
        for (new, &old) in nodes.iter().enumerate() {
            remap[old] = new;
        }
        let d = self.num_features();
        let mut feats = Tensor::zeros(nodes.len(), d);
        let mut labels = Vec::with_capacity(nodes.len());
        for (new, &old) in nodes.iter().enumerate() {
            for j in 0..d {
                feats.set(new, j, self.features.get(old, j));
            }
            labels.push(self.labels[old]);
        }
        let mut edges = Vec::new();
        for &(u, v) in &self.edges {
            let (nu, nv) = (remap[u as usize], remap[v as usize]);
            if nu != usize::MAX && nv != usize::MAX {
                edges.push((nu as u32, nv as u32));
            }
        }
        let split = SplitSets {
            train: (0..nodes.len() as u32).collect(),
            val: vec![],
            test: vec![],
        };
        LabeledGraph::new(feats, labels, edges, self.num_classes, split)
    }
}

/// Split a budget of `total` slots across classes proportionally to
/// `histogram`, guaranteeing at least one slot per non-empty class; the
/// leftover after flooring goes to the largest fractional remainders, ties to
/// the lower class index.
pub fn proportional_counts(histogram: &[usize], total: usize) -> Result<Vec<usize>, GraphError> {
    let classes = histogram.iter().filter(|&&h| h > 0).count();
    if classes == 0 {
        return Err(GraphError::InvalidParams("no represented classes".into()));
    }
    if total < classes {
        return Err(GraphError::InvalidParams(format!(
            "budget {total} is below the {classes} represented classes"
        )));
    }
    let pop: usize = histogram.iter().sum();
    let mut counts = vec![0usize; histogram.len()];
    let mut fracs: Vec<(usize, f64)> = Vec::new();
    let mut used = 0usize;
    for (c, &h) in histogram.iter().enumerate() {
        if h == 0 {
            continue;
        }
        let ideal = total as f64 * h as f64 / pop as f64;
        let floor = (ideal.floor() as usize).max(1);
        counts[c] = floor;
        used += floor;
        fracs.push((c, ideal - ideal.floor()));
    }
    // stable tie handling: larger remainder wins, then lower class index
    fracs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut k = 0;
    while used < total {
        let (c, _) = fracs[k % fracs.len()];
        counts[c] += 1;
        used += 1;
        k += 1;
    }
    while used > total {
        // over-allocation can only come from the >=1 floor on tiny classes;
        // trim from the most over-represented classes, never below 1
        let (c, _) = counts
            .iter()
            .enumerate()
            .filter(|&(c, &n)| n > 1 && histogram[c] > 0)
            .map(|(c, &n)| (c, n as f64 / histogram[c] as f64))
            .fold((usize::MAX, f64::MIN), |best, (c, over)| {
                if over > best.1 {
                    (c, over)
                } else {
                    best
                }
            });
        counts[c] -= 1;
        used -= 1;
    }
    Ok(counts)
}
