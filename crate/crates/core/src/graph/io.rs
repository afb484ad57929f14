//! On-disk formats.
//!
//! Dataset directory: `meta.json`, `edges.tsv` (u TAB v, one per line),
//! `features.tsv` (one row per node), `labels.tsv`, `splits.json`.
//!
//! Condensed directory: `features.tsv`, `labels.tsv`, `adj.tsv`
//! (i TAB j TAB w, strictly upper triangle, only entries at or above the
//! sparsification threshold), optional `phi.json` with the adjacency
//! generator weights, and `meta.json`.
//!
//! Floats are written with Rust's shortest-roundtrip formatting, so writing
//! is deterministic and reading recovers the exact bits.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::Tensor;
use crate::graph::{GraphError, LabeledGraph, SplitSets};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: expected {expected}, got {got:?}")]
    Malformed {
        path: String,
        line: usize,
        expected: &'static str,
        got: String,
    },
    #[error("{path}: expected {expected} rows, found {found}")]
    RowCount {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("{path}: unsupported format_version {0}", .found)]
    Version { path: String, found: u32 },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
    pub format_version: u32,
}

/// Parse/cleanup counters reported alongside a loaded graph.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct LoadStats {
    pub deduplicated_edges: usize,
    pub dropped_self_loops: usize,
}

fn read_to_string(path: &Path) -> Result<String, LoadError> {
    fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), LoadError> {
    fs::write(path, contents).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_json<T: for<'a> Deserialize<'a>>(path: &Path) -> Result<T, LoadError> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|source| LoadError::Json {
        path: path.display().to_string(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), LoadError> {
    let text = serde_json::to_string_pretty(value).expect("serialization cannot fail");
    write_file(path, &text)
}

fn malformed(path: &Path, line: usize, expected: &'static str, got: &str) -> LoadError {
    LoadError::Malformed {
        path: path.display().to_string(),
        line,
        expected,
        got: got.to_string(),
    }
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64, LoadError> {
    tok.parse::<f64>()
        .map_err(|_| malformed(path, line, "real number", tok))
}

fn parse_u32(path: &Path, line: usize, tok: &str) -> Result<u32, LoadError> {
    tok.parse::<u32>()
        .map_err(|_| malformed(path, line, "non-negative integer", tok))
}

/// Load a dataset directory into a validated graph plus cleanup counters.
pub fn load_graph(dir: &Path) -> Result<(LabeledGraph, LoadStats), LoadError> {
    let meta_path = dir.join("meta.json");
    let meta: DatasetMeta = parse_json(&meta_path)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(LoadError::Version {
            path: meta_path.display().to_string(),
            found: meta.format_version,
        });
    }

    let feat_path = dir.join("features.tsv");
    let mut features = Tensor::zeros(meta.num_nodes, meta.num_features);
    let text = read_to_string(&feat_path)?;
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if rows >= meta.num_nodes {
            rows += 1;
            continue;
        }
        let toks: Vec<&str> = line.split('\t').collect();
        if toks.len() != meta.num_features {
            return Err(malformed(&feat_path, lineno + 1, "num_features columns", line));
        }
        for (j, tok) in toks.iter().enumerate() {
            features.set(rows, j, parse_f64(&feat_path, lineno + 1, tok)?);
        }
        rows += 1;
    }
    if rows != meta.num_nodes {
        return Err(LoadError::RowCount {
            path: feat_path.display().to_string(),
            expected: meta.num_nodes,
            found: rows,
        });
    }

    let label_path = dir.join("labels.tsv");
    let text = read_to_string(&label_path)?;
    let mut labels = Vec::with_capacity(meta.num_nodes);
    for (lineno, line) in text.lines().enumerate() {
        labels.push(parse_u32(&label_path, lineno + 1, line.trim())?);
    }
    if labels.len() != meta.num_nodes {
        return Err(LoadError::RowCount {
            path: label_path.display().to_string(),
            expected: meta.num_nodes,
            found: labels.len(),
        });
    }

    let edge_path = dir.join("edges.tsv");
    let text = read_to_string(&edge_path)?;
    let mut stats = LoadStats::default();
    let mut edges: Vec<(u32, u32)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut it = line.split('\t');
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(malformed(&edge_path, lineno + 1, "u<TAB>v", line));
        };
        let u = parse_u32(&edge_path, lineno + 1, a)?;
        let v = parse_u32(&edge_path, lineno + 1, b)?;
        if u == v {
            stats.dropped_self_loops += 1;
            continue;
        }
        edges.push(if u < v { (u, v) } else { (v, u) });
    }
    edges.sort_unstable();
    let before = edges.len();
    edges.dedup();
    stats.deduplicated_edges = before - edges.len();

    let split: SplitSets = parse_json(&dir.join("splits.json"))?;
    let graph = LabeledGraph::new(features, labels, edges, meta.num_classes, split)?;
    Ok((graph, stats))
}

fn tsv_row(vals: impl Iterator<Item = f64>) -> String {
    vals.map(|v| v.to_string()).collect::<Vec<_>>().join("\t")
}

/// Write a dataset directory in the load format.
pub fn save_graph(dir: &Path, g: &LabeledGraph) -> Result<(), LoadError> {
    fs::create_dir_all(dir).map_err(|source| LoadError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write_json(
        &dir.join("meta.json"),
        &DatasetMeta {
            num_nodes: g.num_nodes(),
            num_features: g.num_features(),
            num_classes: g.num_classes(),
            format_version: FORMAT_VERSION,
        },
    )?;
    let mut feats = String::new();
    for i in 0..g.num_nodes() {
        feats.push_str(&tsv_row(g.features().row_slice(i).iter().copied()));
        feats.push('\n');
    }
    write_file(&dir.join("features.tsv"), &feats)?;

    let mut labels = String::new();
    for &y in g.labels() {
        labels.push_str(&y.to_string());
        labels.push('\n');
    }
    write_file(&dir.join("labels.tsv"), &labels)?;

    let mut edges = String::new();
    for &(u, v) in g.edges() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    write_file(&dir.join("edges.tsv"), &edges)?;

    write_json(&dir.join("splits.json"), g.split())
}

// ─── condensed artifacts ───

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MatrixJson {
    pub shape: [usize; 2],
    pub data: Vec<Vec<f64>>,
}

impl MatrixJson {
    pub fn from_tensor(t: &Tensor) -> Self {
        MatrixJson {
            shape: [t.rows(), t.cols()],
            data: (0..t.rows()).map(|i| t.row_slice(i).to_vec()).collect(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor, GraphError> {
        let mut flat = Vec::with_capacity(self.shape[0] * self.shape[1]);
        for row in &self.data {
            if row.len() != self.shape[1] {
                return Err(GraphError::InvalidParams(
                    "matrix row length disagrees with declared shape".into(),
                ));
            }
            flat.extend_from_slice(row);
        }
        Tensor::new(self.shape[0], self.shape[1], flat)
            .map_err(|e| GraphError::InvalidParams(e.to_string()))
    }
}

/// Adjacency-generator weights as stored in `phi.json`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PhiJson {
    pub hidden: usize,
    pub w1: MatrixJson,
    pub b1: MatrixJson,
    pub w2: MatrixJson,
    pub b2: MatrixJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CondensedMeta {
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
    pub format_version: u32,
    pub threshold: f64,
}

/// A condensed graph as written to disk: synthetic features and labels, the
/// thresholded weighted adjacency, and (when produced by condensation rather
/// than a coreset) the generator weights.
#[derive(Debug, Clone)]
pub struct CondensedArtifact {
    pub features: Tensor,
    pub labels: Vec<u32>,
    /// Strictly-upper weighted entries at or above `threshold`.
    pub adjacency: Vec<(u32, u32, f64)>,
    pub phi: Option<PhiJson>,
    pub num_classes: usize,
    pub threshold: f64,
}

impl CondensedArtifact {
    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }
}

pub fn save_condensed(dir: &Path, art: &CondensedArtifact) -> Result<(), LoadError> {
    fs::create_dir_all(dir).map_err(|source| LoadError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write_json(
        &dir.join("meta.json"),
        &CondensedMeta {
            num_nodes: art.num_nodes(),
            num_features: art.features.cols(),
            num_classes: art.num_classes,
            format_version: FORMAT_VERSION,
            threshold: art.threshold,
        },
    )?;
    let mut feats = String::new();
    for i in 0..art.num_nodes() {
        feats.push_str(&tsv_row(art.features.row_slice(i).iter().copied()));
        feats.push('\n');
    }
    write_file(&dir.join("features.tsv"), &feats)?;

    let mut labels = String::new();
    for &y in &art.labels {
        labels.push_str(&y.to_string());
        labels.push('\n');
    }
    write_file(&dir.join("labels.tsv"), &labels)?;

    let mut adj = String::new();
    for &(i, j, w) in &art.adjacency {
        adj.push_str(&format!("{i}\t{j}\t{w}\n"));
    }
    write_file(&dir.join("adj.tsv"), &adj)?;

    if let Some(phi) = &art.phi {
        write_json(&dir.join("phi.json"), phi)?;
    }
    Ok(())
}

pub fn load_condensed(dir: &Path) -> Result<CondensedArtifact, LoadError> {
    let meta_path = dir.join("meta.json");
    let meta: CondensedMeta = parse_json(&meta_path)?;
    if meta.format_version != FORMAT_VERSION {
        return Err(LoadError::Version {
            path: meta_path.display().to_string(),
            found: meta.format_version,
        });
    }

    let feat_path = dir.join("features.tsv");
    let text = read_to_string(&feat_path)?;
    let mut features = Tensor::zeros(meta.num_nodes, meta.num_features);
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if rows >= meta.num_nodes {
            return Err(LoadError::RowCount {
                path: feat_path.display().to_string(),
                expected: meta.num_nodes,
                found: rows + 1,
            });
        }
        let toks: Vec<&str> = line.split('\t').collect();
        if toks.len() != meta.num_features {
            return Err(malformed(&feat_path, lineno + 1, "num_features columns", line));
        }
        for (j, tok) in toks.iter().enumerate() {
            features.set(rows, j, parse_f64(&feat_path, lineno + 1, tok)?);
        }
        rows += 1;
    }
    if rows != meta.num_nodes {
        return Err(LoadError::RowCount {
            path: feat_path.display().to_string(),
            expected: meta.num_nodes,
            found: rows,
        });
    }

    let label_path = dir.join("labels.tsv");
    let text = read_to_string(&label_path)?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        labels.push(parse_u32(&label_path, lineno + 1, line.trim())?);
    }
    if labels.len() != meta.num_nodes {
        return Err(LoadError::RowCount {
            path: label_path.display().to_string(),
            expected: meta.num_nodes,
            found: labels.len(),
        });
    }

    let adj_path = dir.join("adj.tsv");
    let text = read_to_string(&adj_path)?;
    let mut adjacency = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split('\t').collect();
        if toks.len() != 3 {
            return Err(malformed(&adj_path, lineno + 1, "i<TAB>j<TAB>w", line));
        }
        let i = parse_u32(&adj_path, lineno + 1, toks[0])?;
        let j = parse_u32(&adj_path, lineno + 1, toks[1])?;
        let w = parse_f64(&adj_path, lineno + 1, toks[2])?;
        if i >= j {
            return Err(malformed(&adj_path, lineno + 1, "strictly upper entry (i < j)", line));
        }
        adjacency.push((i, j, w));
    }

    let phi_path = dir.join("phi.json");
    let phi = if phi_path.exists() {
        Some(parse_json::<PhiJson>(&phi_path)?)
    } else {
        None
    };

    Ok(CondensedArtifact {
        features,
        labels,
        adjacency,
        phi,
        num_classes: meta.num_classes,
        threshold: meta.threshold,
    })
}

/// Total size in bytes of the files in a condensed directory; the storage
/// figure quoted in reports.
pub fn dir_size_bytes(dir: &Path) -> std::io::Result<u64> {
    let mut total = 0;
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            total += entry.metadata()?.len();
        }
    }
    Ok(total)
}

/// Convenience writer used by tests and the data generator CLI.
pub fn write_raw(path: &Path, contents: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::sbm::{generate_sbm, SbmParams};

    fn tiny_params() -> SbmParams {
        SbmParams {
            classes: 2,
            per_class: 10,
            p_in: 0.6,
            p_out: 0.1,
            feature_dim: 4,
            separation: 1.0,
            noise: 0.5,
            train_frac: 0.6,
            val_frac: 0.2,
            seed: 11,
        }
    }

    #[test]
    fn graph_round_trip_is_identity() {
        let g = generate_sbm(&tiny_params()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_graph(dir.path(), &g).unwrap();
        let (g2, stats) = load_graph(dir.path()).unwrap();
        assert_eq!(g, g2);
        assert_eq!(stats, LoadStats::default());
    }

    #[test]
    fn save_is_byte_deterministic() {
        let g = generate_sbm(&tiny_params()).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_graph(d1.path(), &g).unwrap();
        save_graph(d2.path(), &g).unwrap();
        for name in ["meta.json", "features.tsv", "labels.tsv", "edges.tsv", "splits.json"] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical saves");
        }
    }

    #[test]
    fn load_reports_dedup_and_self_loops() {
        let g = generate_sbm(&tiny_params()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_graph(dir.path(), &g).unwrap();
        // append a reversed duplicate of the first edge and a self-loop
        let (u, v) = g.edges()[0];
        let extra = format!("{v}\t{u}\n3\t3\n");
        let edge_path = dir.path().join("edges.tsv");
        let mut text = std::fs::read_to_string(&edge_path).unwrap();
        text.push_str(&extra);
        std::fs::write(&edge_path, text).unwrap();
        let (g2, stats) = load_graph(dir.path()).unwrap();
        assert_eq!(g2.edges(), g.edges());
        assert_eq!(stats, LoadStats { deduplicated_edges: 1, dropped_self_loops: 1 });
    }

    #[test]
    fn malformed_feature_names_file_and_line() {
        let g = generate_sbm(&tiny_params()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_graph(dir.path(), &g).unwrap();
        let feat_path = dir.path().join("features.tsv");
        let mut lines: Vec<String> = std::fs::read_to_string(&feat_path)
            .unwrap()
            .lines()
            .map(String::from)
            .collect();
        lines[2] = "not\ta\tnumber\there".into();
        std::fs::write(&feat_path, lines.join("\n") + "\n").unwrap();
        let err = load_graph(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("features.tsv:3"), "error should name file and line: {msg}");
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let g = generate_sbm(&tiny_params()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_graph(dir.path(), &g).unwrap();
        let label_path = dir.path().join("labels.tsv");
        let mut lines: Vec<String> = std::fs::read_to_string(&label_path)
            .unwrap()
            .lines()
            .map(String::from)
            .collect();
        lines[0] = "9".into();
        std::fs::write(&label_path, lines.join("\n") + "\n").unwrap();
        assert!(matches!(
            load_graph(dir.path()).unwrap_err(),
            LoadError::Graph(GraphError::LabelOutOfRange(9, 0, 2))
        ));
    }

    #[test]
    fn condensed_round_trip_is_lossless() {
        let features = Tensor::new(3, 2, vec![0.1, -0.2, 0.33333, 4.0, 1e-7, 2.5]).unwrap();
        let phi = PhiJson {
            hidden: 2,
            w1: MatrixJson::from_tensor(&Tensor::new(4, 2, vec![0.1; 8]).unwrap()),
            b1: MatrixJson::from_tensor(&Tensor::zeros(1, 2)),
            w2: MatrixJson::from_tensor(&Tensor::new(2, 1, vec![0.5, -0.5]).unwrap()),
            b2: MatrixJson::from_tensor(&Tensor::zeros(1, 1)),
        };
        let art = CondensedArtifact {
            features: features.clone(),
            labels: vec![0, 1, 0],
            adjacency: vec![(0, 1, 0.73), (0, 2, 0.51)],
            phi: Some(phi.clone()),
            num_classes: 2,
            threshold: 0.5,
        };
        let dir = tempfile::tempdir().unwrap();
        save_condensed(dir.path(), &art).unwrap();
        let art2 = load_condensed(dir.path()).unwrap();
        assert_eq!(art2.features, features);
        assert_eq!(art2.labels, art.labels);
        assert_eq!(art2.adjacency, art.adjacency);
        assert_eq!(art2.phi, Some(phi));
        assert_eq!(art2.threshold, 0.5);
    }

    #[test]
    fn condensed_rejects_lower_triangle_entries() {
        let art = CondensedArtifact {
            features: Tensor::zeros(2, 1),
            labels: vec![0, 0],
            adjacency: vec![],
            phi: None,
            num_classes: 1,
            threshold: 0.5,
        };
        let dir = tempfile::tempdir().unwrap();
        save_condensed(dir.path(), &art).unwrap();
        std::fs::write(dir.path().join("adj.tsv"), "1\t0\t0.7\n").unwrap();
        let err = load_condensed(dir.path()).unwrap_err();
        assert!(err.to_string().contains("adj.tsv:1"));
    }

    #[test]
    fn dir_size_counts_files() {
        let dir = tempfile::tempdir().unwrap();
        write_raw(&dir.path().join("a.txt"), "12345").unwrap();
        write_raw(&dir.path().join("b.txt"), "678").unwrap();
        assert_eq!(dir_size_bytes(dir.path()).unwrap(), 8);
    }
}
