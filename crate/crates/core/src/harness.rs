//! Evaluation protocol: train a classifier on a condensed or selected graph,
//! score it on the real graph's test nodes, transfer across architectures,
//! and consolidate whole grids of runs into CSV/JSON reports.
//!
//! Testing is transductive: trained parameters always propagate over the full
//! real graph, whatever graph they were trained on.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coreset::{herding_select, kcenter_select, random_select};
use crate::diff::{DiffError, Tape, Tensor};
use crate::graph::adjacency::NormalizedAdjacency;
use crate::graph::io::{save_condensed, CondensedArtifact, LoadError};
use crate::graph::{GraphError, LabeledGraph};
use crate::matching::{condense, CondenseConfig, CondenseError, Mode};
use crate::models::{
    gcn_forward, sgc_forward, AdjRef, GcnParams, InitDistribution, InitKind, SgcParams,
    DEFAULT_GCN_HIDDEN, DEFAULT_SGC_POWER,
};
use crate::rng::{stream, tag};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Io(#[from] LoadError),
    #[error(transparent)]
    Condense(#[from] CondenseError),
    #[error("{0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gcn,
    Sgc,
    Mlp,
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Gcn => "gcn",
            Arch::Sgc => "sgc",
            Arch::Mlp => "mlp",
        })
    }
}

/// Whether training on a condensed graph uses its saved adjacency or an
/// identity matrix (the features-only protocol).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    WithStructure,
    FeaturesOnly,
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalMode::WithStructure => "with-structure",
            EvalMode::FeaturesOnly => "features-only",
        })
    }
}

/// Classifier settings, held fixed across methods within a comparison.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierHyper {
    pub epochs: usize,
    pub step_size: f64,
    pub hidden: usize,
    pub sgc_power: usize,
    pub use_bias: bool,
    pub init: InitKind,
}

impl Default for ClassifierHyper {
    fn default() -> Self {
        ClassifierHyper {
            epochs: 300,
            step_size: 0.2,
            hidden: DEFAULT_GCN_HIDDEN,
            sgc_power: DEFAULT_SGC_POWER,
            use_bias: false,
            init: InitKind::UniformGlorot,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassifierParams {
    TwoLayer(GcnParams),
    Linear(SgcParams),
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub arch: Arch,
    pub params: ClassifierParams,
    /// Training cross-entropy per epoch.
    pub trace: Vec<f64>,
}

fn init_params(
    arch: Arch,
    in_dim: usize,
    classes: usize,
    hyper: &ClassifierHyper,
    seed: u64,
) -> ClassifierParams {
    let dist = InitDistribution { kind: hyper.init, seed };
    match arch {
        Arch::Gcn | Arch::Mlp => ClassifierParams::TwoLayer(GcnParams::sample(
            &dist,
            in_dim,
            hyper.hidden,
            classes,
            hyper.use_bias,
            0,
        )),
        Arch::Sgc => {
            ClassifierParams::Linear(SgcParams::sample(&dist, in_dim, classes, hyper.sgc_power, 0))
        }
    }
}

/// Logits of `params` over `features`, propagating through `adj`. The MLP
/// path is realized by handing an identity operator in.
pub fn classifier_logits(
    adj: &NormalizedAdjacency,
    features: &Tensor,
    params: &ClassifierParams,
    use_bias: bool,
) -> Result<Tensor, DiffError> {
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let out = match params {
        ClassifierParams::TwoLayer(p) => {
            let pv = p.place(&mut tape, false);
            gcn_forward(&mut tape, AdjRef::Sparse(adj), x, &pv, use_bias)?
        }
        ClassifierParams::Linear(p) => {
            let pv = p.place(&mut tape, false);
            sgc_forward(&mut tape, AdjRef::Sparse(adj), x, &pv, p.power)?
        }
    };
    Ok(tape.value(out).clone())
}

/// Fraction of `nodes` whose argmax logit (ties to the lower class) matches
/// the label.
pub fn accuracy(logits: &Tensor, labels: &[u32], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let hits = nodes
        .iter()
        .filter(|&&i| {
            let row = logits.row_slice(i);
            let mut arg = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[arg] {
                    arg = j;
                }
            }
            arg as u32 == labels[i]
        })
        .count();
    hits as f64 / nodes.len() as f64
}

/// Full-batch gradient training on one propagation operator. With validation
/// nodes present, returns the parameters of the best-validation epoch
/// (earliest on ties); otherwise the final parameters.
#[allow(clippy::too_many_arguments)]
fn train_on(
    adj: &NormalizedAdjacency,
    features: &Tensor,
    labels: &[u32],
    classes: usize,
    train_nodes: &[usize],
    val_nodes: &[usize],
    arch: Arch,
    hyper: &ClassifierHyper,
    seed: u64,
) -> Result<TrainedClassifier, EvalError> {
    let ident;
    let prop = if matches!(arch, Arch::Mlp) {
        ident = NormalizedAdjacency::identity(features.rows());
        &ident
    } else {
        adj
    };
    let mut params = init_params(arch, features.cols(), classes, hyper, seed);
    let mut trace = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(f64, ClassifierParams)> = None;

    for _ in 0..hyper.epochs {
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let (out, placed) = match &params {
            ClassifierParams::TwoLayer(p) => {
                let pv = p.place(&mut tape, true);
                (gcn_forward(&mut tape, AdjRef::Sparse(prop), x, &pv, hyper.use_bias)?, pv)
            }
            ClassifierParams::Linear(p) => {
                let pv = p.place(&mut tape, true);
                (sgc_forward(&mut tape, AdjRef::Sparse(prop), x, &pv, p.power)?, pv)
            }
        };
        let ce = tape.softmax_cross_entropy(out, labels, train_nodes)?;
        trace.push(tape.value(ce).item());
        let grads = tape.grad(ce, &placed.vars)?;
        let stepped: Vec<Tensor> = placed
            .vars
            .iter()
            .zip(&grads)
            .map(|(&v, &g)| {
                let mut t = tape.value(v).clone();
                let gv = tape.value(g);
                for (w, d) in t.data_mut().iter_mut().zip(gv.data()) {
                    *w -= hyper.step_size * d;
                }
                t
            })
            .collect();
        params = match &params {
            ClassifierParams::TwoLayer(p) => ClassifierParams::TwoLayer(p.from_values(stepped)),
            ClassifierParams::Linear(p) => {
                ClassifierParams::Linear(SgcParams { w: stepped.into_iter().next().unwrap(), power: p.power })
            }
        };
        if !val_nodes.is_empty() {
            let logits = classifier_logits(prop, features, &params, hyper.use_bias)?;
            let acc = accuracy(&logits, labels, val_nodes);
            if best.as_ref().map_or(true, |(b, _)| acc > *b) {
                best = Some((acc, params.clone()));
            }
        }
    }
    if let Some((_, p)) = best {
        params = p;
    }
    Ok(TrainedClassifier { arch, params, trace })
}

/// Train on a labeled graph's own split: loss over train nodes, checkpoint on
/// validation accuracy when a validation set exists.
pub fn train_classifier(
    g: &LabeledGraph,
    arch: Arch,
    hyper: &ClassifierHyper,
    seed: u64,
) -> Result<TrainedClassifier, EvalError> {
    let adj = NormalizedAdjacency::from_graph(g);
    let train: Vec<usize> = g.split().train.iter().map(|&i| i as usize).collect();
    let val: Vec<usize> = g.split().val.iter().map(|&i| i as usize).collect();
    train_on(
        &adj,
        g.features(),
        g.labels(),
        g.num_classes(),
        &train,
        &val,
        arch,
        hyper,
        seed,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub arch: Arch,
    pub mode: EvalMode,
    /// Test accuracy of each repeat, in repeat order.
    pub accs: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over the repeats.
    pub std: f64,
    pub train_seconds: f64,
    /// Storage footprint of the condensed directory; 0 until a caller who
    /// owns the directory fills it in.
    pub bytes: u64,
    /// Classes appearing in real test labels but absent from the condensed
    /// graph; reported, never fatal.
    pub missing_classes: Vec<u32>,
}

fn mean_std(accs: &[f64]) -> (f64, f64) {
    let n = accs.len() as f64;
    let mean = accs.iter().sum::<f64>() / n;
    let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn repeat_seed(seed: u64, r: usize) -> u64 {
    stream(seed, tag::EVAL ^ ((r as u64) << 16)).gen()
}

/// Test-node indices, falling back to every node when the split has none.
fn test_nodes(real: &LabeledGraph) -> Vec<usize> {
    if real.split().test.is_empty() {
        (0..real.num_nodes()).collect()
    } else {
        real.split().test.iter().map(|&i| i as usize).collect()
    }
}

/// Train `repeats` classifiers on the condensed graph and score each on the
/// real graph's test nodes, propagating over the full real graph.
pub fn evaluate_condensed(
    art: &CondensedArtifact,
    real: &LabeledGraph,
    arch: Arch,
    mode: EvalMode,
    repeats: usize,
    hyper: &ClassifierHyper,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if repeats == 0 {
        return Err(EvalError::InvalidConfig("repeats must be positive".into()));
    }
    if art.features.cols() != real.num_features() {
        return Err(EvalError::InvalidConfig(format!(
            "condensed feature width {} does not match the real graph's {}",
            art.features.cols(),
            real.num_features()
        )));
    }
    let n = art.num_nodes();
    let train_adj = match mode {
        EvalMode::FeaturesOnly => NormalizedAdjacency::identity(n),
        EvalMode::WithStructure => {
            let off: Vec<(usize, usize, f64)> = art
                .adjacency
                .iter()
                .map(|&(u, v, w)| (u as usize, v as usize, w))
                .collect();
            // synthetic graphs carry unit self-affinity; induced real
            // subgraphs carry none
            let self_affinity = if art.phi.is_some() { 1.0 } else { 0.0 };
            NormalizedAdjacency::from_weighted(n, &off, &vec![self_affinity; n])
        }
    };
    let all: Vec<usize> = (0..n).collect();
    let real_adj = NormalizedAdjacency::from_graph(real);
    let test = test_nodes(real);

    let started = Instant::now();
    let mut accs = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let trained = train_on(
            &train_adj,
            &art.features,
            &art.labels,
            art.num_classes,
            &all,
            &[],
            arch,
            hyper,
            repeat_seed(seed, r),
        )?;
        let prop = if matches!(arch, Arch::Mlp) {
            NormalizedAdjacency::identity(real.num_nodes())
        } else {
            real_adj.clone()
        };
        let logits = classifier_logits(&prop, real.features(), &trained.params, hyper.use_bias)?;
        accs.push(accuracy(&logits, real.labels(), &test));
    }
    let (mean, std) = mean_std(&accs);

    let mut missing: Vec<u32> = (0..real.num_classes() as u32)
        .filter(|c| test.iter().any(|&i| real.labels()[i] == *c))
        .filter(|c| !art.labels.contains(c))
        .collect();
    missing.sort_unstable();

    Ok(EvalReport {
        arch,
        mode,
        accs,
        mean,
        std,
        train_seconds: started.elapsed().as_secs_f64(),
        bytes: 0,
        missing_classes: missing,
    })
}

/// One [`evaluate_condensed`] per requested architecture, same seeds for each.
pub fn transfer_eval(
    art: &CondensedArtifact,
    real: &LabeledGraph,
    archs: &[Arch],
    mode: EvalMode,
    repeats: usize,
    hyper: &ClassifierHyper,
    seed: u64,
) -> Result<Vec<EvalReport>, EvalError> {
    archs
        .iter()
        .map(|&a| evaluate_condensed(art, real, a, mode, repeats, hyper, seed))
        .collect()
}

/// Reference point: train directly on the real graph (its own split and
/// validation checkpointing), score on its test nodes.
pub fn full_graph_eval(
    real: &LabeledGraph,
    arch: Arch,
    repeats: usize,
    hyper: &ClassifierHyper,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if repeats == 0 {
        return Err(EvalError::InvalidConfig("repeats must be positive".into()));
    }
    let test = test_nodes(real);
    let started = Instant::now();
    let mut accs = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let trained = train_classifier(real, arch, hyper, repeat_seed(seed, r))?;
        let prop = if matches!(arch, Arch::Mlp) {
            NormalizedAdjacency::identity(real.num_nodes())
        } else {
            NormalizedAdjacency::from_graph(real)
        };
        let logits = classifier_logits(&prop, real.features(), &trained.params, hyper.use_bias)?;
        accs.push(accuracy(&logits, real.labels(), &test));
    }
    let (mean, std) = mean_std(&accs);
    Ok(EvalReport {
        arch,
        mode: EvalMode::WithStructure,
        accs,
        mean,
        std,
        train_seconds: started.elapsed().as_secs_f64(),
        bytes: 0,
        missing_classes: vec![],
    })
}

// ─── benchmark grid ───

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMethod {
    Gcond,
    Mgcond,
    Exgc,
    Random,
    Herding,
    Kcenter,
}

impl std::fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BenchMethod::Gcond => "gcond",
            BenchMethod::Mgcond => "mgcond",
            BenchMethod::Exgc => "exgc",
            BenchMethod::Random => "random",
            BenchMethod::Herding => "herding",
            BenchMethod::Kcenter => "kcenter",
        })
    }
}

/// One grid cell: produce a compressed graph by `method` under `cfg`, then
/// evaluate it with `arch` in `mode`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSpec {
    pub method: BenchMethod,
    #[serde(default)]
    pub cfg: CondenseConfig,
    #[serde(default = "default_arch")]
    pub arch: Arch,
    #[serde(default = "default_mode")]
    pub mode: EvalMode,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_arch() -> Arch {
    Arch::Gcn
}

fn default_mode() -> EvalMode {
    EvalMode::WithStructure
}

fn default_repeats() -> usize {
    3
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub dataset: String,
    pub method: BenchMethod,
    pub ratio: f64,
    pub arch: Arch,
    pub mode: EvalMode,
    pub acc_mean: f64,
    pub acc_std: f64,
    /// Condensation epochs to convergence (epochs run when patience never
    /// fired); 0 for selection baselines.
    pub epochs: usize,
    /// Wall seconds spent producing the compressed graph.
    pub seconds: f64,
    pub bytes: u64,
    pub accs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeedupRow {
    pub dataset: String,
    pub ratio: f64,
    pub arch: Arch,
    pub mode: EvalMode,
    pub gcond_seconds: f64,
    pub exgc_seconds: f64,
    /// gcond_seconds / exgc_seconds.
    pub speedup: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub speedups: Vec<SpeedupRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("dataset,method,ratio,arch,mode,acc_mean,acc_std,epochs,seconds,bytes\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.dataset,
                r.method,
                r.ratio,
                r.arch,
                r.mode,
                r.acc_mean,
                r.acc_std,
                r.epochs,
                r.seconds,
                r.bytes
            ));
        }
        out
    }
}

/// Total size of the regular files under `dir`, recursively.
pub fn dir_bytes(dir: &Path) -> Result<u64, LoadError> {
    let wrap = |source: std::io::Error| LoadError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut total = 0;
    for entry in std::fs::read_dir(dir).map_err(wrap)? {
        let entry = entry.map_err(wrap)?;
        let meta = entry.metadata().map_err(wrap)?;
        if meta.is_dir() {
            total += dir_bytes(&entry.path())?;
        } else {
            total += meta.len();
        }
    }
    Ok(total)
}

fn mode_for(method: BenchMethod) -> Option<Mode> {
    match method {
        BenchMethod::Gcond => Some(Mode::Gcond),
        BenchMethod::Mgcond => Some(Mode::Mgcond),
        BenchMethod::Exgc => Some(Mode::Exgc),
        _ => None,
    }
}

/// Run every cell of the grid (concurrently), saving each compressed graph
/// under `artifact_root` and evaluating it against `g`. Speedup rows pair
/// gcond with exgc cells that share ratio, architecture, and mode.
pub fn benchmark(
    g: &LabeledGraph,
    dataset: &str,
    specs: &[BenchSpec],
    artifact_root: &Path,
    hyper: &ClassifierHyper,
    eval_seed: u64,
) -> Result<BenchReport, EvalError> {
    let rows: Vec<BenchRow> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| -> Result<BenchRow, EvalError> {
            let (art, epochs, seconds) = match mode_for(spec.method) {
                Some(mode) => {
                    let mut cfg = spec.cfg.clone();
                    cfg.mode = mode;
                    let (state, report) = condense(g, &cfg)?;
                    let art = state.to_artifact(g.num_classes(), cfg.delta);
                    let epochs = report.converged_epoch.unwrap_or(report.epochs_run);
                    (art, epochs, report.wall_seconds)
                }
                None => {
                    let started = Instant::now();
                    let sel = match spec.method {
                        BenchMethod::Random => random_select(g, spec.cfg.ratio, spec.cfg.seed)?,
                        BenchMethod::Herding => herding_select(g, spec.cfg.ratio)?,
                        BenchMethod::Kcenter => kcenter_select(g, spec.cfg.ratio, spec.cfg.seed)?,
                        _ => unreachable!("condense methods handled above"),
                    };
                    let art = sel.to_artifact(g)?;
                    (art, 0, started.elapsed().as_secs_f64())
                }
            };
            let dir = artifact_root.join(format!(
                "{i:02}-{}-{}-{}",
                spec.method, spec.arch, spec.mode
            ));
            save_condensed(&dir, &art)?;
            let bytes = dir_bytes(&dir)?;
            let mut rep =
                evaluate_condensed(&art, g, spec.arch, spec.mode, spec.repeats, hyper, eval_seed)?;
            rep.bytes = bytes;
            Ok(BenchRow {
                dataset: dataset.to_string(),
                method: spec.method,
                ratio: spec.cfg.ratio,
                arch: spec.arch,
                mode: spec.mode,
                acc_mean: rep.mean,
                acc_std: rep.std,
                epochs,
                seconds,
                bytes,
                accs: rep.accs,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut speedups = Vec::new();
    for a in &rows {
        if a.method != BenchMethod::Gcond {
            continue;
        }
        for b in &rows {
            if b.method == BenchMethod::Exgc
                && a.ratio.to_bits() == b.ratio.to_bits()
                && a.arch == b.arch
                && a.mode == b.mode
            {
                speedups.push(SpeedupRow {
                    dataset: a.dataset.clone(),
                    ratio: a.ratio,
                    arch: a.arch,
                    mode: a.mode,
                    gcond_seconds: a.seconds,
                    exgc_seconds: b.seconds,
                    speedup: a.seconds / b.seconds,
                });
            }
        }
    }
    Ok(BenchReport { rows, speedups })
}
