//! Gradient-matching condensation.
//!
//! A synthetic graph (features X', labels Y', and an adjacency generator Phi)
//! is fitted so that, across random backbone initializations, per-class
//! training gradients on the synthetic graph line up column-by-column with
//! those on the real graph. One epoch alternates an E-step (feature rows
//! selected by the schedule) with an M-step (generator weights); the three
//! schedules differ only in which rows the E-step touches.

pub(crate) mod engine;
mod run;

pub use engine::{estep, eval_matching_loss, grad_match_distance, mstep, RealSide};
pub use run::{condense, trace_to_csv, MatchReport, TraceRow};

use serde::{Deserialize, Serialize};

use rand::Rng;
use thiserror::Error;

use crate::diff::{DiffError, Tensor};
use crate::graph::{proportional_counts, GraphError, LabeledGraph};
use crate::models::{AdjGenParams, InitDistribution, InitKind};
use crate::rng::{stream, tag};

#[derive(Debug, Error)]
pub enum CondenseError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("class {0} has no train nodes")]
    ClassWithoutTrainNodes(u32),
    #[error("matching loss became non-finite at epoch {epoch}, class {class}")]
    NonFiniteLoss { epoch: usize, class: u32 },
    #[error("explainer gradient is non-finite at node {node}")]
    NonFiniteExplainerGradient { node: usize },
    #[error("mask objective became non-finite at step {step}")]
    NonFiniteMaskObjective { step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Gcond,
    Mgcond,
    Exgc,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Gcond => "gcond",
            Mode::Mgcond => "mgcond",
            Mode::Exgc => "exgc",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneLoop {
    /// Fresh initialization draws every epoch.
    OneStep,
    /// One persistent backbone advanced on the synthetic graph after each
    /// epoch, re-initialized every ten epochs.
    InnerLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplainerKind {
    Sa,
    LocalMask,
    GlobalMask,
    Random,
}

impl std::fmt::Display for ExplainerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExplainerKind::Sa => "sa",
            ExplainerKind::LocalMask => "local_mask",
            ExplainerKind::GlobalMask => "global_mask",
            ExplainerKind::Random => "random",
        })
    }
}

/// Distance between masked and unmasked predictions inside the mask
/// explainers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskDistanceKind {
    Mse,
    #[serde(alias = "kl")]
    KlSoftmax,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CondenseConfig {
    pub mode: Mode,
    /// Synthetic size as a fraction of the train split.
    pub ratio: f64,
    pub seed: u64,
    pub backbone_loop: BackboneLoop,
    /// Block count for the cyclic schedule.
    pub k: usize,
    /// Fraction of nodes promoted per selection round.
    pub kappa: f64,
    pub selection_period: usize,
    pub explainer: ExplainerKind,
    /// Update the not-yet-selected candidates instead of the selected set.
    pub literal_mset: bool,
    /// Mask-sparsity weight for the mask explainers.
    pub lambda: f64,
    /// Bernoulli prior of the information constraint.
    pub r: f64,
    /// Carried for provenance in configs and reports; never used in any
    /// computation.
    pub beta: f64,
    pub eta_x: f64,
    pub eta_phi: f64,
    pub eta_theta: f64,
    /// Backbone steps per epoch in the inner-loop regime.
    pub tau_theta: usize,
    pub theta_draws: usize,
    pub e_x: usize,
    pub e_phi: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Sparsification threshold applied at save/eval time.
    pub delta: f64,
    pub hidden: usize,
    pub adjgen_hidden: usize,
    pub init: InitKind,
    pub use_bias: bool,
    pub mask_distance: MaskDistanceKind,
}

impl Default for CondenseConfig {
    fn default() -> Self {
        CondenseConfig {
            mode: Mode::Gcond,
            ratio: 0.05,
            seed: 0,
            backbone_loop: BackboneLoop::OneStep,
            k: 4,
            kappa: 0.05,
            selection_period: 50,
            explainer: ExplainerKind::Sa,
            literal_mset: false,
            lambda: 0.01,
            r: 0.5,
            beta: 0.0,
            eta_x: 0.1,
            eta_phi: 0.05,
            eta_theta: 0.1,
            tau_theta: 3,
            theta_draws: 1,
            e_x: 10,
            e_phi: 5,
            max_epochs: 300,
            patience: 4,
            delta: 0.5,
            hidden: crate::models::DEFAULT_GCN_HIDDEN,
            adjgen_hidden: crate::models::DEFAULT_ADJGEN_HIDDEN,
            init: InitKind::UniformGlorot,
            use_bias: false,
            mask_distance: MaskDistanceKind::Mse,
        }
    }
}

impl CondenseConfig {
    pub fn validate(&self) -> Result<(), CondenseError> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(CondenseError::InvalidConfig(format!(
                "ratio must lie in (0, 1], got {}",
                self.ratio
            )));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(CondenseError::InvalidConfig(format!(
                "kappa must lie in (0, 1], got {}",
                self.kappa
            )));
        }
        if self.mode == Mode::Mgcond && self.k == 0 {
            return Err(CondenseError::InvalidConfig("k must be positive".into()));
        }
        if self.selection_period == 0 {
            return Err(CondenseError::InvalidConfig("selection_period must be positive".into()));
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(CondenseError::InvalidConfig(format!(
                "prior r must lie strictly inside (0, 1), got {}",
                self.r
            )));
        }
        if self.theta_draws == 0 {
            return Err(CondenseError::InvalidConfig("theta_draws must be positive".into()));
        }
        if self.delta < 0.0 || self.delta > 1.0 {
            return Err(CondenseError::InvalidConfig(format!(
                "delta must lie in [0, 1], got {}",
                self.delta
            )));
        }
        Ok(())
    }

    pub fn init_distribution(&self) -> InitDistribution {
        InitDistribution { kind: self.init, seed: self.seed }
    }
}

/// The synthetic graph being learned, plus schedule bookkeeping.
#[derive(Debug, Clone)]
pub struct SyntheticState {
    pub features: Tensor,
    pub labels: Vec<u32>,
    pub phi: AdjGenParams,
    /// Cyclic schedule's row blocks; empty outside mgcond.
    pub blocks: Vec<Vec<usize>>,
    /// Not-yet-selected candidates of the explainer schedule (sorted).
    pub candidate_set: Vec<usize>,
    /// Rows already promoted by the explainer schedule (sorted).
    pub active_set: Vec<usize>,
    pub epoch: usize,
}

impl SyntheticState {
    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().map(|&y| y as usize + 1).max().unwrap_or(0)
    }

    pub fn nodes_of_class(&self, c: u32) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|&(_, &y)| y == c)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Build the initial synthetic graph: per-class sizes proportional to the
/// train label histogram (largest remainder, each class at least one), rows
/// sampled from that class's train nodes, generator freshly initialized.
pub fn init_synthetic(g: &LabeledGraph, cfg: &CondenseConfig) -> Result<SyntheticState, CondenseError> {
    cfg.validate()?;
    let n_train = g.split().train.len();
    let n_prime = (cfg.ratio * n_train as f64).floor() as usize;
    let hist = g.train_label_histogram();
    let counts = proportional_counts(&hist, n_prime).map_err(|e| match e {
        GraphError::InvalidParams(_) => CondenseError::InvalidConfig(format!(
            "ratio {} yields {} synthetic nodes, fewer than the represented classes",
            cfg.ratio, n_prime
        )),
        other => CondenseError::Graph(other),
    })?;

    let mut rng = stream(cfg.seed, tag::SYNTH_INIT);
    let d = g.num_features();
    let mut features = Tensor::zeros(n_prime, d);
    let mut labels = Vec::with_capacity(n_prime);
    let mut row = 0usize;
    for c in 0..g.num_classes() as u32 {
        let mut pool = g.train_nodes_of_class(c);
        // partial Fisher-Yates: the first counts[c] entries are the sample
        let take = counts[c as usize];
        for i in 0..take {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        for &src in pool.iter().take(take) {
            for col in 0..d {
                features.set(row, col, g.features().get(src, col));
            }
            labels.push(c);
            row += 1;
        }
    }

    let phi = AdjGenParams::sample(&cfg.init_distribution(), d, cfg.adjgen_hidden, 0);

    let blocks = if cfg.mode == Mode::Mgcond {
        if cfg.k > n_prime {
            return Err(CondenseError::InvalidConfig(format!(
                "k {} exceeds the {} synthetic nodes",
                cfg.k, n_prime
            )));
        }
        let mut order: Vec<usize> = (0..n_prime).collect();
        let mut brng = stream(cfg.seed, tag::BLOCK_SHUFFLE);
        for i in (1..order.len()).rev() {
            let j = brng.gen_range(0..=i);
            order.swap(i, j);
        }
        let base = n_prime / cfg.k;
        let extra = n_prime % cfg.k;
        let mut blocks = Vec::with_capacity(cfg.k);
        let mut at = 0;
        for b in 0..cfg.k {
            let len = base + usize::from(b < extra);
            blocks.push(order[at..at + len].to_vec());
            at += len;
        }
        blocks
    } else {
        Vec::new()
    };

    let candidate_set = if cfg.mode == Mode::Exgc {
        (0..n_prime).collect()
    } else {
        Vec::new()
    };

    Ok(SyntheticState {
        features,
        labels,
        phi,
        blocks,
        candidate_set,
        active_set: Vec::new(),
        epoch: 0,
    })
}

/// Rows the E-step will update this epoch. For the explainer schedule this
/// also runs the periodic promotion, which is why it can fail (the explainer
/// itself can).
pub fn select_rows(
    state: &mut SyntheticState,
    cfg: &CondenseConfig,
    epoch: usize,
    theta: &crate::models::GcnParams,
) -> Result<Vec<usize>, CondenseError> {
    match cfg.mode {
        Mode::Gcond => Ok((0..state.num_nodes()).collect()),
        Mode::Mgcond => Ok(state.blocks[epoch % cfg.k].clone()),
        Mode::Exgc => {
            if epoch % cfg.selection_period == 0 && !state.candidate_set.is_empty() {
                let scores = crate::explainers::score_state(state, theta, cfg)?;
                let n_prime = state.num_nodes();
                let quota = ((cfg.kappa * n_prime as f64).floor() as usize)
                    .max(1)
                    .min(state.candidate_set.len());
                let mut ranked: Vec<usize> = state.candidate_set.clone();
                // ties resolved toward the lower node index
                ranked.sort_by(|&a, &b| {
                    scores.values[b]
                        .partial_cmp(&scores.values[a])
                        .unwrap()
                        .then(a.cmp(&b))
                });
                let promoted: Vec<usize> = ranked[..quota].to_vec();
                state
                    .candidate_set
                    .retain(|i| !promoted.contains(i));
                state.active_set.extend(promoted);
                state.active_set.sort_unstable();
            }
            if cfg.literal_mset {
                Ok(state.candidate_set.clone())
            } else {
                Ok(state.active_set.clone())
            }
        }
    }
}
