//! The outer condensation loop: backbone draws, row schedule, E/M steps,
//! trace bookkeeping, and early stopping.

use std::time::Instant;

use crate::graph::adjacency::{normalize_dense_traced, NormalizedAdjacency};
use crate::graph::io::CondensedArtifact;
use crate::graph::LabeledGraph;
use crate::models::{
    adjgen_eval, adjgen_forward, gcn_forward, sparsify, AdjRef, GcnParams,
};
use crate::diff::{Tape, Tensor};

use super::engine::{estep, eval_matching_loss, mstep, RealSide};
use super::{
    init_synthetic, select_rows, BackboneLoop, CondenseConfig, CondenseError, SyntheticState,
};

#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub epoch: usize,
    /// Matching loss at the top of the epoch, before any update.
    pub loss: f64,
    /// Fraction of synthetic rows the E-step updated this epoch.
    pub active_frac: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct MatchReport {
    pub trace: Vec<TraceRow>,
    pub epochs_run: usize,
    /// Epoch at which the patience rule fired, if it did.
    pub converged_epoch: Option<usize>,
    pub final_loss: f64,
    pub wall_seconds: f64,
}

/// Render the per-epoch trace; floats use shortest round-trip formatting so
/// identical runs produce identical bytes.
pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("epoch,loss,active_frac,seconds\n");
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.loss, row.active_frac, row.seconds
        ));
    }
    out
}

fn sample_theta(g: &LabeledGraph, cfg: &CondenseConfig, draw: u64) -> GcnParams {
    GcnParams::sample(
        &cfg.init_distribution(),
        g.num_features(),
        cfg.hidden,
        g.num_classes(),
        cfg.use_bias,
        draw,
    )
}

/// Advance a persistent backbone on the current synthetic graph with plain
/// gradient descent on the full-batch cross-entropy.
fn advance_backbone(
    theta: &mut GcnParams,
    state: &SyntheticState,
    cfg: &CondenseConfig,
) -> Result<(), CondenseError> {
    let all: Vec<usize> = (0..state.num_nodes()).collect();
    for _ in 0..cfg.tau_theta {
        let mut tape = Tape::new();
        let x = tape.constant(state.features.clone());
        let pv = state.phi.place(&mut tape, false);
        let a_raw = adjgen_forward(&mut tape, x, &pv)?;
        let a = normalize_dense_traced(&mut tape, a_raw)?;
        let p = theta.place(&mut tape, true);
        let logits = gcn_forward(&mut tape, AdjRef::Dense(a), x, &p, cfg.use_bias)?;
        let ce = tape.softmax_cross_entropy(logits, &state.labels, &all)?;
        let gs = tape.grad(ce, &p.vars)?;
        let gt: Vec<Tensor> = gs.iter().map(|&v| tape.value(v).clone()).collect();
        let mut stepped = Vec::with_capacity(gt.len());
        let mut it = gt.into_iter();
        let mut step = |t: &Tensor| {
            let g = it.next().expect("one gradient per parameter");
            let data = t
                .data()
                .iter()
                .zip(g.data())
                .map(|(a, b)| a - cfg.eta_theta * b)
                .collect();
            Tensor::new(t.rows(), t.cols(), data).unwrap()
        };
        stepped.push(step(&theta.w1));
        if let Some(b1) = &theta.b1 {
            stepped.push(step(b1));
        }
        stepped.push(step(&theta.w2));
        if let Some(b2) = &theta.b2 {
            stepped.push(step(b2));
        }
        *theta = theta.from_values(stepped);
    }
    Ok(())
}

/// Run the full condensation schedule and return the learned state with its
/// per-epoch trace.
pub fn condense(
    g: &LabeledGraph,
    cfg: &CondenseConfig,
) -> Result<(SyntheticState, MatchReport), CondenseError> {
    cfg.validate()?;
    let adj = NormalizedAdjacency::from_graph(g);
    let mut state = init_synthetic(g, cfg)?;
    let start = Instant::now();

    let mut trace = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let mut converged = None;
    let mut persistent: Option<GcnParams> = None;
    let mut last_loss = f64::NAN;

    for t in 0..cfg.max_epochs {
        let epoch_start = Instant::now();
        let thetas: Vec<GcnParams> = match cfg.backbone_loop {
            BackboneLoop::OneStep => (0..cfg.theta_draws)
                .map(|i| sample_theta(g, cfg, (t * cfg.theta_draws + i) as u64))
                .collect(),
            BackboneLoop::InnerLoop => {
                if t % 10 == 0 {
                    persistent = Some(sample_theta(g, cfg, t as u64));
                }
                vec![persistent.clone().expect("initialized at epoch 0")]
            }
        };

        let real = RealSide::compute(g, &adj, &thetas, cfg)?;
        let loss = eval_matching_loss(&state, &real, &thetas, cfg, t)?;
        last_loss = loss;

        let rows = select_rows(&mut state, cfg, t, &thetas[0])?;
        estep(&mut state, &rows, &real, &thetas, cfg)?;
        mstep(&mut state, &real, &thetas, cfg)?;
        if cfg.backbone_loop == BackboneLoop::InnerLoop {
            let theta = persistent.as_mut().expect("initialized at epoch 0");
            advance_backbone(theta, &state, cfg)?;
        }

        trace.push(TraceRow {
            epoch: t,
            loss,
            active_frac: rows.len() as f64 / state.num_nodes() as f64,
            seconds: epoch_start.elapsed().as_secs_f64(),
        });
        state.epoch = t + 1;

        if loss < best {
            best = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                converged = Some(t);
                break;
            }
        }
    }

    let report = MatchReport {
        epochs_run: trace.len(),
        converged_epoch: converged,
        final_loss: last_loss,
        wall_seconds: start.elapsed().as_secs_f64(),
        trace,
    };
    Ok((state, report))
}

impl SyntheticState {
    /// Threshold the generated adjacency and package everything for disk.
    pub fn to_artifact(&self, num_classes: usize, delta: f64) -> CondensedArtifact {
        let dense = adjgen_eval(&self.features, &self.phi);
        let kept = sparsify(&dense, delta);
        let n = self.num_nodes();
        let mut adjacency = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = kept.get(i, j);
                if w > 0.0 {
                    adjacency.push((i as u32, j as u32, w));
                }
            }
        }
        CondensedArtifact {
            features: self.features.clone(),
            labels: self.labels.clone(),
            adjacency,
            phi: Some(self.phi.to_json()),
            num_classes,
            threshold: delta,
        }
    }
}
