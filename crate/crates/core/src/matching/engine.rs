//! The matching loss and its two optimization steps.
//!
//! Real-side gradients are plain tensors, computed once per epoch and frozen
//! into the synthetic tape as constants. The synthetic side is rebuilt from
//! scratch for every step so that differentiating the loss with respect to
//! X' or Phi flows through the recorded first-order backbone gradients.

use crate::diff::{Tape, Tensor, Val};
use crate::graph::adjacency::{normalize_dense_traced, NormalizedAdjacency};
use crate::graph::LabeledGraph;
use crate::models::{adjgen_forward, gcn_forward, AdjRef, GcnParams, PlacedParams};

use super::{CondenseConfig, CondenseError, SyntheticState};

/// Per-class backbone gradients on the real graph for each distribution draw.
pub struct RealSide {
    /// Indexed `[draw][class][parameter]`, parameters in placement order.
    pub grads: Vec<Vec<Vec<Tensor>>>,
}

impl RealSide {
    pub fn compute(
        g: &LabeledGraph,
        adj: &NormalizedAdjacency,
        thetas: &[GcnParams],
        cfg: &CondenseConfig,
    ) -> Result<Self, CondenseError> {
        let mut grads = Vec::with_capacity(thetas.len());
        for theta in thetas {
            let mut tape = Tape::new();
            let x = tape.constant(g.features().clone());
            let p = theta.place(&mut tape, true);
            let logits = gcn_forward(&mut tape, AdjRef::Sparse(adj), x, &p, cfg.use_bias)?;
            let mut per_class = Vec::with_capacity(g.num_classes());
            for c in 0..g.num_classes() as u32 {
                let mask = g.train_nodes_of_class(c);
                if mask.is_empty() {
                    return Err(CondenseError::ClassWithoutTrainNodes(c));
                }
                let ce = tape.softmax_cross_entropy(logits, g.labels(), &mask)?;
                let gvals = tape.grad(ce, &p.vars)?;
                per_class.push(gvals.iter().map(|&v| tape.value(v).clone()).collect());
            }
            grads.push(per_class);
        }
        Ok(RealSide { grads })
    }

    pub fn num_draws(&self) -> usize {
        self.grads.len()
    }

    pub fn num_classes(&self) -> usize {
        self.grads.first().map(Vec::len).unwrap_or(0)
    }
}

/// Column-wise cosine mismatch summed over a list of parameter gradients.
/// Plain-value entry point; training records the same composite on a live
/// tape.
pub fn grad_match_distance(real: &[Tensor], synth: &[Tensor]) -> Result<f64, CondenseError> {
    if real.len() != synth.len() {
        return Err(CondenseError::InvalidConfig(format!(
            "gradient lists differ in length: {} vs {}",
            real.len(),
            synth.len()
        )));
    }
    let mut tape = Tape::new();
    let mut acc: Option<Val> = None;
    for (r, s) in real.iter().zip(synth) {
        let rv = tape.constant(r.clone());
        let sv = tape.constant(s.clone());
        let d = tape.cosine_per_column(sv, rv)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, d)?,
            None => d,
        });
    }
    Ok(acc.map(|v| tape.value(v).item()).unwrap_or(0.0))
}

pub(crate) struct LossBuild {
    pub tape: Tape,
    pub loss: Val,
    pub x: Val,
    pub phi_vars: PlacedParams,
    /// Per-class sums of the per-parameter mismatch, indexed `[draw][class]`.
    pub class_terms: Vec<Vec<Val>>,
}

/// Record the full matching loss on a fresh tape. The synthetic adjacency,
/// backbone forward, per-class gradients, and mismatch are all nodes of the
/// same tape, so a second `grad` call differentiates through the first.
pub(crate) fn build_matching_loss(
    state: &SyntheticState,
    real: &RealSide,
    thetas: &[GcnParams],
    cfg: &CondenseConfig,
    x_trainable: bool,
    phi_trainable: bool,
) -> Result<LossBuild, CondenseError> {
    let mut tape = Tape::new();
    let x = if x_trainable {
        tape.var(state.features.clone())
    } else {
        tape.constant(state.features.clone())
    };
    let phi_vars = state.phi.place(&mut tape, phi_trainable);
    let a_raw = adjgen_forward(&mut tape, x, &phi_vars)?;
    let a_norm = normalize_dense_traced(&mut tape, a_raw)?;

    let num_classes = real.num_classes();
    let class_rows: Vec<Vec<usize>> =
        (0..num_classes).map(|c| state.nodes_of_class(c as u32)).collect();

    let mut draw_losses = Vec::with_capacity(thetas.len());
    let mut class_terms = Vec::with_capacity(thetas.len());
    for (di, theta) in thetas.iter().enumerate() {
        let p = theta.place(&mut tape, true);
        let logits = gcn_forward(&mut tape, AdjRef::Dense(a_norm), x, &p, cfg.use_bias)?;
        let mut terms = Vec::with_capacity(num_classes);
        for (c, rows) in class_rows.iter().enumerate() {
            let ce = tape.softmax_cross_entropy(logits, &state.labels, rows)?;
            let synth_grads = tape.grad(ce, &p.vars)?;
            let mut acc: Option<Val> = None;
            for (pi, &gv) in synth_grads.iter().enumerate() {
                let rg = tape.constant(real.grads[di][c][pi].clone());
                let d = tape.cosine_per_column(gv, rg)?;
                acc = Some(match acc {
                    Some(a) => tape.add(a, d)?,
                    None => d,
                });
            }
            terms.push(acc.expect("at least one matched parameter"));
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t)?;
        }
        draw_losses.push(total);
        class_terms.push(terms);
    }
    let loss = tape.mean_of(&draw_losses)?;
    Ok(LossBuild { tape, loss, x, phi_vars, class_terms })
}

/// Loss value at the current state, with per-class finiteness attribution.
pub fn eval_matching_loss(
    state: &SyntheticState,
    real: &RealSide,
    thetas: &[GcnParams],
    cfg: &CondenseConfig,
    epoch: usize,
) -> Result<f64, CondenseError> {
    let lb = build_matching_loss(state, real, thetas, cfg, false, false)?;
    for per_draw in &lb.class_terms {
        for (c, &term) in per_draw.iter().enumerate() {
            if !lb.tape.value(term).item().is_finite() {
                return Err(CondenseError::NonFiniteLoss { epoch, class: c as u32 });
            }
        }
    }
    Ok(lb.tape.value(lb.loss).item())
}

fn step_tensor(t: &mut Tensor, g: &Tensor, eta: f64) {
    for (a, b) in t.data_mut().iter_mut().zip(g.data()) {
        *a -= eta * b;
    }
}

/// `e_x` gradient steps on exactly the listed feature rows; every other row
/// of X', and Phi, come out bit-identical. Empty row lists are a no-op.
pub fn estep(
    state: &mut SyntheticState,
    rows: &[usize],
    real: &RealSide,
    thetas: &[GcnParams],
    cfg: &CondenseConfig,
) -> Result<(), CondenseError> {
    if rows.is_empty() {
        return Ok(());
    }
    let cols = state.features.cols();
    for _ in 0..cfg.e_x {
        let mut lb = build_matching_loss(state, real, thetas, cfg, true, false)?;
        let gs = lb.tape.grad2(lb.loss, &[lb.x])?;
        let grad = lb.tape.value(gs[0]).clone();
        for &r in rows {
            for j in 0..cols {
                let v = state.features.get(r, j) - cfg.eta_x * grad.get(r, j);
                state.features.set(r, j, v);
            }
        }
    }
    Ok(())
}

/// `e_phi` gradient steps on the generator weights with X' frozen.
pub fn mstep(
    state: &mut SyntheticState,
    real: &RealSide,
    thetas: &[GcnParams],
    cfg: &CondenseConfig,
) -> Result<(), CondenseError> {
    for _ in 0..cfg.e_phi {
        let mut lb = build_matching_loss(state, real, thetas, cfg, false, true)?;
        let vars = lb.phi_vars.vars.clone();
        let gs = lb.tape.grad2(lb.loss, &vars)?;
        let gt: Vec<Tensor> = gs.iter().map(|&g| lb.tape.value(g).clone()).collect();
        step_tensor(&mut state.phi.w1, &gt[0], cfg.eta_phi);
        step_tensor(&mut state.phi.b1, &gt[1], cfg.eta_phi);
        step_tensor(&mut state.phi.w2, &gt[2], cfg.eta_phi);
        step_tensor(&mut state.phi.b2, &gt[3], cfg.eta_phi);
    }
    Ok(())
}
