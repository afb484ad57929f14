//! Randomized self-verification, shared by the `selfcheck` command and the
//! acceptance suite: finite-difference audits of every tape primitive and of
//! the first- and second-order training gradients, E-step freeze behavior,
//! and the schedule-reduction identity.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diff::fd::{central_diff, rel_err};
use crate::diff::{DiffError, SparseSym, Tape, Tensor, Val};
use crate::graph::adjacency::NormalizedAdjacency;
use crate::graph::sbm::{generate_sbm, SbmParams};
use crate::graph::{LabeledGraph, SplitSets};
use crate::matching::engine::{build_matching_loss, estep, RealSide};
use crate::matching::{condense, init_synthetic, CondenseConfig, Mode};
use crate::models::{gcn_forward, AdjRef, GcnParams};
use crate::rng::stream;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn from_failures(name: &str, failures: Vec<String>, detail_ok: String) -> Self {
        if failures.is_empty() {
            CheckOutcome { name: name.into(), passed: true, detail: detail_ok }
        } else {
            CheckOutcome { name: name.into(), passed: false, detail: failures.join("; ") }
        }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let mut t = Tensor::zeros(rows, cols);
    for v in t.data_mut() {
        *v = rng.gen_range(lo..hi);
    }
    t
}

/// Entries drawn from ±[0.2, 1.2): bounded away from the relu kink and from
/// the log/recip/rsqrt domain edges.
fn rand_tensor_offset(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let mut t = rand_tensor(rng, rows, cols, 0.2, 1.2);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Finite-difference audit of every registered primitive and the composite
/// ops built on them. Each op's output is folded to a scalar through a random
/// constant weighting, so the check exercises general upstream adjoints.
pub fn check_primitives(seed: u64) -> CheckOutcome {
    let mut rng = stream(seed, 0x5c_01);
    let mut failures: Vec<String> = Vec::new();
    let mut worst = 0.0f64;
    let h = 1e-6;
    let tol = 1e-6;

    let mut run = |name: &str,
                   inputs: Vec<Tensor>,
                   build: &dyn Fn(&mut Tape, &[Val]) -> Result<Val, DiffError>,
                   rng: &mut ChaCha8Rng| {
        // shape probe, then a fixed weighting shared by every evaluation
        let weight = {
            let mut tape = Tape::new();
            let vals: Vec<Val> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
            let out = build(&mut tape, &vals).expect(name);
            let v = tape.value(out);
            rand_tensor(rng, v.rows(), v.cols(), -1.0, 1.0)
        };
        let loss_of = |tensors: &[Tensor]| -> (f64, Vec<Tensor>, bool) {
            let mut tape = Tape::new();
            let vals: Vec<Val> = tensors.iter().map(|t| tape.var(t.clone())).collect();
            let out = build(&mut tape, &vals).expect(name);
            let w = tape.constant(weight.clone());
            let prod = tape.mul(out, w).expect(name);
            let loss = tape.sum_all(prod).expect(name);
            let value = tape.value(loss).item();
            match tape.grad(loss, &vals) {
                Ok(gs) => {
                    let grads = gs.iter().map(|&g| tape.value(g).clone()).collect();
                    (value, grads, true)
                }
                Err(_) => (value, vec![], false),
            }
        };
        let (_, analytic, ok) = loss_of(&inputs);
        if !ok {
            failures.push(format!("{name}: gradient construction failed"));
            return;
        }
        for (k, grad) in analytic.iter().enumerate() {
            let f = |xt: &Tensor| {
                let mut probe = inputs.clone();
                probe[k] = xt.clone();
                loss_of(&probe).0
            };
            let fd = central_diff(&f, &inputs[k], h);
            let err = rel_err(grad, &fd);
            worst = worst.max(err);
            if err > tol {
                failures.push(format!("{name} arg {k}: rel err {err:.2e}"));
            }
        }
    };

    let a23 = rand_tensor_offset(&mut rng, 2, 3);
    let b23 = rand_tensor_offset(&mut rng, 2, 3);
    let b32 = rand_tensor_offset(&mut rng, 3, 2);
    let pos = rand_tensor(&mut rng, 2, 3, 0.2, 1.2);

    run("matmul", vec![a23.clone(), b32.clone()], &|t, v| t.matmul(v[0], v[1]), &mut rng);
    run("transpose", vec![a23.clone()], &|t, v| t.transpose(v[0]), &mut rng);
    run("add", vec![a23.clone(), b23.clone()], &|t, v| t.add(v[0], v[1]), &mut rng);
    run("scale", vec![a23.clone()], &|t, v| t.scale(v[0], -1.7), &mut rng);
    run("mul", vec![a23.clone(), b23.clone()], &|t, v| t.mul(v[0], v[1]), &mut rng);
    run("relu", vec![a23.clone()], &|t, v| t.relu(v[0]), &mut rng);
    run("sigmoid", vec![a23.clone()], &|t, v| t.sigmoid(v[0]), &mut rng);
    run("exp", vec![a23.clone()], &|t, v| t.exp(v[0]), &mut rng);
    run("log", vec![pos.clone()], &|t, v| t.log(v[0]), &mut rng);
    run("recip", vec![pos.clone()], &|t, v| t.recip(v[0]), &mut rng);
    run("rsqrt", vec![pos.clone()], &|t, v| t.rsqrt(v[0]), &mut rng);
    run("row_sum", vec![a23.clone()], &|t, v| t.row_sum(v[0]), &mut rng);
    run("col_sum", vec![a23.clone()], &|t, v| t.col_sum(v[0]), &mut rng);
    run("reshape", vec![a23.clone()], &|t, v| t.reshape(v[0], 3, 2), &mut rng);

    let sparse = {
        let off = vec![(0usize, 1usize, 0.7), (1, 2, 0.4)];
        let diag = vec![0.5, 1.0, 0.8];
        Arc::new(SparseSym::from_upper(3, &off, &diag))
    };
    run(
        "sparse_matmul",
        vec![b32.clone()],
        &|t, v| {
            let m = t.register_matrix(Arc::clone(&sparse));
            t.sparse_matmul(m, v[0])
        },
        &mut rng,
    );

    // composites over the primitive set
    run("softplus", vec![a23.clone()], &|t, v| t.softplus(v[0]), &mut rng);
    run("log_softmax_rows", vec![a23.clone()], &|t, v| t.log_softmax_rows(v[0]), &mut rng);
    let col = rand_tensor(&mut rng, 2, 1, 0.2, 1.0);
    run("scale_rows", vec![a23.clone(), col], &|t, v| t.scale_rows(v[0], v[1]), &mut rng);
    run("concat_rows", vec![a23.clone(), b23.clone()], &|t, v| t.concat_rows(v), &mut rng);
    let bias = rand_tensor_offset(&mut rng, 1, 3);
    run("add_bias", vec![a23.clone(), bias], &|t, v| t.add_bias(v[0], v[1]), &mut rng);
    run(
        "softmax_cross_entropy",
        vec![rand_tensor_offset(&mut rng, 4, 3)],
        &|t, v| t.softmax_cross_entropy(v[0], &[0, 2, 1, 1], &[0, 1, 2, 3]),
        &mut rng,
    );
    run(
        "cosine_per_column",
        vec![rand_tensor_offset(&mut rng, 3, 4), rand_tensor_offset(&mut rng, 3, 4)],
        &|t, v| t.cosine_per_column(v[0], v[1]),
        &mut rng,
    );

    CheckOutcome::from_failures(
        "primitive gradients",
        failures,
        format!("21 ops, worst rel err {worst:.2e}"),
    )
}

/// Random small GCN training instance: weighted adjacency, features, labels.
struct GcnInstance {
    adj: NormalizedAdjacency,
    x: Tensor,
    labels: Vec<u32>,
    theta: GcnParams,
}

fn random_gcn_instance(rng: &mut ChaCha8Rng) -> GcnInstance {
    let n = rng.gen_range(4..=12);
    let d = rng.gen_range(2..=5);
    let classes = rng.gen_range(2..=3);
    let hidden = rng.gen_range(3..=6);
    let x = rand_tensor_offset(rng, n, d);
    let labels: Vec<u32> = (0..n).map(|_| rng.gen_range(0..classes) as u32).collect();
    let mut off = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen_bool(0.4) {
                off.push((i, j, rng.gen_range(0.2..1.0)));
            }
        }
    }
    let adj = NormalizedAdjacency::from_weighted(n, &off, &vec![0.0; n]);
    let w1 = rand_tensor_offset(rng, d, hidden);
    let w2 = rand_tensor_offset(rng, hidden, classes);
    GcnInstance { adj, x, labels, theta: GcnParams { w1, w2, b1: None, b2: None } }
}

fn gcn_loss(inst: &GcnInstance, x: &Tensor, theta: &GcnParams) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let xv = tape.var(x.clone());
    let pv = theta.place(&mut tape, true);
    let out = gcn_forward(&mut tape, AdjRef::Sparse(&inst.adj), xv, &pv, false).unwrap();
    let all: Vec<usize> = (0..x.rows()).collect();
    let ce = tape.softmax_cross_entropy(out, &inst.labels, &all).unwrap();
    let value = tape.value(ce).item();
    let mut wrt = vec![xv];
    wrt.extend(&pv.vars);
    let gs = tape.grad(ce, &wrt).unwrap();
    (value, gs.iter().map(|&g| tape.value(g).clone()).collect())
}

/// First-order audit: gradients of the 2-layer GCN cross-entropy w.r.t. the
/// features and both weight matrices, against central differences.
pub fn check_first_order(instances: usize, seed: u64, h: f64, tol: f64) -> CheckOutcome {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut rng = stream(seed, 0x5c_02 ^ ((i as u64) << 16));
        let inst = random_gcn_instance(&mut rng);
        let (_, grads) = gcn_loss(&inst, &inst.x, &inst.theta);

        let fd_x = central_diff(&|xt| gcn_loss(&inst, xt, &inst.theta).0, &inst.x, h);
        let fd_w1 = central_diff(
            &|w| {
                let t = GcnParams { w1: w.clone(), ..inst.theta.clone() };
                gcn_loss(&inst, &inst.x, &t).0
            },
            &inst.theta.w1,
            h,
        );
        let fd_w2 = central_diff(
            &|w| {
                let t = GcnParams { w2: w.clone(), ..inst.theta.clone() };
                gcn_loss(&inst, &inst.x, &t).0
            },
            &inst.theta.w2,
            h,
        );
        for (tag, got, want) in [
            ("x", &grads[0], &fd_x),
            ("w1", &grads[1], &fd_w1),
            ("w2", &grads[2], &fd_w2),
        ] {
            let err = rel_err(got, want);
            worst = worst.max(err);
            if err > tol {
                failures.push(format!("instance {i} {tag}: rel err {err:.2e}"));
            }
        }
    }
    CheckOutcome::from_failures(
        "first-order gcn gradients",
        failures,
        format!("{instances} instances, worst rel err {worst:.2e}"),
    )
}

/// Random condensation instance small enough for finite differences.
fn random_matching_instance(
    rng: &mut ChaCha8Rng,
) -> (LabeledGraph, CondenseConfig, crate::matching::SyntheticState, Vec<GcnParams>) {
    let n = rng.gen_range(6..=12);
    let d = rng.gen_range(2..=5);
    let classes = 2usize;
    let x = rand_tensor_offset(rng, n, d);
    // alternating labels guarantee both classes in the train split
    let labels: Vec<u32> = (0..n).map(|i| (i % classes) as u32).collect();
    let mut edges = Vec::new();
    for i in 0..n as u32 {
        for j in (i + 1)..n as u32 {
            if rng.gen_bool(0.4) {
                edges.push((i, j));
            }
        }
    }
    let split = SplitSets { train: (0..n as u32).collect(), val: vec![], test: vec![] };
    let g = LabeledGraph::new(x, labels, edges, classes, split).unwrap();
    let cfg = CondenseConfig {
        ratio: 0.5,
        seed: rng.gen(),
        hidden: rng.gen_range(3..=5),
        adjgen_hidden: 4,
        theta_draws: 2,
        e_x: 1,
        e_phi: 1,
        ..Default::default()
    };
    let state = init_synthetic(&g, &cfg).unwrap();
    let dist = cfg.init_distribution();
    let thetas: Vec<GcnParams> = (0..cfg.theta_draws)
        .map(|dr| {
            GcnParams::sample(&dist, d, cfg.hidden, classes, cfg.use_bias, dr as u64)
        })
        .collect();
    (g, cfg, state, thetas)
}

/// Second-order audit: the E-step gradient (a gradient of a loss that itself
/// contains gradients) w.r.t. the synthetic features, against central
/// differences of the matching loss.
pub fn check_second_order(instances: usize, seed: u64, h: f64, tol: f64) -> CheckOutcome {
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for i in 0..instances {
        let mut rng = stream(seed, 0x5c_03 ^ ((i as u64) << 16));
        let (g, cfg, state, thetas) = random_matching_instance(&mut rng);
        let adj = NormalizedAdjacency::from_graph(&g);
        let real = RealSide::compute(&g, &adj, &thetas, &cfg).unwrap();

        let mut lb = build_matching_loss(&state, &real, &thetas, &cfg, true, false).unwrap();
        let gs = lb.tape.grad2(lb.loss, &[lb.x]).unwrap();
        let analytic = lb.tape.value(gs[0]).clone();

        let loss_at = |xt: &Tensor| {
            let mut s = state.clone();
            s.features = xt.clone();
            let lb = build_matching_loss(&s, &real, &thetas, &cfg, false, false).unwrap();
            lb.tape.value(lb.loss).item()
        };
        let fd = central_diff(&loss_at, &state.features, h);
        let err = rel_err(&analytic, &fd);
        worst = worst.max(err);
        if err > tol {
            failures.push(format!("instance {i}: rel err {err:.2e}"));
        }
    }
    CheckOutcome::from_failures(
        "second-order matching gradients",
        failures,
        format!("{instances} instances, worst rel err {worst:.2e}"),
    )
}

/// Freeze audit: E-steps on random row subsets leave every other row of X',
/// and the generator weights, bit-identical.
pub fn check_freeze(steps: usize, seed: u64) -> CheckOutcome {
    let mut failures = Vec::new();
    let mut done = 0usize;
    let mut i = 0u64;
    while done < steps {
        let mut rng = stream(seed, 0x5c_04 ^ (i << 16));
        i += 1;
        let (g, cfg, mut state, thetas) = random_matching_instance(&mut rng);
        let adj = NormalizedAdjacency::from_graph(&g);
        let real = RealSide::compute(&g, &adj, &thetas, &cfg).unwrap();
        for _ in 0..5 {
            if done >= steps {
                break;
            }
            let n = state.num_nodes();
            let rows: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.4)).collect();
            let before = state.features.clone();
            let phi_before = state.phi.clone();
            estep(&mut state, &rows, &real, &thetas, &cfg).unwrap();
            for r in 0..n {
                if rows.contains(&r) {
                    continue;
                }
                if state.features.row_slice(r) != before.row_slice(r) {
                    failures.push(format!("step {done}: frozen row {r} moved"));
                }
            }
            if state.phi != phi_before {
                failures.push(format!("step {done}: generator moved during an E-step"));
            }
            done += 1;
        }
    }
    CheckOutcome::from_failures(
        "e-step freeze invariance",
        failures,
        format!("{steps} randomized steps, all frozen rows bit-identical"),
    )
}

/// The fixed small dataset the reduction identity runs on.
pub fn reduction_instance() -> LabeledGraph {
    generate_sbm(&SbmParams {
        classes: 2,
        per_class: 10,
        p_in: 0.6,
        p_out: 0.1,
        feature_dim: 4,
        seed: 0,
        ..Default::default()
    })
    .unwrap()
}

/// Schedule-reduction identity: gcond, mgcond with one block, and exgc with
/// full activation every epoch must trace identical losses.
pub fn check_reduction_chain(epochs: usize, tol: f64) -> CheckOutcome {
    let g = reduction_instance();
    let base = CondenseConfig {
        ratio: 0.3,
        max_epochs: epochs,
        patience: epochs, // the identity is over the full horizon
        theta_draws: 2,
        hidden: 8,
        adjgen_hidden: 8,
        ..Default::default()
    };
    let runs: Vec<(&str, CondenseConfig)> = vec![
        ("gcond", CondenseConfig { mode: Mode::Gcond, ..base.clone() }),
        ("mgcond", CondenseConfig { mode: Mode::Mgcond, k: 1, ..base.clone() }),
        (
            "exgc",
            CondenseConfig {
                mode: Mode::Exgc,
                kappa: 1.0,
                selection_period: 1,
                ..base.clone()
            },
        ),
    ];
    let mut traces = Vec::new();
    for (name, cfg) in &runs {
        match condense(&g, cfg) {
            Ok((_, report)) => traces.push(report.trace),
            Err(e) => {
                return CheckOutcome {
                    name: "schedule reduction identity".into(),
                    passed: false,
                    detail: format!("{name} failed: {e}"),
                }
            }
        }
    }
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for (name, trace) in runs.iter().map(|(n, _)| n).zip(&traces).skip(1) {
        if trace.len() != traces[0].len() {
            failures.push(format!(
                "{name}: {} epochs vs gcond's {}",
                trace.len(),
                traces[0].len()
            ));
            continue;
        }
        for (t, (a, b)) in traces[0].iter().zip(trace.iter()).enumerate() {
            let gap = (a.loss - b.loss).abs();
            worst = worst.max(gap);
            if gap > tol {
                failures.push(format!("{name} epoch {t}: loss gap {gap:.2e}"));
            }
        }
    }
    CheckOutcome::from_failures(
        "schedule reduction identity",
        failures,
        format!("{epochs} epochs, worst loss gap {worst:.2e}"),
    )
}

/// The whole suite at default sizes.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    vec![
        check_primitives(seed),
        check_first_order(20, seed, 1e-5, 1e-5),
        check_second_order(20, seed, 1e-4, 1e-3),
        check_freeze(100, seed),
        check_reduction_chain(50, 1e-12),
    ]
}
