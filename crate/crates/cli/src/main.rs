//! `gcond`: generate benchmark graphs, condense them, evaluate the results,
//! run selection baselines, benchmark whole grids, and self-verify the
//! numeric core.
//!
//! Progress goes to standard error; standard output carries only the
//! machine-readable result lines. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gcond_core::coreset::{herding_select, kcenter_select, random_select, CoresetResult};
use gcond_core::explainers::{score_state, scores_to_tsv};
use gcond_core::graph::io::{load_condensed, load_graph, save_condensed, save_graph, LoadError};
use gcond_core::graph::sbm::{generate_sbm, SbmParams};
use gcond_core::graph::GraphError;
use gcond_core::harness::{
    benchmark, evaluate_condensed, Arch, BenchSpec, ClassifierHyper, EvalError, EvalMode,
};
use gcond_core::matching::{
    condense, trace_to_csv, BackboneLoop, CondenseConfig, CondenseError, ExplainerKind,
    MaskDistanceKind, Mode,
};
use gcond_core::models::GcnParams;

#[derive(Parser)]
#[command(
    name = "gcond",
    version,
    about = "Compress a labeled graph into a small synthetic graph by gradient matching, then evaluate and benchmark it"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a planted-partition benchmark dataset
    GenData(GenDataArgs),
    /// Condense a dataset into a small synthetic graph
    Condense(CondenseArgs),
    /// Train on a condensed graph and score it on the real test nodes
    Evaluate(EvaluateArgs),
    /// Selection baselines: keep real nodes instead of synthesizing
    Baseline(BaselineArgs),
    /// Run a grid of condense+evaluate cells and consolidate a report
    Benchmark(BenchmarkArgs),
    /// Finite-difference and reduction-identity audit of the numeric core
    Selfcheck(SelfcheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 0.3)]
    p_in: f64,
    #[arg(long, default_value_t = 0.02)]
    p_out: f64,
    #[arg(long, default_value_t = 16)]
    feature_dim: usize,
    /// Distance between class feature centroids
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.6)]
    train_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    val_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Gcond,
    Mgcond,
    Exgc,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExplainerArg {
    Sa,
    #[value(name = "local_mask")]
    LocalMask,
    #[value(name = "global_mask")]
    GlobalMask,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum LoopArg {
    OneStep,
    InnerLoop,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskDistanceArg {
    Mse,
    Kl,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Gcn,
    Sgc,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Random,
    Herding,
    Kcenter,
}

#[derive(Args)]
struct CondenseArgs {
    /// Dataset directory (overrides the config file)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory for the condensed graph (overrides the config file)
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON run configuration; flags override individual fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<ModeArg>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Block count for mgcond
    #[arg(long)]
    k: Option<usize>,
    /// Activation fraction per selection round for exgc
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    selection_period: Option<usize>,
    #[arg(long)]
    explainer: Option<ExplainerArg>,
    /// Train the still-inactive candidates instead of the active set
    #[arg(long)]
    literal_mset: bool,
    #[arg(long)]
    backbone_loop: Option<LoopArg>,
    #[arg(long)]
    mask_distance: Option<MaskDistanceArg>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Information-constraint Bernoulli rate
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    eta_x: Option<f64>,
    #[arg(long)]
    eta_phi: Option<f64>,
    #[arg(long)]
    eta_theta: Option<f64>,
    #[arg(long)]
    tau_theta: Option<usize>,
    #[arg(long)]
    theta_draws: Option<usize>,
    #[arg(long)]
    e_x: Option<usize>,
    #[arg(long)]
    e_phi: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Sparsification threshold for the saved adjacency
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    adjgen_hidden: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    condensed: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "gcn")]
    arch: ArchArg,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Train with an identity adjacency instead of the saved structure
    #[arg(long)]
    features_only: bool,
    /// Where to write the JSON report (default: <condensed>/eval.json)
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 0.2)]
    step_size: f64,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    method: MethodArg,
    #[arg(long)]
    ratio: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// JSON grid: dataset dir, classifier settings, and a list of cells
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for grid cells (default: all cores)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// JSON mirror of the condensation settings plus the two paths, so whole
/// runs can live in version-controlled files.
#[derive(Default, serde::Deserialize)]
#[serde(default)]
struct RunConfigFile {
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    #[serde(flatten)]
    cfg: CondenseConfig,
}

#[derive(serde::Deserialize)]
struct GridFile {
    data: PathBuf,
    #[serde(default)]
    dataset: Option<String>,
    #[serde(default)]
    hyper: ClassifierHyper,
    #[serde(default)]
    eval_seed: u64,
    #[serde(default)]
    cells: Vec<BenchSpec>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

type CliResult<T> = Result<T, Failure>;

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::InvalidParams(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<CondenseError> for Failure {
    fn from(e: CondenseError) -> Self {
        match e {
            CondenseError::InvalidConfig(_) => Failure::Usage(e.to_string()),
            CondenseError::Graph(g) => g.into(),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidConfig(_) => Failure::Usage(e.to_string()),
            EvalError::Graph(g) => g.into(),
            EvalError::Condense(c) => c.into(),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents)
        .map_err(|e| Failure::Runtime(format!("writing {}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Runtime(format!("reading {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("parsing {what} {}: {e}", path.display())))
}

fn run_gen_data(a: GenDataArgs) -> CliResult<()> {
    let params = SbmParams {
        classes: a.classes,
        per_class: a.per_class,
        p_in: a.p_in,
        p_out: a.p_out,
        feature_dim: a.feature_dim,
        separation: a.separation,
        noise: a.noise,
        train_frac: a.train_frac,
        val_frac: a.val_frac,
        seed: a.seed,
    };
    let g = generate_sbm(&params)?;
    save_graph(&a.out, &g)?;
    eprintln!(
        "wrote {} ({} nodes, {} edges, {} classes)",
        a.out.display(),
        g.num_nodes(),
        g.edges().len(),
        g.num_classes()
    );
    Ok(())
}

fn run_condense(a: CondenseArgs) -> CliResult<()> {
    let mut file = match &a.config {
        Some(path) => read_json::<RunConfigFile>(path, "config")?,
        None => RunConfigFile::default(),
    };
    let data = a
        .data
        .or(file.data.take())
        .ok_or_else(|| Failure::Usage("no dataset: pass --data or set it in the config".into()))?;
    let out = a
        .out
        .or(file.out.take())
        .ok_or_else(|| Failure::Usage("no output dir: pass --out or set it in the config".into()))?;
    let cfg = &mut file.cfg;
    if let Some(v) = a.mode {
        cfg.mode = match v {
            ModeArg::Gcond => Mode::Gcond,
            ModeArg::Mgcond => Mode::Mgcond,
            ModeArg::Exgc => Mode::Exgc,
        };
    }
    if let Some(v) = a.ratio {
        cfg.ratio = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.k {
        cfg.k = v;
    }
    if let Some(v) = a.kappa {
        cfg.kappa = v;
    }
    if let Some(v) = a.selection_period {
        cfg.selection_period = v;
    }
    if let Some(v) = a.explainer {
        cfg.explainer = match v {
            ExplainerArg::Sa => ExplainerKind::Sa,
            ExplainerArg::LocalMask => ExplainerKind::LocalMask,
            ExplainerArg::GlobalMask => ExplainerKind::GlobalMask,
            ExplainerArg::Random => ExplainerKind::Random,
        };
    }
    if a.literal_mset {
        cfg.literal_mset = true;
    }
    if let Some(v) = a.backbone_loop {
        cfg.backbone_loop = match v {
            LoopArg::OneStep => BackboneLoop::OneStep,
            LoopArg::InnerLoop => BackboneLoop::InnerLoop,
        };
    }
    if let Some(v) = a.mask_distance {
        cfg.mask_distance = match v {
            MaskDistanceArg::Mse => MaskDistanceKind::Mse,
            MaskDistanceArg::Kl => MaskDistanceKind::KlSoftmax,
        };
    }
    if let Some(v) = a.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = a.r {
        cfg.r = v;
    }
    if let Some(v) = a.eta_x {
        cfg.eta_x = v;
    }
    if let Some(v) = a.eta_phi {
        cfg.eta_phi = v;
    }
    if let Some(v) = a.eta_theta {
        cfg.eta_theta = v;
    }
    if let Some(v) = a.tau_theta {
        cfg.tau_theta = v;
    }
    if let Some(v) = a.theta_draws {
        cfg.theta_draws = v;
    }
    if let Some(v) = a.e_x {
        cfg.e_x = v;
    }
    if let Some(v) = a.e_phi {
        cfg.e_phi = v;
    }
    if let Some(v) = a.max_epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = a.patience {
        cfg.patience = v;
    }
    if let Some(v) = a.delta {
        cfg.delta = v;
    }
    if let Some(v) = a.hidden {
        cfg.hidden = v;
    }
    if let Some(v) = a.adjgen_hidden {
        cfg.adjgen_hidden = v;
    }

    let (g, _) = load_graph(&data)?;
    eprintln!(
        "condensing {} ({} nodes) at ratio {} in mode {}",
        data.display(),
        g.num_nodes(),
        cfg.ratio,
        cfg.mode
    );
    let (state, report) = condense(&g, cfg)?;
    let art = state.to_artifact(g.num_classes(), cfg.delta);
    save_condensed(&out, &art)?;
    write_file(&out.join("trace.csv"), &trace_to_csv(&report.trace))?;
    if cfg.mode == Mode::Exgc {
        // score the final state with the first unused parameter draw
        let draw = (report.epochs_run * cfg.theta_draws) as u64;
        let dist = cfg.init_distribution();
        let theta = GcnParams::sample(
            &dist,
            g.num_features(),
            cfg.hidden,
            g.num_classes(),
            cfg.use_bias,
            draw,
        );
        let scores = score_state(&state, &theta, cfg)?;
        write_file(&out.join("scores.tsv"), &scores_to_tsv(&scores))?;
    }
    eprintln!(
        "wrote {} ({} synthetic nodes, {:.2}s)",
        out.display(),
        art.num_nodes(),
        report.wall_seconds
    );
    let converged = report
        .converged_epoch
        .map(|e| e.to_string())
        .unwrap_or_else(|| "none".into());
    println!(
        "epochs {} converged {} loss {}",
        report.epochs_run, converged, report.final_loss
    );
    Ok(())
}

fn run_evaluate(a: EvaluateArgs) -> CliResult<()> {
    let art = load_condensed(&a.condensed)?;
    let (g, _) = load_graph(&a.data)?;
    let arch = match a.arch {
        ArchArg::Gcn => Arch::Gcn,
        ArchArg::Sgc => Arch::Sgc,
        ArchArg::Mlp => Arch::Mlp,
    };
    let mode = if a.features_only {
        EvalMode::FeaturesOnly
    } else {
        EvalMode::WithStructure
    };
    let hyper = ClassifierHyper {
        epochs: a.epochs,
        step_size: a.step_size,
        hidden: a.hidden,
        ..Default::default()
    };
    let mut report = evaluate_condensed(&art, &g, arch, mode, a.repeats, &hyper, a.seed)?;
    report.bytes = gcond_core::harness::dir_bytes(&a.condensed)?;
    for c in &report.missing_classes {
        eprintln!("warning: class {c} is in the real test split but not the condensed graph");
    }
    let report_path = a
        .report
        .unwrap_or_else(|| a.condensed.join("eval.json"));
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Failure::Runtime(format!("serializing report: {e}")))?;
    write_file(&report_path, &json)?;
    eprintln!("wrote {}", report_path.display());
    println!(
        "acc {:.4} ± {:.4} ({arch}, {mode}, {} repeats)",
        report.mean, report.std, a.repeats
    );
    Ok(())
}

fn run_baseline(a: BaselineArgs) -> CliResult<()> {
    let (g, _) = load_graph(&a.data)?;
    let sel: CoresetResult = match a.method {
        MethodArg::Random => random_select(&g, a.ratio, a.seed)?,
        MethodArg::Herding => herding_select(&g, a.ratio)?,
        MethodArg::Kcenter => kcenter_select(&g, a.ratio, a.seed)?,
    };
    let art = sel.to_artifact(&g)?;
    save_condensed(&a.out, &art)?;
    eprintln!(
        "wrote {} ({} selected nodes, method {})",
        a.out.display(),
        art.num_nodes(),
        sel.method
    );
    Ok(())
}

fn run_benchmark(a: BenchmarkArgs) -> CliResult<()> {
    if let Some(jobs) = a.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    let grid: GridFile = read_json(&a.grid, "grid")?;
    let (g, _) = load_graph(&grid.data)?;
    let dataset = grid.dataset.clone().unwrap_or_else(|| {
        grid.data
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });
    std::fs::create_dir_all(&a.out)?;
    let report = benchmark(
        &g,
        &dataset,
        &grid.cells,
        &a.out.join("cells"),
        &grid.hyper,
        grid.eval_seed,
    )?;
    write_file(&a.out.join("report.csv"), &report.to_csv())?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Failure::Runtime(format!("serializing report: {e}")))?;
    write_file(&a.out.join("report.json"), &json)?;
    for row in &report.rows {
        eprintln!(
            "{} {} ratio {} {}: acc {:.4} ± {:.4} in {:.2}s",
            row.dataset, row.method, row.ratio, row.arch, row.acc_mean, row.acc_std, row.seconds
        );
    }
    eprintln!("wrote {} rows to {}", report.rows.len(), a.out.display());
    Ok(())
}

fn run_selfcheck(a: SelfcheckArgs) -> CliResult<()> {
    let mut failed = false;
    for out in gcond_core::selfcheck::run_all(a.seed) {
        println!(
            "{} {} ({})",
            if out.passed { "PASS" } else { "FAIL" },
            out.name,
            out.detail
        );
        failed |= !out.passed;
    }
    if failed {
        Err(Failure::Runtime("self-check failed".into()))
    } else {
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::GenData(a) => run_gen_data(a),
        Cmd::Condense(a) => run_condense(a),
        Cmd::Evaluate(a) => run_evaluate(a),
        Cmd::Baseline(a) => run_baseline(a),
        Cmd::Benchmark(a) => run_benchmark(a),
        Cmd::Selfcheck(a) => run_selfcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
