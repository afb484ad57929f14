use std::path::Path;
use std::process::{Command, Output};

fn gcond(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcond"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn gen_small(dir: &Path, seed: u64) {
    let out = gcond(&[
        "gen-data",
        "--out",
        dir.to_str().unwrap(),
        "--classes",
        "2",
        "--per-class",
        "20",
        "--feature-dim",
        "4",
        "--seed",
        &seed.to_string(),
    ]);
    assert_ok(&out);
}

#[test]
fn gen_data_is_loadable_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    gen_small(&a, 7);
    gen_small(&b, 7);
    let (g, _) = gcond_core::graph::io::load_graph(&a).expect("loads");
    assert_eq!(g.num_nodes(), 40);
    assert_eq!(g.num_classes(), 2);
    for name in ["meta.json", "features.tsv", "labels.tsv", "edges.tsv", "splits.json"] {
        let fa = std::fs::read(a.join(name)).unwrap();
        let fb = std::fs::read(b.join(name)).unwrap();
        assert_eq!(fa, fb, "{name} differs between identical seeds");
    }
}

#[test]
fn gen_data_rejects_inverted_edge_probabilities() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gcond(&[
        "gen-data",
        "--out",
        tmp.path().join("d").to_str().unwrap(),
        "--p-in",
        "0.05",
        "--p-out",
        "0.4",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_explainer_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data, 0);
    let out = gcond(&[
        "condense",
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("c").to_str().unwrap(),
        "--mode",
        "exgc",
        "--explainer",
        "gnnexplainer",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_block_schedule_traces_match_the_unblocked_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data, 3);
    let common = [
        "--ratio",
        "0.3",
        "--max-epochs",
        "5",
        "--theta-draws",
        "1",
        "--hidden",
        "8",
        "--adjgen-hidden",
        "8",
        "--seed",
        "11",
    ];
    let a = tmp.path().join("gcond");
    let b = tmp.path().join("mgcond");
    let mut args_a = vec!["condense", "--data", data.to_str().unwrap(), "--out", a.to_str().unwrap(), "--mode", "gcond"];
    args_a.extend_from_slice(&common);
    let mut args_b = vec!["condense", "--data", data.to_str().unwrap(), "--out", b.to_str().unwrap(), "--mode", "mgcond", "--k", "1"];
    args_b.extend_from_slice(&common);
    assert_ok(&gcond(&args_a));
    assert_ok(&gcond(&args_b));

    // identical epoch/loss/active_frac columns; seconds is wall time and may differ
    let strip = |path: &Path| -> Vec<String> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| l.rsplitn(2, ',').nth(1).unwrap().to_string())
            .collect()
    };
    assert_eq!(strip(&a.join("trace.csv")), strip(&b.join("trace.csv")));
    let fa = std::fs::read(a.join("features.tsv")).unwrap();
    let fb = std::fs::read(b.join("features.tsv")).unwrap();
    assert_eq!(fa, fb);
}

#[test]
fn exgc_writes_importance_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data, 5);
    let out_dir = tmp.path().join("cond");
    let out = gcond(&[
        "condense",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--mode",
        "exgc",
        "--ratio",
        "0.3",
        "--max-epochs",
        "3",
        "--theta-draws",
        "1",
        "--hidden",
        "8",
        "--adjgen-hidden",
        "8",
    ]);
    assert_ok(&out);
    let tsv = std::fs::read_to_string(out_dir.join("scores.tsv")).unwrap();
    // 24 train nodes at ratio 0.3 -> 7 synthetic rows of node_index<TAB>score<TAB>rank
    let rows: Vec<Vec<&str>> = tsv.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 7);
    let mut ranks = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 3);
        assert_eq!(row[0], i.to_string());
        row[1].parse::<f64>().expect("score is a float");
        ranks.push(row[2].parse::<usize>().unwrap());
    }
    ranks.sort_unstable();
    assert_eq!(ranks, (1..=7).collect::<Vec<_>>());
    assert!(stdout(&out).starts_with("epochs 3 "));
}

#[test]
fn config_file_drives_a_run_and_flags_override_it() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data, 9);
    let cfg_path = tmp.path().join("run.json");
    let out_dir = tmp.path().join("cond");
    std::fs::write(
        &cfg_path,
        format!(
            concat!(
                "{{\"data\": {:?}, \"out\": {:?}, \"mode\": \"gcond\", \"ratio\": 0.3, ",
                "\"max_epochs\": 50, \"theta_draws\": 1, \"hidden\": 8, \"adjgen_hidden\": 8}}"
            ),
            data.to_str().unwrap(),
            out_dir.to_str().unwrap()
        ),
    )
    .unwrap();
    // flag wins over the file's max_epochs
    let out = gcond(&[
        "condense",
        "--config",
        cfg_path.to_str().unwrap(),
        "--max-epochs",
        "2",
    ]);
    assert_ok(&out);
    assert!(stdout(&out).starts_with("epochs 2 "));
    assert!(out_dir.join("meta.json").exists());
}

#[test]
fn baseline_artifact_has_no_generator_and_evaluates() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data, 2);
    let base = tmp.path().join("base");
    assert_ok(&gcond(&[
        "baseline",
        "--data",
        data.to_str().unwrap(),
        "--method",
        "kcenter",
        "--ratio",
        "0.3",
        "--out",
        base.to_str().unwrap(),
    ]));
    assert!(!base.join("phi.json").exists());
    let art = gcond_core::graph::io::load_condensed(&base).expect("loads");
    assert!(art.phi.is_none());

    let out = gcond(&[
        "evaluate",
        "--condensed",
        base.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--repeats",
        "2",
        "--epochs",
        "40",
    ]);
    assert_ok(&out);
    let line = stdout(&out);
    assert!(line.contains('±'), "no spread marker in {line:?}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(base.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["accs"].as_array().unwrap().len(), 2);
    assert!(report["bytes"].as_u64().unwrap() > 0);
}

#[test]
fn selfcheck_passes() {
    let out = gcond(&["selfcheck", "--seed", "1"]);
    assert_ok(&out);
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5);
    assert!(!text.contains("FAIL"));
}

#[test]
fn benchmark_runs_a_grid_and_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data, 4);

    let empty = tmp.path().join("empty.json");
    std::fs::write(&empty, format!("{{\"data\": {:?}}}", data.to_str().unwrap())).unwrap();
    let out_dir = tmp.path().join("bench-empty");
    assert_ok(&gcond(&[
        "benchmark",
        "--grid",
        empty.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    let csv = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(
        csv.trim_end(),
        "dataset,method,ratio,arch,mode,acc_mean,acc_std,epochs,seconds,bytes"
    );

    let grid = tmp.path().join("grid.json");
    std::fs::write(
        &grid,
        format!(
            concat!(
                "{{\"data\": {:?}, \"dataset\": \"toy\", \"hyper\": {{\"epochs\": 40}}, ",
                "\"cells\": [",
                "{{\"method\": \"random\", \"cfg\": {{\"ratio\": 0.3}}, \"repeats\": 2}}, ",
                "{{\"method\": \"herding\", \"cfg\": {{\"ratio\": 0.3}}, \"arch\": \"sgc\", \"repeats\": 2}}",
                "]}}"
            ),
            data.to_str().unwrap()
        ),
    )
    .unwrap();
    let out_dir = tmp.path().join("bench");
    assert_ok(&gcond(&[
        "benchmark",
        "--grid",
        grid.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--jobs",
        "2",
    ]));
    let csv = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("toy,")));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 2);
}
