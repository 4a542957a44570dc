mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const S1_MASK: &str = "111111111111111111111110";

fn robocal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robocal"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path(p: &Path) -> String {
    p.display().to_string()
}

fn line_count(p: &Path) -> usize {
    std::fs::read_to_string(p).unwrap().lines().count()
}

/// Parses `RMSE=<x>mm MEAN=<y>mm MAX=<z>mm`.
fn metrics_line(line: &str) -> [f64; 3] {
    let vals: Vec<f64> = line
        .split_whitespace()
        .filter_map(|tok| tok.split_once('='))
        .filter_map(|(_, v)| v.strip_suffix("mm").map(|x| x.parse().unwrap()))
        .collect();
    assert_eq!(vals.len(), 3, "{line}");
    [vals[0], vals[1], vals[2]]
}

fn generate(dir: &Path, prefix: &str, extra: &[&str]) -> Output {
    let robot = path(&common::robot_file());
    let out_prefix = path(&dir.join(prefix));
    let mut args = vec!["generate", "--robot", &robot, "--out-prefix", &out_prefix];
    args.extend_from_slice(extra);
    robocal(&args)
}

#[test]
fn generate_splits_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = generate(
        dir.path(),
        "s",
        &["--n", "2000", "--split", "0.8", "--seed", "3"],
    );
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(line_count(&dir.path().join("s_train.csv")), 1601);
    assert_eq!(line_count(&dir.path().join("s_holdout.csv")), 401);
    let truth: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("s_truth.json")).unwrap())
            .unwrap();
    assert_eq!(truth["rng"], "chacha8/seed_from_u64");
    assert_eq!(truth["train_rows"], 1600);
    assert_eq!(truth["perturbation"]["seed"], 3);
    assert_eq!(truth["sample_seed"], 4);
    assert_eq!(truth["noise"]["seed"], 5);
}

#[test]
fn generate_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = generate(dir.path(), "one", &["--n", "1", "--split", "1.0"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(line_count(&dir.path().join("one_train.csv")), 2);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("one_holdout.csv")).unwrap(),
        "q1_deg,q2_deg,q3_deg,q4_deg,q5_deg,q6_deg,cable_mm\n"
    );
}

#[test]
fn generate_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let o = generate(dir.path(), "x", &["--split", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("x_train.csv").exists());

    let bad_robot = dir.path().join("robot.json");
    std::fs::write(&bad_robot, "{\"links\": []}").unwrap();
    let o = robocal(&[
        "generate",
        "--robot",
        &path(&bad_robot),
        "--out-prefix",
        &path(&dir.path().join("y")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());

    let o = generate(Path::new("/nonexistent/dir"), "z", &["--n", "5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn calibrate_exact_nominal_data() {
    let dir = tempfile::tempdir().unwrap();
    generate(
        dir.path(),
        "nom",
        &[
            "--n",
            "200",
            "--angle-bound-deg",
            "0",
            "--length-bound-mm",
            "0",
            "--noise-sigma-mm",
            "0",
        ],
    );
    let robot = path(&common::robot_file());
    let report = dir.path().join("rep.json");
    let o = robocal(&[
        "calibrate",
        "--robot",
        &robot,
        "--train",
        &path(&dir.path().join("nom_train.csv")),
        "--out",
        &path(&report),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let [rmse, _, _] = metrics_line(stdout(&o).trim());
    assert!(rmse < 1e-9, "{rmse}");

    let o = robocal(&[
        "evaluate",
        "--robot",
        &robot,
        "--params",
        &path(&report),
        "--holdout",
        &path(&dir.path().join("nom_holdout.csv")),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(metrics_line(lines[0])[0] < 1e-9);
    assert!(metrics_line(lines[1])[0] < 1e-9);
}

#[test]
fn calibrate_missing_csv_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("rep.json");
    let trace = dir.path().join("trace.csv");
    let o = robocal(&[
        "calibrate",
        "--robot",
        &path(&common::robot_file()),
        "--train",
        &path(&dir.path().join("missing.csv")),
        "--out",
        &path(&report),
        "--trace-csv",
        &path(&trace),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!report.exists());
    assert!(!trace.exists());
}

#[test]
fn calibrate_rejects_bad_flags() {
    let sc = common::generate(50, 0.8, 0.0, 2);
    let out = sc.dir.path().join("rep.json");
    for extra in [["--mask", "1101"], ["--eta", "-1"], ["--tol-rel", "0"]] {
        let mut args = vec!["calibrate", "--robot", "", "--train", "", "--out", ""];
        let (robot, train, outp) = (
            path(&common::robot_file()),
            path(&sc.train_csv()),
            path(&out),
        );
        args[2] = &robot;
        args[4] = &train;
        args[6] = &outp;
        args.extend_from_slice(&extra);
        assert_eq!(robocal(&args).status.code(), Some(2), "{extra:?}");
        assert!(!out.exists());
    }
}

#[test]
fn calibrate_reports_divergence() {
    let sc = common::generate(50, 0.8, 0.0, 2);
    let out = sc.dir.path().join("rep.json");
    let o = robocal(&[
        "calibrate",
        "--robot",
        &path(&common::robot_file()),
        "--train",
        &path(&sc.train_csv()),
        "--out",
        &path(&out),
        "--eta",
        "1e300",
        "--beta3",
        "0",
        "--max-iters",
        "50",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["converged"], false);
    assert_eq!(report["stop_reason"], "diverged");
}

#[test]
fn calibrate_without_convergence_exits_one() {
    let sc = common::generate(100, 0.8, 0.0, 2);
    let out = sc.dir.path().join("rep.json");
    let o = robocal(&[
        "calibrate",
        "--robot",
        &path(&common::robot_file()),
        "--train",
        &path(&sc.train_csv()),
        "--out",
        &path(&out),
        "--max-iters",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["converged"], false);
    assert_eq!(report["iterations_run"], 5);
    assert_eq!(report["trace"].as_array().unwrap().len(), 5);
}

#[test]
fn s1_calibrate_then_evaluate() {
    let sc = common::s1(0.0);
    let robot = path(&common::robot_file());
    let report = sc.dir.path().join("rep.json");
    let trace = sc.dir.path().join("trace.csv");
    let o = robocal(&[
        "calibrate",
        "--robot",
        &robot,
        "--train",
        &path(&sc.train_csv()),
        "--holdout",
        &path(&sc.holdout_csv()),
        "--out",
        &path(&report),
        "--trace-csv",
        &path(&trace),
        "--mask",
        S1_MASK,
        "--threads",
        "0",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let [rmse, mean, max] = metrics_line(stdout(&o).trim());
    assert!(rmse < 1e-3 && mean <= rmse && rmse <= max, "{rmse}");

    let json: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["converged"], true);
    let n = json["iterations_run"].as_u64().unwrap() as usize;
    assert_eq!(json["trace"].as_array().unwrap().len(), n);
    assert_eq!(json["final_delta"].as_array().unwrap().len(), 24);
    assert_eq!(json["param_order"][23], "theta6");
    assert_eq!(json["final_delta"][23], 0.0);
    assert!(json["wall_time_s"].as_f64().unwrap() > 0.0);
    assert!(json["holdout"]["rmse_mm"].as_f64().unwrap() < 1e-2);
    assert_eq!(line_count(&trace), n + 1);

    let o = robocal(&[
        "evaluate",
        "--robot",
        &robot,
        "--params",
        &path(&report),
        "--holdout",
        &path(&sc.holdout_csv()),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("before"));
    assert!(lines[1].starts_with("after"));
    let before = metrics_line(lines[0])[0];
    let after = metrics_line(lines[1])[0];
    assert!((0.5..50.0).contains(&before), "{before}");
    assert!(after < 1e-2, "{after}");

    // nominal only
    let o = robocal(&[
        "evaluate",
        "--robot",
        &robot,
        "--holdout",
        &path(&sc.holdout_csv()),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1);
    assert_eq!(metrics_line(text.lines().next().unwrap())[0], before);

    // a robot that differs from the one the report was made for
    let mut other: Value =
        serde_json::from_str(&std::fs::read_to_string(common::robot_file()).unwrap()).unwrap();
    other["links"][0]["d_mm"] = Value::from(654.0);
    let other_path = sc.dir.path().join("other.json");
    std::fs::write(&other_path, other.to_string()).unwrap();
    let o = robocal(&[
        "evaluate",
        "--robot",
        &path(&other_path),
        "--params",
        &path(&report),
        "--holdout",
        &path(&sc.holdout_csv()),
    ]);
    assert_ne!(o.status.code(), Some(0));

    // the ground-truth sidecar is accepted as a parameter source
    let truth = common::suffixed(&sc.prefix, "_truth.json");
    let out_json = sc.dir.path().join("eval.json");
    let o = robocal(&[
        "evaluate",
        "--robot",
        &robot,
        "--params",
        &path(&truth),
        "--holdout",
        &path(&sc.holdout_csv()),
        "--out",
        &path(&out_json),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let eval: Value = serde_json::from_str(&std::fs::read_to_string(&out_json).unwrap()).unwrap();
    assert_eq!(eval["after"]["rmse_mm"], 0.0);
}

#[test]
fn compare_single_variant() {
    let sc = common::generate(200, 0.8, 0.0, 4);
    let out = sc.dir.path().join("cmp.json");
    let o = robocal(&[
        "compare",
        "--robot",
        &path(&common::robot_file()),
        "--train",
        &path(&sc.train_csv()),
        "--variants",
        "adamodw",
        "--out",
        &path(&out),
        "--max-iters",
        "50",
    ]);
    assert_ne!(o.status.code(), Some(2));
    let json: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let variants = json["variants"].as_array().unwrap();
    assert_eq!(variants.len(), 1);
    assert_eq!(variants[0]["variant"], "adamodw");
    assert_eq!(variants[0]["trace"].as_array().unwrap().len(), 50);

    let o = robocal(&[
        "compare",
        "--robot",
        &path(&common::robot_file()),
        "--train",
        &path(&sc.train_csv()),
        "--variants",
        "sgd",
        "--out",
        &path(&sc.dir.path().join("bad.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn s1_compare_all_variants() {
    let sc = common::s1(0.0);
    let out = sc.dir.path().join("cmp.json");
    let o = robocal(&[
        "compare",
        "--robot",
        &path(&common::robot_file()),
        "--train",
        &path(&sc.train_csv()),
        "--holdout",
        &path(&sc.holdout_csv()),
        "--out",
        &path(&out),
        "--mask",
        S1_MASK,
        "--threads",
        "0",
    ]);
    assert_ne!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let json: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let variants = json["variants"].as_array().unwrap();
    let names: Vec<&str> = variants
        .iter()
        .map(|v| v["variant"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["adam", "adamw", "adamod", "adamodw"]);
    for v in variants {
        let rmse = v["final"]["rmse_mm"].as_f64().unwrap();
        assert!(rmse < 1e-2, "{}: {rmse}", v["variant"]);
    }

    // the capped variants throttle the first step, so iteration 1 already differs
    let rmse_at = |i: usize, k: usize| variants[i]["trace"][k]["rmse_mm"].as_f64().unwrap();
    assert_eq!(rmse_at(0, 0), rmse_at(3, 0));
    assert_ne!(rmse_at(0, 1), rmse_at(3, 1));

    let converged: Vec<bool> = variants
        .iter()
        .map(|v| v["converged"].as_bool().unwrap())
        .collect();
    assert_eq!(
        o.status.code(),
        Some(if converged.iter().all(|c| *c) { 0 } else { 1 })
    );
    assert!(
        converged.iter().all(|c| *c),
        "converged per variant: {converged:?}"
    );
}
