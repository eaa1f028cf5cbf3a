use std::path::Path;
use std::process::{Command, Output};

use gcqrf::experiment::{run_benchmark, BenchmarkConfig, BenchmarkSetting};
use gcqrf::sim::{FKind, GKind};
use gcqrf::{Execution, ForestConfig, TauGrid};

fn gcqrf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcqrf"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = gcqrf(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn simulate(dir: &Path, out: &str, seed: &str) {
    ok(
        dir,
        &["simulate", "--setting", "nonlinear", "--n", "100", "--p", "10", "--snr", "2", "--seed", seed, "--out", out],
    );
}

#[test]
fn simulate_writes_expected_shape_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), "d.csv", "1");
    let text = read(tmp.path(), "d.csv");
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 101);
    assert!(lines.iter().all(|l| l.split(',').count() == 13));
    assert!(lines[0].starts_with("x_1,") && lines[0].ends_with(",z,y,delta"));
    // 100 rows x 10 default levels
    assert_eq!(read(tmp.path(), "d.oracle.csv").lines().count(), 1001);
    let manifest: serde_json::Value = serde_json::from_str(&read(tmp.path(), "d.csv.manifest.json")).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 1);
}

#[test]
fn train_predict_evaluate_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, "train.csv", "1");
    simulate(dir, "test.csv", "2");
    ok(dir, &["train", "--data", "train.csv", "--ntree", "20", "--seed", "5", "--out", "m.json"]);
    ok(
        dir,
        &["predict", "--model", "m.json", "--data", "test.csv", "--tau-grid", "0.5:0.5:0.05", "--out", "p.csv"],
    );
    let pred = read(dir, "p.csv");
    assert_eq!(pred.lines().next().unwrap(), "row,q_0.5");
    assert_eq!(pred.lines().count(), 101);

    ok(dir, &["predict", "--model", "m.json", "--data", "test.csv", "--out", "full.csv"]);
    ok(
        dir,
        &[
            "evaluate", "--pred", "full.csv", "--metric", "iqmse", "--oracle", "test.oracle.csv", "--train",
            "train.csv", "--baseline", "na", "--out", "e.csv",
        ],
    );
    let metrics = read(dir, "e.csv");
    let rel = metrics
        .lines()
        .find(|l| l.contains(",model,relative_iqmse,"))
        .expect("relative row");
    let value: f64 = rel.split(',').nth(4).unwrap().parse().unwrap();
    assert!(value > 0.0 && value.is_finite());

    ok(
        dir,
        &["evaluate", "--pred", "full.csv", "--metric", "ipcw-iqloss", "--data", "test.csv", "--train", "train.csv", "--out", "w.csv"],
    );
    assert_eq!(read(dir, "w.csv").lines().count(), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        simulate(dir, "d.csv", "9");
        ok(dir, &["train", "--data", "d.csv", "--ntree", "15", "--seed", "3", "--out", "m.json"]);
        ok(dir, &["predict", "--model", "m.json", "--data", "d.csv", "--out", "p.csv"]);
        ok(
            dir,
            &["importance", "--data", "d.csv", "--strategy", "permute", "--ntree", "10", "--seed", "4", "--out", "i.csv"],
        );
    }
    ok(
        b.path(),
        &["--threads", "1", "predict", "--model", "m.json", "--data", "d.csv", "--out", "p1.csv"],
    );
    for name in ["d.csv", "d.oracle.csv", "m.json", "p.csv", "i.csv"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name} differs");
    }
    assert_eq!(read(a.path(), "p.csv"), read(b.path(), "p1.csv"));
}

#[test]
fn importance_reads_groups_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir, "d.csv", "3");
    std::fs::write(dir.join("groups.txt"), "# first two\nx_1, x_2\n10\n").unwrap();
    ok(
        dir,
        &[
            "importance", "--data", "d.csv", "--groups", "groups.txt", "--strategy", "drop", "--k", "2", "--ntree",
            "10", "--out", "i.csv",
        ],
    );
    let text = read(dir, "i.csv");
    assert_eq!(text.lines().count(), 1 + 2 * 2);
    assert!(text.contains("x_1+x_2,"));
    assert!(text.contains("\nz,"));
}

fn cell(line: &str, i: usize) -> &str {
    line.split(',').nth(i).unwrap()
}

#[test]
fn benchmark_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("s.json"),
        r#"[{"f_kind": "linear", "g_kind": "homo", "n": 60, "p": 5}]"#,
    )
    .unwrap();
    ok(
        dir,
        &[
            "benchmark", "--settings", "s.json", "--snr-grid", "2", "--reps", "1", "--seed", "11", "--ntree", "25",
            "--tuning", "none", "--out", "b.csv",
        ],
    );
    let text = read(dir, "b.csv");
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3 * 6);

    let setting = BenchmarkSetting {
        f_kind: FKind::Linear,
        g_kind: GKind::Homo,
        n: 60,
        p: 5,
        n_test: None,
    };
    let mut forest = ForestConfig::default();
    forest.ntree = 25;
    let sized = ForestConfig::for_data(60, 6);
    forest.tree.mtry = sized.tree.mtry;
    forest.tree.nodesize = sized.tree.nodesize;
    let cfg = BenchmarkConfig {
        forest,
        tuning: None,
        eval_grid: TauGrid::default_eval(),
        seed: 11,
    };
    let expected = run_benchmark(&[setting], &[2.0], 1, &cfg, Execution::default()).unwrap();
    for method in ["gcqrf", "gcqrf-nocens", "na"] {
        let line = rows
            .iter()
            .find(|l| cell(l, 2) == method && cell(l, 3) == "relative_iqmse")
            .unwrap_or_else(|| panic!("no relative_iqmse row for {method}"));
        let want = expected
            .iter()
            .find(|r| r.method == method && r.metric == "relative_iqmse")
            .unwrap();
        assert_eq!(cell(line, 4).parse::<f64>().unwrap(), want.value, "{method}");
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(gcqrf(dir, &["no-such-command"]).status.code(), Some(2));
    assert_eq!(gcqrf(dir, &["train", "--data", "x.csv"]).status.code(), Some(2));

    simulate(dir, "d.csv", "1");
    ok(dir, &["train", "--data", "d.csv", "--ntree", "5", "--out", "m.json"]);
    let bad_grid = gcqrf(dir, &["predict", "--model", "m.json", "--data", "d.csv", "--tau-grid", "0.5", "--out", "p.csv"]);
    assert_eq!(bad_grid.status.code(), Some(2));

    let missing = gcqrf(dir, &["predict", "--model", "absent.json", "--data", "d.csv", "--out", "p.csv"]);
    assert_eq!(missing.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&missing.stderr).unwrap();
    assert_eq!(err["error"], "data");

    std::fs::write(dir.join("bad.csv"), "x_1,y,delta\n0.5,1.0,2\n").unwrap();
    let bad_delta = gcqrf(dir, &["train", "--data", "bad.csv", "--out", "m2.json"]);
    assert_eq!(bad_delta.status.code(), Some(3));

    std::fs::write(dir.join("m.json"), "{ not json").unwrap();
    let corrupt = gcqrf(dir, &["predict", "--model", "m.json", "--data", "d.csv", "--out", "p.csv"]);
    assert_eq!(corrupt.status.code(), Some(3));
}

#[test]
fn oracle_path_override() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &[
            "simulate", "--setting", "importance", "--rho", "0.5", "--n", "50", "--seed", "2", "--out", "d.csv",
            "--oracle", "o.csv", "--tau-grid", "0.25:0.75:0.25",
        ],
    );
    assert_eq!(read(dir, "o.csv").lines().count(), 1 + 50 * 3);
    let header = read(dir, "d.csv").lines().next().unwrap().to_string();
    assert_eq!(header, "x_1,x_2,x_3,x_4,x_5,x_6,z,y,delta");
    assert!(!dir.join("d.oracle.csv").exists());
}
