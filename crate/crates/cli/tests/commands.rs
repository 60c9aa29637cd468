use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use paced_forest::run::{DataManifest, MetricsReport, RunManifest};

const TINY: &str = r#"{
  "data": {"source": {"synthetic": {"n": 60}}},
  "model": {"hidden": [8], "feature_dim": 8, "trees": 2, "depth": 3},
  "schedule": {"paces": 3},
  "training": {"warmup_epochs": 2, "epochs_per_pace": 1, "leaf_iterations": 5}
}"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_paced-forest"));
    c.env_remove("PACED_FOREST_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_writes_rows_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"seed": 5, "data": {"source": {"synthetic": {"n": 40}}}}"#);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&run(&["generate", "--config", s(&cfg), "--out", s(&a)]));
    ok(&run(&["generate", "--config", s(&cfg), "--out", s(&b)]));
    let text = std::fs::read(a.join("data.csv")).unwrap();
    assert_eq!(text, std::fs::read(b.join("data.csv")).unwrap());
    let lines: Vec<&str> = std::str::from_utf8(&text).unwrap().lines().collect();
    assert_eq!(lines.len(), 41);
    assert_eq!(lines[0], "x0,x1,x2,x3,x4,x5,x6,x7,y");
}

#[test]
fn generated_histogram_matches_recount() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"data": {"source": {"synthetic": {"n": 1000}}}}"#);
    let out = dir.path().join("d");
    ok(&run(&["generate", "--config", s(&cfg), "--out", s(&out)]));
    let m: DataManifest = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let ds = paced_forest::csvio::load_csv(&out.join("data.csv"), "y", 1.0).unwrap();
    let mut counts = vec![0usize; m.group_edges.len() - 1];
    for y in ds.targets() {
        let g = m.group_edges.windows(2).position(|w| y >= w[0] && y < w[1]).unwrap_or(counts.len() - 1);
        counts[g] += 1;
    }
    assert_eq!(counts, m.group_histogram);
    assert_eq!(m.group_histogram.iter().sum::<usize>(), 1000);
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"schedule": {"paces": "six"}}"#);
    let out = run(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
    let out = run(&["train", "--config", s(&dir.path().join("missing.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["train", "--mode", "fast", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numeric_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &TINY.replace(r#""warmup_epochs": 2"#, r#""warmup_epochs": 2, "learning_rate": 1e300"#));
    let out = run(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("epoch") && err.contains("step"), "{err}");
}

#[test]
fn drf_smoke_run_writes_a_complete_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &TINY.replace("60", "50"));
    let t = std::time::Instant::now();
    ok(&run(&["train", "--config", s(&cfg), "--out", s(dir.path()), "--mode", "drf", "--seed", "3"]));
    assert!(t.elapsed().as_secs() < 60);
    let run_dir = dir.path().join("run-3");
    for f in ["manifest.json", "paces.csv", "selection.csv", "grouprank.csv", "metrics.json", "timing.csv", "test.csv", "pace-0/backbone.json", "pace-0/forest.json"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!((m.seed, m.mode.as_str()), (3, "drf"));
    let paces = std::fs::read_to_string(run_dir.join("paces.csv")).unwrap();
    assert_eq!(paces.lines().count(), 2);
}

#[test]
fn spu_logs_every_pace_and_differs_from_sp_only_by_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", TINY);
    let (a, b) = (dir.path().join("sp"), dir.path().join("spu"));
    ok(&run(&["train", "--config", s(&cfg), "--out", s(&a), "--mode", "sp"]));
    ok(&run(&["train", "--config", s(&cfg), "--out", s(&b), "--mode", "spu"]));
    let read = |d: &Path| -> RunManifest { serde_json::from_str(&std::fs::read_to_string(d.join("run-0/manifest.json")).unwrap()).unwrap() };
    let (ma, mb) = (read(&a), read(&b));
    let mut ca = ma.config.clone();
    ca.mode = mb.config.mode;
    assert_eq!(ca, mb.config);
    let gammas = |d: &Path| -> Vec<f64> {
        let text = std::fs::read_to_string(d.join("run-0/paces.csv")).unwrap();
        text.lines().skip(1).map(|l| l.split(',').nth(7).unwrap().parse().unwrap()).collect()
    };
    assert_eq!(gammas(&a), vec![0.0; 3]);
    let g = gammas(&b);
    assert_eq!(g.len(), 3);
    assert!(g[0] > 0.0 && g[2] == 0.0);
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", TINY);
    let root = dir.path().join("envroot");
    let out = bin()
        .args(["train", "--config", s(&cfg), "--mode", "drf"])
        .env("PACED_FOREST_OUT", &root)
        .output()
        .unwrap();
    ok(&out);
    assert!(root.join("run-0/paces.csv").is_file());
}

#[test]
fn sweep_cap_table_follows_input_order() {
    let dir = tempfile::tempdir().unwrap();
    let noisy = TINY.replace(r#""data": {"#, r#""data": {"label_noise": {"fraction": 0.1}, "#);
    let cfg = write_config(dir.path(), "c.json", &noisy);
    let out = run(&["sweep-cap", "--config", s(&cfg), "--out", s(dir.path()), "--proportions", "0.2,0,0.1"]);
    ok(&out);
    let table = std::fs::read_to_string(dir.path().join("sweep_cap.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), ["0.2", "0", "0.1"]);
    // 48 training samples: floor(0.2 * 48) = 9, floor(0.1 * 48) = 4.
    assert_eq!(rows.iter().map(|r| r[5]).collect::<Vec<_>>(), ["9", "0", "4"]);

    let plain = write_config(dir.path(), "p.json", TINY);
    let out = run(&["sweep-cap", "--config", s(&plain), "--out", s(dir.path()), "--proportions", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_schemes_runs_all_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", TINY);
    ok(&run(&["sweep-schemes", "--config", s(&cfg), "--out", s(dir.path())]));
    let table = std::fs::read_to_string(dir.path().join("sweep_schemes.csv")).unwrap();
    let names: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["hard", "linear", "log", "mixture"]);
}

#[test]
fn report_merges_runs_and_matches_re_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", TINY);
    ok(&run(&["train", "--config", s(&cfg), "--out", s(dir.path()), "--seed", "1"]));
    ok(&run(&["train", "--config", s(&cfg), "--out", s(dir.path()), "--seed", "2"]));
    let (r1, r2) = (dir.path().join("run-1"), dir.path().join("run-2"));

    let one = paced_forest::run::report(std::slice::from_ref(&r1)).unwrap();
    let metrics: Vec<MetricsReport> = serde_json::from_str(&std::fs::read_to_string(r1.join("metrics.json")).unwrap()).unwrap();
    let per_group: usize = metrics.iter().map(|m| m.per_group_mae.iter().flatten().count()).sum();
    // 12 paces.csv columns per pace (epsilon is empty without capping).
    assert_eq!(one.len(), 3 * 11 + per_group);

    let out_csv = dir.path().join("report.csv");
    ok(&run(&["report", s(&r1), s(&r2), "--out", s(&out_csv)]));
    let text = std::fs::read_to_string(&out_csv).unwrap();
    let runs: std::collections::BTreeSet<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(runs.len(), 2);

    for (pace, m) in metrics.iter().enumerate() {
        let out = run(&["evaluate", "--run", s(&r1), "--pace", &pace.to_string()]);
        ok(&out);
        let again: MetricsReport = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(again.per_group_mae.len(), m.per_group_mae.len());
        for (a, b) in again.per_group_mae.iter().zip(&m.per_group_mae) {
            match (a, b) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-12),
                (None, None) => {}
                _ => panic!("group presence differs"),
            }
        }
        assert!((again.mae_overall - m.mae_overall).abs() <= 1e-12);
    }
}

#[test]
fn report_lists_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let gone = dir.path().join("nope");
    let out = run(&["report", s(&gone)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("paces.csv") && err.contains("metrics.json"), "{err}");
}
