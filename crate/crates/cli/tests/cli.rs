use std::path::Path;
use std::process::{Command, Output};

fn airshadow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_airshadow"))
        .args(args)
        .current_dir(dir)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = airshadow(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL_GRID: &str = r#"
[[models]]
family = "decision_tree"
max_depth = 10

[[models]]
family = "random_forest"
n_estimators = 10

[[models]]
family = "gaussian_nb"
"#;

#[test]
fn pipeline_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("grid.toml"), SMALL_GRID).unwrap();

    ok(dir, &["simulate", "--scenario", "lab-day", "--seed", "7", "--margin", "600", "--out", "d"]);
    for f in ["telemetry.ndjson", "annotations.csv", "scenario.toml"] {
        assert!(dir.join("d").join(f).exists(), "{f}");
    }
    // the written scenario replays to the same telemetry
    ok(dir, &["simulate", "--scenario", "d/scenario.toml", "--seed", "7", "--margin", "600", "--out", "e"]);
    assert_eq!(
        std::fs::read(dir.join("d/telemetry.ndjson")).unwrap(),
        std::fs::read(dir.join("e/telemetry.ndjson")).unwrap()
    );

    let msg = ok(dir, &["ingest", "--telemetry", "d/telemetry.ndjson", "--annotations", "d/annotations.csv", "--out", "d/dataset.csv"]);
    assert!(msg.contains("216 features"), "{msg}");
    let header = std::fs::read_to_string(dir.join("d/dataset.csv")).unwrap();
    assert!(header.lines().next().unwrap().starts_with("d1.co2.min,"));
    assert_eq!(header.lines().count(), 41);

    ok(dir, &["train", "--dataset", "d/dataset.csv", "--family", "rf", "--seed", "7", "--out", "m/rf.model"]);
    let ev = ok(dir, &["evaluate", "--model", "m/rf.model", "--dataset", "d/dataset.csv"]);
    assert!(ev.contains("weighted f1"), "{ev}");

    let pred = ok(dir, &["predict", "--model", "m/rf.model", "--telemetry", "d/telemetry.ndjson", "--stride", "120"]);
    let mut lines = pred.lines();
    assert!(lines.next().unwrap().starts_with("window_start,window_end,label,score,"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    for r in &rows {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!(f.len(), 4 + 8);
        let start: f64 = f[0].parse().unwrap();
        let end: f64 = f[1].parse().unwrap();
        assert_eq!(end - start, 600.0);
    }

    let bench = |out: &str| {
        ok(dir, &["benchmark", "--config", "grid.toml", "--seed", "7", "--dataset", "d/dataset.csv", "--out", out, "--format", "csv"])
    };
    let first = bench("r1.json");
    let second = bench("r2.json");
    assert_eq!(first, second);
    assert_eq!(
        std::fs::read(dir.join("r1.json")).unwrap(),
        std::fs::read(dir.join("r2.json")).unwrap()
    );
    assert_eq!(first.lines().count(), 4);
    let csv = ok(dir, &["report", "--report", "r1.json", "--format", "csv"]);
    assert_eq!(csv, first);
    let md = ok(dir, &["report", "--report", "r1.json", "--format", "markdown"]);
    assert!(md.starts_with("| Model |"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = airshadow(tmp.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage:"));
    let out = airshadow(tmp.path(), &["train", "--dataset"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(airshadow(tmp.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = airshadow(tmp.path(), &["train", "--dataset", "missing.csv", "--out", "m.model"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));
    assert!(!tmp.path().join("m.model").exists());

    std::fs::write(tmp.path().join("bad.model"), "airshadow-model v2\nfamily mlp\n{}\n").unwrap();
    std::fs::write(tmp.path().join("ds.csv"), "a,label\n1,enter\n").unwrap();
    let out = airshadow(tmp.path(), &["evaluate", "--model", "bad.model", "--dataset", "ds.csv"]);
    assert_eq!(out.status.code(), Some(2));

    let out = airshadow(tmp.path(), &["simulate", "--scenario", "nowhere.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
}
