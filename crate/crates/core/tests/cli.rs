mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adaptest::data::ResponseMatrix;
use common::*;
use serde_json::Value;

fn adaptest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adaptest")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
    bank: PathBuf,
    matrix: PathBuf,
}

fn fixture(n_items: usize, n_models: usize, seed: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let items = random_items(n_items, seed);
    let bank = dir.path().join("bank.json");
    bank_of(&items).save(&bank).unwrap();
    let matrix = dir.path().join("matrix.csv");
    simulate_matrix(&items, &normal_thetas(n_models, seed + 1), seed + 2).save(&matrix).unwrap();
    Fixture { dir, bank, matrix }
}

fn session_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn help_and_version() {
    let out = adaptest(&["--help"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    for sub in ["preprocess", "calibrate", "run", "simulate", "metrics"] {
        assert!(text.contains(sub), "{text}");
    }
    let out = adaptest(&["run", "--help"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in ["--se-threshold", "--top-k", "--min-items", "--max-items", "--seed", "--external-cmd"] {
        assert!(text.contains(flag), "{flag}");
    }
    let out = adaptest(&["--version"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains(env!("CARGO_PKG_VERSION")));
    assert!(text.contains("schema"));
}

#[test]
fn preprocess_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("model_id");
    for j in 0..30 {
        csv += &format!(",i{j:02}");
    }
    csv += ",flat\n";
    let items = random_items(30, 8);
    let m = simulate_matrix(&items, &normal_thetas(120, 9), 10);
    for r in 0..m.n_models() {
        csv += &format!("m{r:03}");
        for j in 0..30 {
            let cell = match (r, j) {
                (0, 5) => "",
                _ => if m.get(r, j).unwrap() { "1" } else { "0" },
            };
            csv += &format!(",{cell}");
        }
        csv += ",1\n";
    }
    let input = dir.path().join("in.csv");
    fs::write(&input, csv).unwrap();
    let out_dir = dir.path().join("out");
    ok(&adaptest(&["preprocess", "--matrix", s(&input), "--out", s(&out_dir)]));
    let report = json(out_dir.join("filter_report.json"));
    assert_eq!(report["input_models"], 120);
    assert_eq!(report["input_items"], 31);
    assert_eq!(report["models_removed_incomplete"], 1);
    assert!(report["removed_models"].as_array().unwrap().contains(&Value::from("m000")));
    assert!(report["removed_items"].as_array().unwrap().contains(&Value::from("flat")));
    let filtered = ResponseMatrix::load(out_dir.join("filtered.csv")).unwrap();
    assert_eq!(filtered.n_models() as u64, report["retained_models"].as_u64().unwrap());
    assert_eq!(filtered.n_items() as u64, report["retained_items"].as_u64().unwrap());
    assert!(filtered.item_index("flat").is_none());
}

#[test]
fn missing_input_exits_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = adaptest(&["preprocess", "--matrix", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"cat": {"top_kk": 3}}"#).unwrap();
    let f = fixture(40, 20, 1);
    let out = adaptest(&["run", "--bank", s(&f.bank), "--matrix", s(&f.matrix), "--config", s(&bad), "--out", s(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("top_kk"));
}

#[test]
fn calibrate_writes_bank_and_references() {
    let f = fixture(200, 500, 20);
    let out_dir = f.dir.path().join("cal");
    ok(&adaptest(&["calibrate", "--matrix", s(&f.matrix), "--out", s(&out_dir)]));
    let bank = json(out_dir.join("bank.json"));
    assert_eq!(bank["metadata"]["partitions"], 2);
    assert_eq!(bank["items"].as_array().unwrap().len(), 200);
    let refs = fs::read_to_string(out_dir.join("refs.csv")).unwrap();
    let mut lines = refs.lines();
    assert_eq!(lines.next(), Some("model_id,theta,se"));
    assert_eq!(lines.count(), 500);
    assert_eq!(json(out_dir.join("calibration_report.json")).as_array().unwrap().len(), 2);
}

#[test]
fn calibration_failure_exits_with_calibration_code() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.csv");
    fs::write(&input, "model_id,i1,i2\n").unwrap();
    let out = adaptest(&["calibrate", "--matrix", s(&input), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_is_reproducible_and_threshold_sensitive() {
    let f = fixture(200, 40, 30);
    let a = f.dir.path().join("a");
    let b = f.dir.path().join("b");
    for out in [&a, &b] {
        ok(&adaptest(&["run", "--bank", s(&f.bank), "--matrix", s(&f.matrix), "--se-threshold", "0.3", "--seed", "9", "--out", s(out)]));
    }
    let logs = session_files(&a.join("sessions"));
    assert_eq!(logs.len(), 40);
    assert_eq!(logs, session_files(&b.join("sessions")));
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    for (_, bytes) in &logs {
        let text = String::from_utf8(bytes.clone()).unwrap();
        let last: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
        assert!(last["n_items"].as_u64().unwrap() >= 30);
    }

    let multi = f.dir.path().join("multi");
    ok(&adaptest(&["run", "--bank", s(&f.bank), "--matrix", s(&f.matrix), "--se-threshold", "0.1,0.3", "--out", s(&multi)]));
    let rows = json(multi.join("summary.json"))["rows"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 2);
    assert!(rows[0]["avg_items"].as_f64().unwrap() > rows[1]["avg_items"].as_f64().unwrap());
    assert!(multi.join("se_0.1").join("manifest.json").exists());
}

#[test]
fn external_responders_and_metrics() {
    let f = fixture(120, 1, 40);
    let run_dir = f.dir.path().join("ext");
    ok(&adaptest(&[
        "run", "--bank", s(&f.bank), "--external-cmd", r#"cat > /dev/null; echo '{"correct":1}'"#,
        "--respondent", "x,y,z", "--top-k", "1", "--min-items", "12", "--max-items", "12", "--out", s(&run_dir),
    ]));
    let metrics_dir = f.dir.path().join("metrics");
    ok(&adaptest(&[
        "metrics", "--sessions", s(&run_dir.join("sessions")), "--bank", s(&f.bank),
        "--refs", s(&f.dir.path().join("absent.csv")), "--csv", "--out", s(&metrics_dir),
    ]));
    let report = json(metrics_dir.join("metrics.json"));
    assert_eq!(report["n_sessions"], 3);
    assert_eq!(report["avg_items"], 12.0);
    assert_eq!(report["overlap"]["chen"], 1.0);
    assert_eq!(report["overlap"]["jaccard"], 1.0);
    assert!(report["mae"].is_null());
    assert!((report["exposure"]["avg"].as_f64().unwrap() - 12.0 / 120.0).abs() < 1e-12);
    let csv = fs::read_to_string(metrics_dir.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("metric,value\n"));

    let failed = f.dir.path().join("failed");
    let out = adaptest(&["run", "--bank", s(&f.bank), "--external-cmd", "exit 1", "--respondent", "x", "--out", s(&failed)]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn simulate_is_seeded() {
    let f = fixture(150, 1, 50);
    let empty = f.dir.path().join("empty");
    ok(&adaptest(&["simulate", "--bank", s(&f.bank), "--n", "0", "--out", s(&empty)]));
    assert_eq!(fs::read_to_string(empty.join("truths.csv")).unwrap().lines().count(), 1);
    let mut outputs = Vec::new();
    for name in ["s1", "s2"] {
        let dir = f.dir.path().join(name);
        ok(&adaptest(&["simulate", "--bank", s(&f.bank), "--n", "25", "--seed", "4", "--out", s(&dir)]));
        outputs.push((fs::read(dir.join("recovery.json")).unwrap(), fs::read(dir.join("truths.csv")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let rows = serde_json::from_slice::<Value>(&outputs[0].0).unwrap();
    assert_eq!(rows[0]["n"], 25);
    assert!(rows[0]["mae"].as_f64().unwrap() < 1.0);
}
