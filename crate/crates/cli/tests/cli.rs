use grader_core::data::ScoreLabel;
use grader_core::dataset::{load_enriched, load_predictions, write_dataset, write_enriched};
use grader_llm::synthetic::{synthetic_corpus, SyntheticConfig};
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CONFIG: &str = r#"{
  "encoder": {"d": 16, "L": 32, "seed": 3},
  "model": {"heads": 2, "seed": 4},
  "train": {"epochs": 3, "learning_rate": 0.001, "seed": 5}
}"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(items: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.json"), CONFIG).unwrap();
        let data = synthetic_corpus(&SyntheticConfig { items, questions: 6, ..Default::default() });
        write_dataset(&data, dir.path().join("data.jsonl")).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        let out = Command::new(env!("CARGO_BIN_EXE_grader"))
            .current_dir(self.dir.path())
            .env("RUST_LOG", "warn")
            .arg("--config")
            .arg(self.path("config.json"))
            .args(args)
            .output()
            .unwrap();
        out
    }

    fn ok(&self, args: &[&str]) -> Value {
        let out = self.run(args);
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8(out.stdout).unwrap();
        serde_json::from_str(stdout.lines().last().unwrap()).unwrap_or(Value::Null)
    }
}

fn error_line(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    serde_json::from_str(lines[0]).unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn pipeline_end_to_end() {
    let ws = Workspace::new(48);
    let s = ws.ok(&["enrich", "--in", "data.jsonl", "--out", "enriched.jsonl", "--cache", "cache.jsonl"]);
    assert_eq!(s["items"], 48);
    // Reference key points are shared by items of one question and cached.
    let recorded = std::fs::read_to_string(ws.path("cache.jsonl")).unwrap().lines().count() as u64;
    assert_eq!(s["upstream_calls"].as_u64().unwrap(), recorded);
    assert!(recorded > 48 * 3);
    assert_eq!(load_enriched(ws.path("enriched.jsonl")).unwrap().len(), 48);

    // Replaying the recorded cache gives the same file without any provider.
    let s = ws.ok(&["enrich", "--in", "data.jsonl", "--out", "replayed.jsonl", "--cache", "cache.jsonl", "--mode", "replay"]);
    assert_eq!(s["upstream_calls"], 0);
    assert_eq!(read(&ws.path("enriched.jsonl")), read(&ws.path("replayed.jsonl")));

    let s = ws.ok(&["train", "--in", "enriched.jsonl", "--ckpt", "a.json"]);
    assert!(s["test_mse"].as_f64().unwrap() < 0.25);
    let log = std::fs::read_to_string(ws.path("a.epochs.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    ws.ok(&["train", "--in", "enriched.jsonl", "--ckpt", "b.json", "--log", "b.log"]);
    assert_eq!(read(&ws.path("a.json")), read(&ws.path("b.json")));
    ws.ok(&["train", "--in", "enriched.jsonl", "--ckpt", "c.json", "--seed", "9"]);
    assert_ne!(read(&ws.path("a.json")), read(&ws.path("c.json")));

    let s = ws.ok(&["evaluate", "--in", "enriched.jsonl", "--ckpt", "a.json", "--report", "report.json"]);
    let report: Value = serde_json::from_slice(&read(&ws.path("report.json"))).unwrap();
    assert_eq!(report["n"], 4);
    assert_eq!(report["qwk"], s["qwk"]);
    let observed: f64 = report["level_histograms"]["observed"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).map(|v| v.as_f64().unwrap()).sum();
    assert_eq!(observed, 4.0);

    ws.ok(&["grade", "--in", "enriched.jsonl", "--ckpt", "a.json", "--out", "preds.jsonl"]);
    let preds = load_predictions(ws.path("preds.jsonl")).unwrap();
    assert_eq!(preds.len(), 48);
    assert!(preds.iter().all(|p| p.predicted_score > 0.0 && p.predicted_score < 1.0));
}

#[test]
fn evaluate_constant_labels_is_perfect() {
    // With every label at 0.75 the model only has to learn a constant.
    let ws = Workspace::new(24);
    ws.ok(&["enrich", "--in", "data.jsonl", "--out", "enriched.jsonl"]);
    let mut items = load_enriched(ws.path("enriched.jsonl")).unwrap();
    for e in &mut items {
        e.item.label = Some(ScoreLabel::new(3.0, 4.0).unwrap());
    }
    write_enriched(&items, ws.path("flat.jsonl")).unwrap();
    ws.ok(&["train", "--in", "flat.jsonl", "--ckpt", "m.json", "--epochs", "30", "--lr", "0.003"]);
    let s = ws.ok(&["evaluate", "--in", "flat.jsonl", "--ckpt", "m.json", "--report", "r.json", "--split", "all"]);
    assert_eq!(s["qwk"], 1.0);
    assert_eq!(s["acc"], 1.0);
    assert_eq!(s["n"], 24);
}

#[test]
fn ablate_writes_six_rows() {
    let ws = Workspace::new(36);
    ws.ok(&["enrich", "--in", "data.jsonl", "--out", "enriched.jsonl"]);
    let out = ws.run(&["ablate", "--in", "enriched.jsonl", "--variants", "all", "--out", "ablation.json", "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    let names: Vec<&str> = table.lines().skip(1).map(|l| l.split("  ").next().unwrap().trim()).collect();
    assert_eq!(names, ["Full", "w/o KPM", "w/o PQM", "w/o LGE", "w/o TSM", "w/o Cross"]);
    let json: Value = serde_json::from_slice(&read(&ws.path("ablation.json"))).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 6);
}

#[test]
fn usage_and_validation_errors_exit_1() {
    let ws = Workspace::new(12);
    let out = ws.run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = ws.run(&["train", "--in", "data.jsonl", "--ckpt", "m.json", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));

    let out = ws.run(&["grade", "--in", "missing.jsonl", "--ckpt", "m.json", "--out", "p.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out)["error"], "validation");

    // A raw dataset is not an enriched one.
    let out = ws.run(&["train", "--in", "data.jsonl", "--ckpt", "m.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("data.jsonl"));

    std::fs::write(ws.path("bad.json"), r#"{"trian": {}}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_grader")).args(["--config", ws.path("bad.json").to_str().unwrap(), "serve"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = ws.run(&["enrich", "--in", "data.jsonl", "--out", "e.jsonl", "--mode", "replay"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_2() {
    let ws = Workspace::new(12);
    // Replay against an empty cache misses on the first request.
    std::fs::write(ws.path("empty.jsonl"), "").unwrap();
    let out = ws.run(&["enrich", "--in", "data.jsonl", "--out", "e.jsonl", "--mode", "replay", "--cache", "empty.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    let e = error_line(&out);
    assert_eq!(e["error"], "runtime");
    assert!(e["message"].as_str().unwrap().contains("12 of 12"));
    assert!(!ws.path("e.jsonl").exists());
}

#[test]
fn help_exits_0() {
    let out = Command::new(env!("CARGO_BIN_EXE_grader")).arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["enrich", "train", "evaluate", "grade", "ablate", "serve"] {
        assert!(text.contains(sub), "{sub}");
    }
}
