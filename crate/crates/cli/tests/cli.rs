use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn triage(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_triage"))
        .args(args)
        .current_dir(dir)
        .env_remove("TRIAGE_STORE")
        .env_remove("TRIAGE_CONFIG")
        .env_remove("TRIAGE_LISTEN")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "exit {:?}\nstdout {}\nstderr {}", o.status.code(), stdout(o), stderr(o));
    stdout(o)
}

fn lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn event(id: &str, code: &str, message: &str, class: &str) -> String {
    serde_json::json!({
        "event_id": id,
        "error_code": code,
        "error_message": message,
        "sql_type": "1",
        "sql_subtype": "2",
        "request_type": "Type1",
        "trace_excerpt": null,
        "class_id": class,
        "kind": "true_positive",
        "bug_id": null,
    })
    .to_string()
}

/// Two well separated classes, six rows each, with a small-corpus config.
fn two_class_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let mut rows = Vec::new();
    for i in 0..6 {
        rows.push(event(&format!("a{i}"), "100", &format!("deadlock detected on table orders row {i}"), "LOCK"));
        rows.push(event(&format!("b{i}"), "200", &format!("syntax error near keyword select token {i}"), "SYNTAX"));
    }
    let data = dir.join("train.jsonl");
    std::fs::write(&data, rows.join("\n") + "\n").unwrap();
    let config = dir.join("engine.toml");
    std::fs::write(&config, "k = 3\nmin_term_frequency = 1\n").unwrap();
    (data, config)
}

fn small_spec(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.toml");
    std::fs::write(&spec, "seed = 3\nn_classes = 8\nn_events = 600\ntrace_class_count = 2\noverlap_pairs = 1\nnovel_class_count = 2\n").unwrap();
    spec
}

#[test]
fn train_reports_first_version() {
    let dir = TempDir::new().unwrap();
    let (data, config) = two_class_fixture(dir.path());
    let out = ok(&triage(
        dir.path(),
        &["train", "--data", data.to_str().unwrap(), "--config", config.to_str().unwrap(), "--out", "model.json"],
    ));
    assert!(out.starts_with("version 1\n"), "{out}");
    assert!(out.contains("classes 2\n"));
    assert!(out.contains("rows 12\n"));
    assert!(dir.path().join("model.json").exists());
}

#[test]
fn classify_writes_one_result_per_event() {
    let dir = TempDir::new().unwrap();
    let (data, config) = two_class_fixture(dir.path());
    ok(&triage(
        dir.path(),
        &["train", "--data", data.to_str().unwrap(), "--config", config.to_str().unwrap(), "--out", "model.json"],
    ));
    let probe = [
        event("p0", "100", "deadlock detected on table orders row 9", "LOCK"),
        event("p1", "200", "syntax error near keyword select token 9", "SYNTAX"),
    ];
    std::fs::write(dir.path().join("probe.jsonl"), probe.join("\n")).unwrap();
    let out = ok(&triage(dir.path(), &["classify", "--model", "model.json", "--events", "probe.jsonl", "--out", "res.jsonl"]));
    assert!(out.starts_with("classified 2 events with model version 1"), "{out}");
    let res = lines(&dir.path().join("res.jsonl"));
    assert_eq!(res.len(), 2);
    assert_eq!(res[0]["event_id"], "p0");
    assert_eq!(res[0]["predicted"]["class_id"], "LOCK");
    assert_eq!(res[1]["predicted"]["class_id"], "SYNTAX");
}

#[test]
fn missing_model_is_a_usage_error_naming_the_path() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("e.jsonl"), "").unwrap();
    let o = triage(dir.path(), &["classify", "--model", "absent-model.json", "--events", "e.jsonl", "--out", "r.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent-model.json"), "{}", stderr(&o));
    assert!(!dir.path().join("r.jsonl").exists());
}

#[test]
fn json_errors_are_machine_readable() {
    let dir = TempDir::new().unwrap();
    let o = triage(dir.path(), &["--json", "train", "--data", "none.jsonl", "--out", "m.json"]);
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(err["error"]["code"], "usage");
    assert_eq!(err["error"]["exit_code"], 2);
    assert!(err["error"]["message"].as_str().unwrap().contains("none.jsonl"));

    let o = triage(dir.path(), &["--json", "no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(err["error"]["code"], "usage");
}

#[test]
fn malformed_jsonl_names_the_line() {
    let dir = TempDir::new().unwrap();
    let (data, _) = two_class_fixture(dir.path());
    let mut text = std::fs::read_to_string(&data).unwrap();
    text.push_str("{not json\n");
    std::fs::write(&data, text).unwrap();
    let o = triage(dir.path(), &["train", "--data", data.to_str().unwrap(), "--out", "m.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 13"), "{}", stderr(&o));
}

#[test]
fn evaluate_prints_the_reported_weighted_f1() {
    let dir = TempDir::new().unwrap();
    let spec = small_spec(dir.path());
    ok(&triage(dir.path(), &["synth", "corpus", "--spec", spec.to_str().unwrap(), "--out", "corpus.jsonl"]));
    let out = ok(&triage(
        dir.path(),
        &["evaluate", "--data", "corpus.jsonl", "--baseline", "euclidean", "--folds", "3", "--report", "report.json"],
    ));
    assert!(out.contains("KNN + CD"), "{out}");
    assert!(out.contains("KNN + ED"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let printed = |key: &str| -> f64 {
        let prefix = format!("{key} = ");
        out.lines().find_map(|l| l.strip_prefix(&prefix)).unwrap().parse().unwrap()
    };
    assert_eq!(printed("weighted_f1"), report["custom_distance"]["mean"]["weighted_f1"].as_f64().unwrap());
    assert_eq!(printed("baseline_weighted_f1"), report["euclidean"]["mean"]["weighted_f1"].as_f64().unwrap());
    assert_eq!(report["custom_distance"]["folds"].as_array().unwrap().len(), 3);
}

#[test]
fn evaluate_rejects_unknown_baseline() {
    let dir = TempDir::new().unwrap();
    let (data, _) = two_class_fixture(dir.path());
    let o = triage(dir.path(), &["evaluate", "--data", data.to_str().unwrap(), "--baseline", "cosine"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--baseline"));
}

#[test]
fn synth_is_deterministic_and_writes_truth() {
    let dir = TempDir::new().unwrap();
    let spec = small_spec(dir.path());
    let spec = spec.to_str().unwrap();
    ok(&triage(dir.path(), &["synth", "corpus", "--spec", spec, "--out", "a.jsonl"]));
    ok(&triage(dir.path(), &["synth", "corpus", "--spec", spec, "--out", "b.jsonl"]));
    ok(&triage(dir.path(), &["synth", "corpus", "--spec", spec, "--seed", "99", "--out", "c.jsonl"]));
    let read = |name: &str| std::fs::read_to_string(dir.path().join(name)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));

    let events = lines(&dir.path().join("a.jsonl"));
    let truth = lines(&dir.path().join("a.truth.jsonl"));
    assert_eq!(events.len(), 600);
    assert_eq!(truth.len(), events.len());
    for (e, t) in events.iter().zip(&truth) {
        assert_eq!(e["event_id"], t["event_id"]);
        assert_eq!(e["class_id"], t["class_id"]);
    }

    let replay = ["synth", "replay", "--spec", spec, "--events", "200", "--novel-rate", "0.2", "--seed", "4"];
    ok(&triage(dir.path(), &[&replay[..], &["--out", "r1.jsonl"]].concat()));
    ok(&triage(dir.path(), &[&replay[..], &["--out", "r2.jsonl"]].concat()));
    assert_eq!(read("r1.jsonl"), read("r2.jsonl"));
    let replay_events = lines(&dir.path().join("r1.jsonl"));
    let replay_truth = lines(&dir.path().join("r1.truth.jsonl"));
    assert_eq!(replay_events.len(), 200);
    assert_eq!(replay_truth.len(), 200);
    assert!(replay_events.iter().all(|e| e.get("class_id").is_none()));
    assert!(replay_truth.iter().any(|t| t["novel"] == true));
}

#[test]
fn downsample_thins_the_corpus() {
    let dir = TempDir::new().unwrap();
    let spec = small_spec(dir.path());
    ok(&triage(dir.path(), &["synth", "corpus", "--spec", spec.to_str().unwrap(), "--out", "corpus.jsonl"]));
    let o = triage(dir.path(), &["--json", "downsample", "--data", "corpus.jsonl", "--out", "small.jsonl"]);
    let summary: Value = serde_json::from_str(&ok(&o)).unwrap();
    let kept = lines(&dir.path().join("small.jsonl"));
    assert_eq!(summary["before"], 600);
    assert_eq!(summary["after"].as_u64().unwrap() as usize, kept.len());
    assert!(kept.len() < 600);
    let per_class = summary["per_class"].as_object().unwrap();
    assert_eq!(per_class.len(), 8);
    let after: u64 = per_class.values().map(|c| c["after"].as_u64().unwrap()).sum();
    assert_eq!(after as usize, kept.len());
}

#[test]
fn review_lists_uncertain_results_with_neighbors() {
    let dir = TempDir::new().unwrap();
    let spec = small_spec(dir.path());
    let spec = spec.to_str().unwrap();
    ok(&triage(dir.path(), &["synth", "corpus", "--spec", spec, "--out", "corpus.jsonl"]));
    ok(&triage(dir.path(), &["train", "--data", "corpus.jsonl", "--out", "model.json"]));
    ok(&triage(
        dir.path(),
        &["synth", "replay", "--spec", spec, "--events", "200", "--novel-rate", "0.5", "--out", "replay.jsonl"],
    ));
    ok(&triage(dir.path(), &["classify", "--model", "model.json", "--events", "replay.jsonl", "--out", "res.jsonl"]));
    let results = lines(&dir.path().join("res.jsonl"));
    let uncertain = results.iter().filter(|r| r["uncertain"] == true).count();
    assert!(uncertain > 0);

    let o = triage(dir.path(), &["--json", "review", "--model", "model.json", "--results", "res.jsonl"]);
    let review: Value = serde_json::from_str(&ok(&o)).unwrap();
    assert_eq!(review["uncertain"].as_u64().unwrap() as usize, uncertain);
    assert_eq!(review["items"].as_array().unwrap().len(), uncertain);

    let text = ok(&triage(
        dir.path(),
        &["review", "--model", "model.json", "--results", "res.jsonl", "--events", "replay.jsonl"],
    ));
    assert!(text.contains(&format!("{uncertain} of 200 results uncertain")), "{text}");
    assert!(text.contains("UNCERTAIN ("));
    assert!(text.contains("message: "));
    assert!(text.contains(" 1. row "));
}
