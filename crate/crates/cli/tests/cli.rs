use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn sceneflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sceneflow"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = sceneflow(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json"))
        .collect();
    names.sort();
    names
}

/// Small corpus, 3 empty rooms and a 1-epoch model.
fn workspace() -> TempDir {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--out", "train", "--num", "4", "--seed", "1", "--max-instances", "9"]);
    ok(d, &["synth", "--out", "rooms", "--num", "3", "--seed", "2", "--max-instances", "9", "--empty-rooms", "--rules", "unused.json"]);
    ok(d, &["train", "--data", "train", "--rules", "train/rules.json", "--out", "run", "--epochs", "1", "--batch", "2"]);
    tmp
}

#[test]
fn generate_writes_num_graphs_per_room_and_logs() {
    let tmp = workspace();
    let d = tmp.path();
    ok(d, &["generate", "--data", "rooms", "--rules", "train/rules.json", "--model", "run/model.json", "--out", "gen", "--num", "5"]);
    assert_eq!(json_files(&d.join("gen")).len(), 15);
    let logs = std::fs::read_dir(d.join("gen")).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".log.jsonl")).count();
    assert_eq!(logs, 15);
}

#[test]
fn generation_is_deterministic_across_job_counts() {
    let tmp = workspace();
    let d = tmp.path();
    let args = |out: &'static str, jobs: &'static str| {
        vec!["generate", "--data", "rooms", "--rules", "train/rules.json", "--model", "run/model.json", "--out", out, "--num", "2", "--seed", "7", "--jobs", jobs]
    };
    ok(d, &args("a", "1"));
    ok(d, &args("b", "3"));
    for name in json_files(&d.join("a")) {
        let a = std::fs::read(d.join("a").join(&name)).unwrap();
        let b = std::fs::read(d.join("b").join(&name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn training_is_deterministic_and_writes_curve() {
    let tmp = workspace();
    let d = tmp.path();
    ok(d, &["train", "--data", "train", "--rules", "train/rules.json", "--out", "run2", "--epochs", "1", "--batch", "2"]);
    assert_eq!(std::fs::read(d.join("run/model.json")).unwrap(), std::fs::read(d.join("run2/model.json")).unwrap());
    let csv = std::fs::read_to_string(d.join("run/train_log.csv")).unwrap();
    assert!(csv.starts_with("epoch,l_n,l_e,l_m,l\n"));
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn evaluating_the_corpus_itself_is_fully_valid() {
    let tmp = workspace();
    let d = tmp.path();
    let report: serde_json::Value = serde_json::from_str(&ok(d, &["evaluate", "--data", "train", "--rules", "train/rules.json", "--json"])).unwrap();
    assert_eq!(report["node_validity"], 100.0);
    assert_eq!(report["edge_validity"], 100.0);
}

#[test]
fn dot_export_parses() {
    let tmp = workspace();
    let d = tmp.path();
    ok(d, &["generate", "--data", "rooms", "--rules", "train/rules.json", "--model", "run/model.json", "--out", "gen", "--num", "1"]);
    ok(d, &["export-dot", "--input", "gen", "--rules", "train/rules.json", "--out", "dot"]);
    let dots: Vec<_> = std::fs::read_dir(d.join("dot")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dots.len(), 3);
    for path in dots {
        let text = std::fs::read_to_string(&path).unwrap();
        graphviz_rust::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = workspace();
    let d = tmp.path();
    std::fs::write(d.join("run.json"), r#"{"rules": "train/rules.json", "generation": {"graphs_per_scene": 4, "max_nodes": 3}}"#).unwrap();
    ok(d, &["generate", "--config", "run.json", "--data", "rooms", "--model", "run/model.json", "--out", "gen", "--num", "2"]);
    assert_eq!(json_files(&d.join("gen")).len(), 6);
}

#[test]
fn exit_codes() {
    let tmp = workspace();
    let d = tmp.path();
    let code = |args: &[&str]| sceneflow(d, args).status.code().unwrap();
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["train", "--data", "train", "--rules", "train/rules.json", "--out", "x", "--alpha", "1.0"]), 1);
    assert_eq!(code(&["generate", "--data", "rooms", "--rules", "train/rules.json", "--model", "run/model.json", "--out", "x", "--lambda", "1.5", "--beta", "1.2"]), 1);
    assert_eq!(code(&["train", "--rules", "train/rules.json", "--out", "x"]), 1);
    assert_eq!(code(&["train", "--data", "missing", "--rules", "train/rules.json", "--out", "x"]), 2);
    std::fs::create_dir(d.join("one")).unwrap();
    std::fs::copy(d.join("train/scene_0000.json"), d.join("one/scene_0000.json")).unwrap();
    assert_eq!(code(&["train", "--data", "one", "--rules", "train/rules.json", "--out", "x"]), 2);
    assert!(!d.join("x").exists());
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn label_space_mismatch_is_a_data_error() {
    let tmp = workspace();
    let d = tmp.path();
    let mut rules: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("train/rules.json")).unwrap()).unwrap();
    rules["object_classes"][5] = "throne".into();
    std::fs::write(d.join("other.json"), rules.to_string()).unwrap();
    let out = sceneflow(d, &["train", "--data", "train", "--rules", "other.json", "--out", "y", "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
