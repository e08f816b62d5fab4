use std::path::Path;
use std::process::{Command, Output};

fn conceptsim(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conceptsim"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn stdout_json(output: &Output) -> serde_json::Value {
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    serde_json::from_slice(&output.stdout).unwrap()
}

fn stderr_json(output: &Output) -> serde_json::Value {
    assert_eq!(output.status.code(), Some(1));
    serde_json::from_slice(&output.stderr).unwrap()
}

#[test]
fn full_run_ranks_the_planted_concept_first() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let synth = stdout_json(&conceptsim(out, &["synth"]));
    assert_eq!(synth["stage"], "synth");
    let extract = stdout_json(&conceptsim(out, &["extract"]));
    assert_eq!(extract["decompositions"], 2);
    assert_eq!(extract["cached"], 0);
    let compare = stdout_json(&conceptsim(out, &["compare", "--jobs", "2"]));
    assert_eq!(compare["concepts"], 20);
    let report = stdout_json(&conceptsim(out, &["report"]));
    assert_eq!(report["candidates"], 20);
    assert_eq!(report["reports"], 5);

    let ranking = std::fs::read_to_string(out.join("report/ranking.csv")).unwrap();
    let first: Vec<&str> = ranking.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[2], "1->2");
    // The planted concept is the one with the lowest cross-model similarity.
    let records: Vec<serde_json::Value> = std::fs::read_to_string(out.join("compare/similarity.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let planted = records
        .iter()
        .filter(|r| r["direction"] == "1->2")
        .min_by(|a, b| a["cmcs_pearson"].as_f64().partial_cmp(&b["cmcs_pearson"].as_f64()).unwrap())
        .unwrap();
    assert_eq!(first[3], planted["concept_index"].to_string());

    let again = stdout_json(&conceptsim(out, &["extract"]));
    assert_eq!(again["cached"], 2);
}

#[test]
fn stage_dependency_error_is_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let output = conceptsim(dir.path(), &["compare"]);
    assert!(output.stdout.is_empty());
    let err = stderr_json(&output);
    assert_eq!(err["kind"], "stage_dependency");
    assert!(err["message"].as_str().unwrap().contains("conceptsim synth"));

    let err = stderr_json(&conceptsim(dir.path(), &["report"]));
    assert_eq!(err["kind"], "stage_dependency");
}

#[test]
fn unknown_config_key_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "k = 5\nlamda = 0.2\n").unwrap();
    let err = stderr_json(&conceptsim(dir.path(), &["--config", config.to_str().unwrap(), "synth"]));
    assert_eq!(err["kind"], "config_parse");
    assert!(err["message"].as_str().unwrap().contains("lamda"));
}

#[test]
fn invalid_setting_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "k = 0\n").unwrap();
    let err = stderr_json(&conceptsim(dir.path(), &["--config", config.to_str().unwrap(), "synth"]));
    assert_eq!(err["kind"], "config");
}

#[test]
fn seed_flag_changes_the_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    stdout_json(&conceptsim(&a, &["synth", "--seed", "1"]));
    stdout_json(&conceptsim(&b, &["synth", "--seed", "1"]));
    stdout_json(&conceptsim(&c, &["synth", "--seed", "2"]));
    let read = |root: &Path| std::fs::read(root.join("synth/model2.npz")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}
