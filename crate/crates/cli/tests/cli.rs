use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_augcode"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn run_stdin(args: &[&str], input: &str) -> Output {
    let mut child = bin()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn core_fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(rel)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["build-acs", "--scenario", "9", "--input", "x", "--output", "y"])), 1);
    assert_eq!(code(&run(&["train", "--input", "x"])), 1);
    for sub in ["extract", "enrich", "build-acs", "train", "eval", "search", "replay", "synth"] {
        let o = run(&[sub, "--help"]);
        assert_eq!(code(&o), 0, "{sub} --help");
        assert!(stdout(&o).contains("Usage"));
    }
}

#[test]
fn extract_fixture_tree_and_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("corpus.jsonl");
    let o = run(&["extract", "--input", s(&core_fixture("tree")), "--output", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(lines(&out).len(), 7);

    let empty = tempfile::tempdir().unwrap();
    let out2 = dir.path().join("empty.jsonl");
    assert_eq!(code(&run(&["extract", "--input", s(empty.path()), "--output", s(&out2)])), 0);
    assert!(lines(&out2).is_empty());

    let out3 = dir.path().join("broken.jsonl");
    let o = run(&["extract", "--input", s(&core_fixture("tree_broken")), "--output", s(&out3)]);
    assert_eq!(code(&o), 0);
    assert_eq!(lines(&out3).len(), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.py:2"));

    assert_eq!(code(&run(&["extract", "--input", s(&dir.path().join("missing")), "--output", s(&out3)])), 3);
}

#[test]
fn malformed_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"repo\": 1}\n").unwrap();
    let o = run(&["build-acs", "--scenario", "0", "--input", s(&bad), "--output", s(&dir.path().join("o.jsonl"))]);
    assert_eq!(code(&o), 2);
    let o = run(&["build-acs", "--scenario", "0", "--input", s(&dir.path().join("nope.jsonl")), "--output", "o"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn offline_enrich_and_commit_aware_build() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    std::fs::create_dir_all(cache.join("acme__widgets")).unwrap();
    for e in std::fs::read_dir(core_fixture("enrichment/cache/acme__widgets")).unwrap() {
        let e = e.unwrap();
        std::fs::copy(e.path(), cache.join("acme__widgets").join(e.file_name())).unwrap();
    }
    let corpus = core_fixture("enrichment/corpus.jsonl");
    let commits = dir.path().join("commits.jsonl");
    let o = run(&["enrich", "--input", s(&corpus), "--cache", s(&cache), "--offline", "--commits-out", s(&commits)]);
    assert_eq!(code(&o), 0);
    let summary = stdout(&o);
    assert!(summary.contains("hit_cache=2"), "{summary}");
    assert!(summary.contains("error=2"), "{summary}");
    assert!(summary.contains("network_calls=0"), "{summary}");
    assert_eq!(lines(&commits).len(), 2);

    let acs = dir.path().join("acs3.jsonl");
    let o = run(&["build-acs", "--scenario", "3", "--input", s(&corpus), "--commits", s(&cache), "--output", s(&acs)]);
    assert_eq!(code(&o), 0);
    let first: serde_json::Value = serde_json::from_str(&lines(&acs)[0]).unwrap();
    let x: Vec<&str> = first["docstring_tokens"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(x.ends_with(&["add", "widget", "loader"]), "{x:?}");
    assert_eq!(first["acs"], 3);
}

fn synth_and_train(dir: &Path, pairs: usize) -> (PathBuf, PathBuf) {
    let data = dir.join("pairs.jsonl");
    let o = run(&["synth", "separable", "--output", s(&data), "--size", &pairs.to_string()]);
    assert_eq!(code(&o), 0);
    let model = dir.join("model.bin");
    let o = run(&["train", "--input", s(&data), "--output", s(&model), "--epochs", "20", "--dim", "64", "--min-frequency", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (data, model)
}

#[test]
fn search_self_retrieval_and_loop_behaviour() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = synth_and_train(dir.path(), 400);
    let rows: Vec<serde_json::Value> = lines(&data)
        .iter()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .filter(|v| v["partition"] == "test")
        .take(5)
        .collect();
    let key_of = |r: &serde_json::Value| {
        format!("{}:{}:{}", r["repo"].as_str().unwrap(), r["path"].as_str().unwrap(), r["func_name"].as_str().unwrap())
    };
    for row in &rows {
        let o = run(&["search", "--scorer", "tfidf", "--index", s(&data), "--query", row["docstring"].as_str().unwrap()]);
        assert_eq!(code(&o), 0);
        let out = stdout(&o);
        let first = out.lines().next().unwrap();
        assert!(first.trim_start().starts_with("1 ") && first.contains(&format!("{}  ", key_of(row))), "{out}");
        assert_eq!(out.lines().count(), 10);
    }
    let query = rows[0]["docstring"].as_str().unwrap();
    let o = run(&["search", "--model", s(&model), "--index", s(&data), "--query", query]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains(&format!("{}  ", key_of(&rows[0]))));

    let o = run_stdin(&["search", "--model", s(&model), "--index", s(&data), "--k", "3"], &format!("\n{query}\n"));
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert_eq!(out.matches("query> ").count(), 3);
    assert_eq!(out.lines().filter(|l| l.contains("synthetic/separable:")).count(), 3);

    let full = run(&["search", "--scorer", "tfidf", "--index", s(&data), "--space", "full", "--query", query, "--k", "1"]);
    assert_eq!(code(&full), 0);

    let o = run(&["search", "--model", s(&dir.path().join("none.bin")), "--index", s(&data), "--query", "x"]);
    assert_ne!(code(&o), 0);
}

#[test]
fn k_larger_than_index_returns_every_entry() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("pairs.jsonl");
    assert_eq!(code(&run(&["synth", "separable", "--output", s(&data), "--size", "10"])), 0);
    let o = run(&["search", "--scorer", "tfidf", "--index", s(&data), "--query", "anything", "--k", "10"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 5);
}

#[test]
fn eval_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("pairs.jsonl");
    assert_eq!(code(&run(&["synth", "separable", "--output", s(&data), "--size", "400"])), 0);
    let report = dir.path().join("report.jsonl");
    let o = run(&["eval", "--input", s(&data), "--scorer", "tfidf", "--distractors", "99", "--output", s(&report)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<serde_json::Value> = lines(&report).iter().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows[0]["report"], "retrieval");
    assert_eq!(rows[0]["candidates_per_query"], 100);
    assert!(rows[0]["mrr"].as_f64().unwrap() > 0.5);
    assert_eq!(rows[1]["report"], "micro_match");

    let o = run(&["eval", "--input", s(&data), "--scorer", "tfidf", "--distractors", "500"]);
    assert_eq!(code(&o), 2);
    let o = run(&["eval", "--input", s(&data), "--scorer", "nbow"]);
    assert_eq!(code(&o), 1);
    let o = run(&[
        "eval", "--input", s(&data), "--scorer", "tfidf", "--mode", "search-space", "--extra-index", "valid", "--queries", "50",
    ]);
    assert_eq!(code(&o), 0);
    let row: serde_json::Value = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    assert_eq!(row["n_queries"], 50);
    assert_eq!(row["search_space_size"], 240);
}

#[test]
fn replay_runs_then_skips() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    assert_eq!(code(&run(&["synth", "comment-rich", "--output", s(&src), "--size", "200"])), 0);
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"input": "src", "output_dir": "out", "scenario": 4, "epochs": 2, "dim": 16, "n_distractors": 19}"#,
    )
    .unwrap();
    let o = run(&["replay", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).matches(" ran").count(), 5);
    let o = run(&["replay", "--config", s(&cfg)]);
    assert_eq!(stdout(&o).matches("skipped").count(), 5);
    assert!(dir.path().join("out/manifest.json").is_file());

    std::fs::write(&cfg, r#"{"input": "src", "no_such_key": 1}"#).unwrap();
    assert_eq!(code(&run(&["replay", "--config", s(&cfg)])), 2);
    std::fs::write(&cfg, r#"{"input": "missing"}"#).unwrap();
    assert_eq!(code(&run(&["replay", "--config", s(&cfg)])), 3);
}
