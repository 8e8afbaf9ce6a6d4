mod support;

use std::path::Path;

use augcode_core::corpus::{read_corpus_strict, ScenarioId};
use augcode_core::extractor::ExtractConfig;
use augcode_core::pipeline::{
    artifact_hashes, extract_tree, replay, Backend, ErrorClass, PipelineConfig, StageStatus, ACS_FILE, CORPUS_FILE,
};
use augcode_core::synthetic::{comment_rich_sources, CommentRichSpec};
use support::{copy_tree, fixture};

#[test]
fn fixture_tree_yields_seven_records() {
    let t = extract_tree(&fixture("tree"), "shop", &ExtractConfig::default()).unwrap();
    let names: Vec<(&str, &str)> = t.records.iter().map(|r| (r.path.as_str(), r.func_name.as_str())).collect();
    assert_eq!(t.files, 3);
    assert_eq!(
        names,
        [
            ("shop/__init__.py", "version"),
            ("shop/cart.py", "Cart.__init__"),
            ("shop/cart.py", "Cart.add"),
            ("shop/cart.py", "Cart.total"),
            ("shop/cart.py", "empty_cart"),
            ("shop/io/export.py", "save_csv"),
            ("shop/io/export.py", "load_csv"),
        ]
    );
    assert!(t.diagnostics.is_empty());
    let save = &t.records[5];
    assert_eq!(save.docstring, "Save rows to a CSV file.");
    assert_eq!(save.docstring_tokens, ["save", "rows", "to", "a", "csv", "file"]);
    assert!(!save.code.contains("Save rows"));
    assert!(save.code.contains("# one row per item"));
    assert!(!save.code_tokens.iter().any(|t| t.contains("one row")));
    assert!(t.records.iter().all(|r| r.url.is_empty() && r.sha.is_empty() && r.repo == "shop"));
}

#[test]
fn broken_file_is_skipped_with_a_diagnostic() {
    let t = extract_tree(&fixture("tree_broken"), "x", &ExtractConfig::default()).unwrap();
    assert_eq!(t.files, 2);
    assert_eq!(t.records.len(), 2);
    assert!(t.records.iter().all(|r| r.path == "good.py"));
    assert_eq!(t.diagnostics.len(), 1);
    assert_eq!(t.diagnostics[0].path, "bad.py");
    assert_eq!(t.diagnostics[0].line, 2);
}

#[test]
fn empty_dir_gives_empty_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let t = extract_tree(dir.path(), "x", &ExtractConfig::default()).unwrap();
    assert_eq!((t.files, t.records.len()), (0, 0));
    assert_eq!(
        extract_tree(&dir.path().join("missing"), "x", &ExtractConfig::default()).unwrap_err().class,
        ErrorClass::Environment
    );
}

fn write_sources(root: &Path, functions: usize) {
    let spec = CommentRichSpec {
        functions,
        ..CommentRichSpec::default()
    };
    for f in comment_rich_sources(&spec) {
        let p = root.join(&f.path);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, f.text).unwrap();
    }
}

fn small_config(src: &Path, out: &Path) -> PipelineConfig {
    PipelineConfig {
        input: src.to_path_buf(),
        output_dir: out.to_path_buf(),
        epochs: 3,
        dim: 32,
        n_distractors: 49,
        ..PipelineConfig::default()
    }
}

fn statuses(s: &augcode_core::pipeline::ReplaySummary) -> Vec<StageStatus> {
    s.stages.iter().map(|(_, st)| *st).collect()
}

#[test]
fn replay_memoizes_and_reruns_from_changed_stage() {
    let root = tempfile::tempdir().unwrap();
    let src = root.path().join("src");
    write_sources(&src, 400);
    let out = root.path().join("run");
    let mut cfg = small_config(&src, &out);

    let first = replay(&cfg).unwrap();
    assert_eq!(statuses(&first), vec![StageStatus::Ran; 5]);
    assert_eq!(first.reports.len(), 2);
    let again = replay(&cfg).unwrap();
    assert_eq!(statuses(&again), vec![StageStatus::Skipped; 5]);
    assert_eq!(again.reports, first.reports);

    cfg.scenario = ScenarioId::new(4).unwrap();
    let changed = replay(&cfg).unwrap();
    let expect = [
        ("extract", StageStatus::Skipped),
        ("enrich", StageStatus::Skipped),
        ("build-acs", StageStatus::Ran),
        ("train", StageStatus::Ran),
        ("eval", StageStatus::Ran),
    ];
    assert_eq!(changed.stages, expect);
    let acs = read_corpus_strict(&out.join(ACS_FILE), None).unwrap();
    assert!(acs.iter().all(|r| r.extra["acs"] == 4));
}

#[test]
fn replay_in_fresh_dirs_is_byte_identical() {
    let root = tempfile::tempdir().unwrap();
    let src = root.path().join("src");
    write_sources(&src, 300);
    let a = replay(&small_config(&src, &root.path().join("a"))).unwrap();
    let b = replay(&small_config(&src, &root.path().join("b"))).unwrap();
    assert_eq!(a.reports, b.reports);
    let ha = artifact_hashes(&root.path().join("a")).unwrap();
    let hb = artifact_hashes(&root.path().join("b")).unwrap();
    assert_eq!(ha.len(), 8);
    assert_eq!(ha, hb);
}

#[test]
fn replay_with_offline_cache_and_corpus_input() {
    let root = tempfile::tempdir().unwrap();
    let cache = root.path().join("cache");
    copy_tree(&fixture("enrichment/cache"), &cache);
    let mut cfg = PipelineConfig {
        input: fixture("enrichment/corpus.jsonl"),
        cache_dir: Some(cache),
        output_dir: root.path().join("run"),
        scenario: ScenarioId::new(3).unwrap(),
        backend: Backend::Tfidf,
        ..PipelineConfig::default()
    };
    // The fixture corpus is all train, so eval has no test pairs.
    let err = replay(&cfg).unwrap_err();
    assert_eq!(err.stage, Some("eval"));
    assert_eq!(err.class, ErrorClass::Data);
    let commits = std::fs::read_to_string(root.path().join("run/commits.jsonl")).unwrap();
    assert_eq!(commits.lines().count(), 2);
    assert!(commits.contains("Add widget loader"));
    let corpus = read_corpus_strict(&root.path().join("run").join(CORPUS_FILE), None).unwrap();
    assert_eq!(corpus.len(), 4);

    cfg.input = root.path().join("nope");
    assert_eq!(replay(&cfg).unwrap_err().class, ErrorClass::Environment);
    cfg.input = fixture("enrichment/corpus.jsonl");
    cfg.backend = Backend::Bridge;
    assert_eq!(replay(&cfg).unwrap_err().class, ErrorClass::Usage);
}
