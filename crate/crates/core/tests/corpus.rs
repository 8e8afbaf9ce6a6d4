mod support;

use std::collections::BTreeMap;

use augcode_core::corpus::{read_corpus, read_corpus_strict, write_corpus, CodeRecord, Partition, SCHEMA_FIELDS};
use proptest::prelude::*;
use serde_json::Value;
use support::fixture;

fn partition() -> impl Strategy<Value = Partition> {
    prop_oneof![Just(Partition::Train), Just(Partition::Valid), Just(Partition::Test)]
}

fn sha() -> impl Strategy<Value = String> {
    prop_oneof![Just(String::new()), "[0-9a-f]{40}"]
}

fn extra() -> impl Strategy<Value = BTreeMap<String, Value>> {
    prop::collection::btree_map(
        "x_[a-z]{1,6}",
        prop_oneof![any::<i64>().prop_map(Value::from), any::<String>().prop_map(Value::from), any::<bool>().prop_map(Value::from)],
        0..3,
    )
}

prop_compose! {
    fn record()(
        repo in "[a-z]{1,8}/[a-z]{1,8}",
        path in "[a-z_/]{1,20}\\.py",
        url in any::<String>(),
        func_name in "[A-Za-z_][A-Za-z0-9_.]{0,15}",
        original_string in any::<String>(),
        code in any::<String>(),
        code_tokens in prop::collection::vec("[^ \t\r\n]{1,8}", 0..12),
        docstring in any::<String>(),
        docstring_tokens in prop::collection::vec("[a-zé0-9λ]{1,8}", 0..12),
        sha in sha(),
        partition in partition(),
        extra in extra(),
    ) -> CodeRecord {
        CodeRecord {
            repo, path, url, func_name, original_string,
            language: "python".into(),
            code, code_tokens, docstring, docstring_tokens, sha, partition, extra,
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn write_then_read_is_identity(records in prop::collection::vec(record(), 0..100)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        prop_assert_eq!(write_corpus(&records, &path).unwrap(), records.len());
        let back = read_corpus_strict(&path, None).unwrap();
        prop_assert_eq!(&back, &records);
        for r in &records {
            prop_assert_eq!(CodeRecord::from_json_line(&r.to_json_line(), 1).unwrap(), r.clone());
            prop_assert_eq!(r.to_json_line(), r.clone().to_json_line());
        }
    }

    #[test]
    fn schema_keys_lead_in_fixed_order(r in record()) {
        let line = r.to_json_line();
        let mut last = 0;
        for f in SCHEMA_FIELDS {
            let at = line.find(&format!("\"{f}\":")).unwrap();
            prop_assert!(at >= last);
            last = at;
        }
    }

    #[test]
    fn every_line_yields_a_record_or_a_diagnostic(
        records in prop::collection::vec(record(), 0..20),
        junk in prop::collection::vec((0usize..20, "[^\n]{0,30}"), 0..6),
    ) {
        let mut lines: Vec<String> = records.iter().map(CodeRecord::to_json_line).collect();
        for (at, text) in &junk {
            lines.insert((*at).min(lines.len()), format!("{{{text}"));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, lines.iter().map(|l| format!("{l}\n")).collect::<String>()).unwrap();
        let items: Vec<_> = read_corpus(&path, None).unwrap().collect();
        prop_assert_eq!(items.len(), lines.len());
        let ok = items.iter().filter(|i| i.is_ok()).count();
        prop_assert_eq!(ok, records.len());
        for (i, item) in items.iter().enumerate() {
            if let Err(e) = item {
                prop_assert_eq!(e.line(), Some(i + 1));
            }
        }
    }
}

#[test]
fn three_valid_lines_and_one_truncated() {
    let dir = tempfile::tempdir().unwrap();
    let golden = std::fs::read_to_string(fixture("golden/unicode_record.jsonl")).unwrap();
    let line = golden.trim_end();
    let path = dir.path().join("c.jsonl");
    std::fs::write(&path, format!("{line}\n{line}\n{line}\n{}\n", &line[..line.len() / 2])).unwrap();
    let items: Vec<_> = read_corpus(&path, None).unwrap().collect();
    assert_eq!(items.iter().filter(|i| i.is_ok()).count(), 3);
    let errors: Vec<_> = items.iter().filter_map(|i| i.as_ref().err()).collect();
    assert_eq!(errors.len(), 1);
    assert_eq!(errors[0].line(), Some(4));
}

#[test]
fn unicode_golden_round_trips_byte_identically() {
    let path = fixture("golden/unicode_record.jsonl");
    let bytes = std::fs::read(&path).unwrap();
    let records = read_corpus_strict(&path, Some(Partition::Test)).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].docstring, "résumé → λ");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("again.jsonl");
    write_corpus(&records, &out).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), bytes);
}
