//! Seeded synthetic corpora with known retrieval structure.
//!
//! * [`separable_pairs`]: (X, Y) pairs built from disjoint per-cluster
//!   vocabularies; each pair draws its own concept subset, so a model that
//!   aligns concept tokens can rank the true code first.
//! * [`comment_rich_sources`]: Python modules whose docstring summaries are
//!   generic while comments, docstring bodies and identifiers carry the
//!   discriminative concept words.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CodeRecord, Partition, ScenarioId};
use crate::extractor::{TokenKind, TokenSequence};
use crate::scenario::{AugmentedRecord, SourceKey};

const SYLLABLES: [&str; 20] = [
    "ka", "lo", "mi", "ne", "pu", "ra", "si", "to", "vu", "ze", "ba", "de", "fi", "go", "hu", "ja", "ku", "le", "mo",
    "nu",
];

/// Pronounceable word for `id`, unique for ids below 8000.
pub fn pseudo_word(id: usize) -> String {
    let n = SYLLABLES.len();
    format!("{}{}{}", SYLLABLES[id / (n * n) % n], SYLLABLES[id / n % n], SYLLABLES[id % n])
}

#[derive(Debug, Clone)]
pub struct SeparableSpec {
    pub pairs: usize,
    pub clusters: usize,
    pub concepts_per_cluster: usize,
    pub concepts_per_pair: usize,
    /// Fractions of pairs assigned to train and valid; the rest is test.
    pub train_fraction: f64,
    pub valid_fraction: f64,
    pub seed: u64,
}

impl Default for SeparableSpec {
    fn default() -> Self {
        Self {
            pairs: 2000,
            clusters: 20,
            concepts_per_cluster: 12,
            concepts_per_pair: 5,
            train_fraction: 0.4,
            valid_fraction: 0.1,
            seed: 42,
        }
    }
}

fn split_partition(i: usize, n: usize, train: f64, valid: f64) -> Partition {
    let n_train = (n as f64 * train).round() as usize;
    let n_valid = (n as f64 * valid).round() as usize;
    if i < n_train {
        Partition::Train
    } else if i < n_train + n_valid {
        Partition::Valid
    } else {
        Partition::Test
    }
}

fn synthetic_record(key: &SourceKey, code: String, x: &[String], y: &[String], partition: Partition) -> CodeRecord {
    CodeRecord {
        repo: key.repo.clone(),
        path: key.path.clone(),
        url: String::new(),
        func_name: key.func_name.clone(),
        original_string: code.clone(),
        language: "python".into(),
        code,
        code_tokens: y.to_vec(),
        docstring: x.join(" "),
        docstring_tokens: x.to_vec(),
        sha: String::new(),
        partition,
        extra: BTreeMap::new(),
    }
}

/// Vocabulary-clustered pairs, in partition order (train, valid, test).
pub fn separable_pairs(spec: &SeparableSpec) -> Vec<AugmentedRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fillers = ["the", "a", "of", "for", "given", "value"];
    let structure = ["def", "(", ")", ":", "return", "="];
    let mut out = Vec::with_capacity(spec.pairs);
    for i in 0..spec.pairs {
        let cluster = rng.random_range(0..spec.clusters);
        let base = cluster * spec.concepts_per_cluster;
        let mut concepts: Vec<usize> = (0..spec.concepts_per_cluster).collect();
        concepts.shuffle(&mut rng);
        concepts.truncate(spec.concepts_per_pair);
        let words: Vec<String> = concepts.iter().map(|c| pseudo_word(base + c)).collect();

        let mut x: Vec<String> = words.clone();
        x.push(format!("topic{cluster}"));
        x.push((*fillers.choose(&mut rng).expect("nonempty")).to_string());
        x.shuffle(&mut rng);
        let mut y: Vec<String> = words;
        y.extend(structure.iter().map(|s| s.to_string()));
        y.shuffle(&mut rng);

        let partition = split_partition(i, spec.pairs, spec.train_fraction, spec.valid_fraction);
        let key = SourceKey {
            repo: "synthetic/separable".into(),
            path: format!("cluster_{cluster:03}.py"),
            func_name: format!("pair_{i:05}"),
        };
        let code = y.join(" ");
        out.push(AugmentedRecord {
            scenario: ScenarioId::DEFAULT,
            x_tokens: TokenSequence::new(TokenKind::NaturalLanguage, x.clone()),
            y_tokens: TokenSequence::new(TokenKind::Code, y.clone()),
            source_key: key.clone(),
            partition,
            record: synthetic_record(&key, code, &x, &y, partition),
        });
    }
    out
}

#[derive(Debug, Clone)]
pub struct CommentRichSpec {
    pub functions: usize,
    pub functions_per_file: usize,
    pub topics: usize,
    pub concepts_per_topic: usize,
    pub seed: u64,
}

impl Default for CommentRichSpec {
    fn default() -> Self {
        Self {
            functions: 2400,
            functions_per_file: 20,
            topics: 30,
            concepts_per_topic: 16,
            seed: 42,
        }
    }
}

/// A generated module: relative path and source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFile {
    pub path: String,
    pub text: String,
}

const SUMMARIES: [&str; 6] = [
    "Process the {t} data.",
    "Handle {t} input.",
    "Run the {t} step.",
    "Update {t} state.",
    "Compute the {t} result.",
    "Helper for {t}.",
];

fn comment_rich_function(rng: &mut ChaCha8Rng, spec: &CommentRichSpec, idx: usize) -> String {
    let topic = rng.random_range(0..spec.topics);
    let topic_word = format!("topic{topic}");
    let base = 4000 + topic * spec.concepts_per_topic;
    let mut concepts: Vec<usize> = (0..spec.concepts_per_topic).collect();
    concepts.shuffle(rng);
    let c: Vec<String> = concepts[..5].iter().map(|k| pseudo_word(base + k)).collect();
    let summary = SUMMARIES.choose(rng).expect("nonempty").replace("{t}", &topic_word);
    format!(
        "def {topic_word}_fn{idx}({c0}, {c1}):\n    \"\"\"{summary}\n\n    Args:\n        {c0}: the {c2} source.\n        {c1}: the {c3} limit.\n\n    Returns:\n        The {c4} value.\n    \"\"\"\n    # combine {c0} with {c2}\n    {c2} = {c0} + {c1}\n    if {c2} > 0:  # keep {c3} bounded\n        {c3} = {c2} * 2\n    else:\n        {c3} = 0\n    # {c4} is the final {c3}\n    {c4} = {c3}\n    return {c4}\n",
        c0 = c[0],
        c1 = c[1],
        c2 = c[2],
        c3 = c[3],
        c4 = c[4],
    )
}

/// Python modules, `functions_per_file` functions each.
pub fn comment_rich_sources(spec: &CommentRichSpec) -> Vec<SourceFile> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let per_file = spec.functions_per_file.max(1);
    let mut files = Vec::new();
    let mut idx = 0;
    while idx < spec.functions {
        let mut text = String::from("import math\n\n\n");
        for _ in 0..per_file.min(spec.functions - idx) {
            text.push_str(&comment_rich_function(&mut rng, spec, idx));
            text.push_str("\n\n");
            idx += 1;
        }
        files.push(SourceFile {
            path: format!("pkg/module_{:04}.py", files.len()),
            text,
        });
    }
    files
}
