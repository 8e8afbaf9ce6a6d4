//! The six Augmented-Code Scenarios: which segments feed the query side (X)
//! and the code side (Y) of a training pair.
//!
//! | ACS | X                                   | Y                      |
//! |-----|-------------------------------------|------------------------|
//! | 0   | short description                   | code + comments        |
//! | 1   | comments                            | code                   |
//! | 2   | comments ++ full docstring          | code                   |
//! | 3   | comments ++ docstring ++ commit     | code + comments        |
//! | 4   | comments ++ full docstring          | code + comments        |
//! | 5   | short description                   | code                   |

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{CodeRecord, CommitMessage, Partition, ScenarioId};
use crate::extractor::{
    extract_functions, tokenize_code_with, tokenize_code_with_comments, tokenize_nl, DecomposedFunction, TokenKind,
    TokenSequence, TokenizerConfig,
};

/// Extra key carrying the scenario id in emitted JSONL.
pub const SCENARIO_KEY: &str = "acs";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceKey {
    pub repo: String,
    pub path: String,
    pub func_name: String,
}

impl SourceKey {
    pub fn of(record: &CodeRecord) -> Self {
        Self {
            repo: record.repo.clone(),
            path: record.path.clone(),
            func_name: record.func_name.clone(),
        }
    }
}

impl fmt::Display for SourceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.repo, self.path, self.func_name)
    }
}

/// Every token stream a scenario can draw from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentBundle {
    pub short_desc_tokens: TokenSequence,
    pub full_docstring_tokens: TokenSequence,
    pub comment_tokens: TokenSequence,
    pub commit_tokens: TokenSequence,
    /// Comment-free code.
    pub code_tokens: TokenSequence,
    /// Code with each comment's words in place.
    pub code_with_comments_tokens: TokenSequence,
}

pub fn build_segments(d: &DecomposedFunction, commit: Option<&CommitMessage>, cfg: TokenizerConfig) -> SegmentBundle {
    let nl = |text: &str| tokenize_nl(text);
    let mut comment_tokens = TokenSequence::new(TokenKind::NaturalLanguage, Vec::new());
    for comment in &d.comments {
        comment_tokens.extend(&nl(comment));
    }
    SegmentBundle {
        short_desc_tokens: nl(&d.docstring_short),
        full_docstring_tokens: nl(&d.docstring_full),
        comment_tokens,
        commit_tokens: commit
            .map(|c| nl(&c.message))
            .unwrap_or_else(|| TokenSequence::new(TokenKind::NaturalLanguage, Vec::new())),
        code_tokens: tokenize_code_with(&d.stripped_code, cfg),
        code_with_comments_tokens: tokenize_code_with_comments(&d.code, cfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    EmptyX,
    EmptyY,
    ExtractionFailed,
}

fn concat(kind: TokenKind, parts: &[&TokenSequence]) -> TokenSequence {
    let mut out = TokenSequence::new(kind, Vec::new());
    for part in parts {
        out.extend(part);
    }
    out
}

/// X and Y for a scenario, before length limits and emptiness checks.
pub fn compose(bundle: &SegmentBundle, scenario: ScenarioId) -> (TokenSequence, TokenSequence) {
    let b = bundle;
    let nl = TokenKind::NaturalLanguage;
    let (x, y) = match scenario.get() {
        0 => (b.short_desc_tokens.clone(), &b.code_with_comments_tokens),
        1 => (b.comment_tokens.clone(), &b.code_tokens),
        2 => (concat(nl, &[&b.comment_tokens, &b.full_docstring_tokens]), &b.code_tokens),
        3 => (
            concat(nl, &[&b.comment_tokens, &b.full_docstring_tokens, &b.commit_tokens]),
            &b.code_with_comments_tokens,
        ),
        4 => (
            concat(nl, &[&b.comment_tokens, &b.full_docstring_tokens]),
            &b.code_with_comments_tokens,
        ),
        5 => (b.short_desc_tokens.clone(), &b.code_tokens),
        _ => unreachable!("ScenarioId is bounded to 0..=5"),
    };
    (x, y.clone())
}

/// Applies a scenario; empty sides are rejected, long sides keep their head.
pub fn build_acs(
    bundle: &SegmentBundle,
    scenario: ScenarioId,
    max_tokens: usize,
) -> Result<(TokenSequence, TokenSequence), Rejection> {
    let (mut x, mut y) = compose(bundle, scenario);
    if x.is_empty() {
        return Err(Rejection::EmptyX);
    }
    if y.is_empty() {
        return Err(Rejection::EmptyY);
    }
    x.truncate(max_tokens);
    y.truncate(max_tokens);
    Ok((x, y))
}

/// One (X, Y) pair with its provenance. `record` is the source row.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedRecord {
    pub scenario: ScenarioId,
    pub x_tokens: TokenSequence,
    pub y_tokens: TokenSequence,
    pub source_key: SourceKey,
    pub partition: Partition,
    pub record: CodeRecord,
}

impl AugmentedRecord {
    /// Schema form: X in `docstring_tokens`, Y in `code_tokens`.
    pub fn to_code_record(&self) -> CodeRecord {
        let mut out = self.record.clone();
        out.docstring_tokens = self.x_tokens.tokens.clone();
        out.code_tokens = self.y_tokens.tokens.clone();
        out.extra.insert(SCENARIO_KEY.into(), Value::from(self.scenario.get()));
        out
    }

    /// Reads a pair back from schema form. Rows without a scenario key are
    /// taken as scenario 0.
    pub fn from_code_record(record: CodeRecord) -> Self {
        let scenario = record
            .extra
            .get(SCENARIO_KEY)
            .and_then(Value::as_u64)
            .and_then(|n| u8::try_from(n).ok())
            .and_then(ScenarioId::new)
            .unwrap_or_default();
        Self {
            scenario,
            x_tokens: TokenSequence::new(TokenKind::NaturalLanguage, record.docstring_tokens.clone()),
            y_tokens: TokenSequence::new(TokenKind::Code, record.code_tokens.clone()),
            source_key: SourceKey::of(&record),
            partition: record.partition,
            record,
        }
    }
}

/// Source of commit messages keyed by (repo, sha).
pub trait CommitLookup {
    fn lookup(&self, repo: &str, sha: &str) -> Option<CommitMessage>;
}

impl CommitLookup for HashMap<(String, String), CommitMessage> {
    fn lookup(&self, repo: &str, sha: &str) -> Option<CommitMessage> {
        self.get(&(repo.to_string(), sha.to_string())).cloned()
    }
}

impl CommitLookup for BTreeMap<(String, String), CommitMessage> {
    fn lookup(&self, repo: &str, sha: &str) -> Option<CommitMessage> {
        self.get(&(repo.to_string(), sha.to_string())).cloned()
    }
}

/// No commit messages at all.
pub struct NoCommits;

impl CommitLookup for NoCommits {
    fn lookup(&self, _: &str, _: &str) -> Option<CommitMessage> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub max_tokens: usize,
    pub tokenizer: TokenizerConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            max_tokens: 512,
            tokenizer: TokenizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionSummary {
    pub input: usize,
    pub emitted: usize,
    pub rejected: BTreeMap<Rejection, usize>,
}

impl RejectionSummary {
    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub records: Vec<AugmentedRecord>,
    pub summary: RejectionSummary,
}

/// Recovers the decomposition of a record from its `original_string`.
pub fn decompose_record(record: &CodeRecord) -> Option<DecomposedFunction> {
    extract_functions(&record.original_string, &record.path)
        .ok()?
        .into_iter()
        .next()
}

pub fn build_record(
    record: &CodeRecord,
    scenario: ScenarioId,
    commits: &dyn CommitLookup,
    cfg: &ScenarioConfig,
) -> Result<AugmentedRecord, Rejection> {
    let decomposed = decompose_record(record).ok_or(Rejection::ExtractionFailed)?;
    let commit = if record.sha.is_empty() {
        None
    } else {
        commits.lookup(&record.repo, &record.sha)
    };
    let bundle = build_segments(&decomposed, commit.as_ref(), cfg.tokenizer);
    let (x_tokens, y_tokens) = build_acs(&bundle, scenario, cfg.max_tokens)?;
    Ok(AugmentedRecord {
        scenario,
        x_tokens,
        y_tokens,
        source_key: SourceKey::of(record),
        partition: record.partition,
        record: record.clone(),
    })
}

/// Builds one scenario over a corpus, preserving input order.
pub fn build_dataset<'a, I>(corpus: I, scenario: ScenarioId, commits: &dyn CommitLookup, cfg: &ScenarioConfig) -> Dataset
where
    I: IntoIterator<Item = &'a CodeRecord>,
{
    let mut out = Dataset::default();
    for record in corpus {
        out.summary.input += 1;
        match build_record(record, scenario, commits, cfg) {
            Ok(aug) => {
                out.summary.emitted += 1;
                out.records.push(aug);
            }
            Err(reason) => *out.summary.rejected.entry(reason).or_default() += 1,
        }
    }
    out
}
