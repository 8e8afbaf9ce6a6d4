//! CodeSearchNet-compatible record types and the line-delimited JSON corpus format.
//!
//! One record per line, UTF-8, LF line endings, optionally gzip-compressed
//! (detected by magic bytes). The twelve schema attributes are emitted in a
//! fixed order so identical records always serialize to identical bytes.
//! Keys outside the schema are kept in [`CodeRecord::extra`] and re-emitted
//! after the schema attributes.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// The schema attributes, in emission order.
pub const SCHEMA_FIELDS: [&str; 12] = [
    "repo",
    "path",
    "url",
    "func_name",
    "original_string",
    "language",
    "code",
    "code_tokens",
    "docstring",
    "docstring_tokens",
    "sha",
    "partition",
];

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot open {path}: {source}")]
    Open { path: PathBuf, source: io::Error },
    #[error("line {line}: {source}")]
    Io { line: usize, source: io::Error },
    #[error("line {line}: malformed JSON: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing required attribute `{field}`")]
    MissingField { line: usize, field: String },
    #[error("line {line}: invalid value for `{field}`: {message}")]
    InvalidField {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("line {line}: partition `{found}` does not match expected `{expected}`")]
    PartitionMismatch {
        line: usize,
        expected: Partition,
        found: Partition,
    },
    #[error("write to {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
}

impl CorpusError {
    /// Line number the diagnostic refers to, when it is a per-line error.
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::Io { line, .. }
            | CorpusError::Malformed { line, .. }
            | CorpusError::MissingField { line, .. }
            | CorpusError::InvalidField { line, .. }
            | CorpusError::PartitionMismatch { line, .. } => Some(*line),
            CorpusError::Open { .. } | CorpusError::Write { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Valid,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Valid, Partition::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Valid => "valid",
            Partition::Test => "test",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Partition::Train),
            "valid" => Ok(Partition::Valid),
            "test" => Ok(Partition::Test),
            other => Err(format!("unknown partition `{other}` (expected train, valid or test)")),
        }
    }
}

/// Augmented-Code Scenario identifier, 0 through 5. Scenario 0 is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ScenarioId(u8);

impl ScenarioId {
    pub const DEFAULT: ScenarioId = ScenarioId(0);

    pub fn new(id: u8) -> Option<Self> {
        (id <= 5).then_some(ScenarioId(id))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = ScenarioId> {
        (0..=5).map(ScenarioId)
    }
}

impl TryFrom<u8> for ScenarioId {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        ScenarioId::new(value).ok_or_else(|| format!("scenario id {value} outside 0..=5"))
    }
}

impl From<ScenarioId> for u8 {
    fn from(id: ScenarioId) -> u8 {
        id.0
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::str::FromStr for ScenarioId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n: u8 = s.parse().map_err(|_| format!("invalid scenario id `{s}`"))?;
        ScenarioId::try_from(n)
    }
}

/// A commit log message keyed by (repo, sha).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitMessage {
    pub repo: String,
    pub sha: String,
    pub message: String,
    /// Seconds since the Unix epoch.
    pub fetched_at: u64,
}

/// One function in CodeSearchNet schema form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeRecord {
    pub repo: String,
    pub path: String,
    pub url: String,
    pub func_name: String,
    pub original_string: String,
    pub language: String,
    pub code: String,
    pub code_tokens: Vec<String>,
    pub docstring: String,
    pub docstring_tokens: Vec<String>,
    pub sha: String,
    pub partition: Partition,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

/// True for the empty string or exactly 40 lowercase hex characters.
pub fn is_valid_sha(sha: &str) -> bool {
    sha.is_empty()
        || (sha.len() == 40 && sha.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)))
}

impl CodeRecord {
    /// Checks the invariants that serde cannot express.
    pub fn validate(&self, line: usize) -> Result<(), CorpusError> {
        if !is_valid_sha(&self.sha) {
            return Err(CorpusError::InvalidField {
                line,
                field: "sha",
                message: format!("`{}` is not empty or 40 lowercase hex characters", self.sha),
            });
        }
        Ok(())
    }

    /// A training record needs a nonempty code side.
    pub fn is_trainable(&self) -> bool {
        !self.code_tokens.is_empty()
    }

    /// Serializes to one JSON line (no trailing newline) with schema keys first.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("CodeRecord is always serializable")
    }

    pub fn from_json_line(text: &str, line: usize) -> Result<Self, CorpusError> {
        let value: Value = serde_json::from_str(text).map_err(|e| CorpusError::Malformed {
            line,
            message: e.to_string(),
        })?;
        let Value::Object(map) = &value else {
            return Err(CorpusError::Malformed {
                line,
                message: "expected a JSON object".into(),
            });
        };
        if let Some(field) = SCHEMA_FIELDS.iter().find(|f| !map.contains_key(**f)) {
            return Err(CorpusError::MissingField {
                line,
                field: (*field).to_string(),
            });
        }
        let record: CodeRecord = serde_json::from_value(value).map_err(|e| {
            let message = e.to_string();
            let field = SCHEMA_FIELDS
                .iter()
                .find(|f| message.contains(&format!("`{f}`")))
                .copied();
            match field {
                Some(field) => CorpusError::InvalidField { line, field, message },
                None if message.contains("unknown variant") => CorpusError::InvalidField {
                    line,
                    field: "partition",
                    message,
                },
                None => CorpusError::Malformed { line, message },
            }
        })?;
        record.validate(line)?;
        Ok(record)
    }
}

fn open_maybe_gzip(path: &Path) -> Result<Box<dyn BufRead + Send>, CorpusError> {
    let open_err = |source| CorpusError::Open {
        path: path.to_path_buf(),
        source,
    };
    let mut file = File::open(path).map_err(open_err)?;
    let mut magic = [0u8; 2];
    let mut filled = 0;
    while filled < 2 {
        match file.read(&mut magic[filled..]).map_err(open_err)? {
            0 => break,
            n => filled += n,
        }
    }
    let head = io::Cursor::new(magic[..filled].to_vec());
    let chained = head.chain(file);
    if filled == 2 && magic == GZIP_MAGIC {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(chained))))
    } else {
        Ok(Box::new(BufReader::new(chained)))
    }
}

/// Streaming reader over a corpus file. Yields one item per input line.
pub struct CorpusReader {
    lines: io::Lines<Box<dyn BufRead + Send>>,
    line_no: usize,
    expected: Option<Partition>,
}

impl Iterator for CorpusReader {
    type Item = Result<CodeRecord, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        let line = self.lines.next()?;
        self.line_no += 1;
        let line_no = self.line_no;
        let text = match line {
            Ok(text) => text,
            Err(source) => {
                return Some(Err(CorpusError::Io {
                    line: line_no,
                    source,
                }))
            }
        };
        let text = text.strip_suffix('\r').unwrap_or(&text);
        Some(CodeRecord::from_json_line(text, line_no).and_then(|record| match self.expected {
            Some(expected) if expected != record.partition => Err(CorpusError::PartitionMismatch {
                line: line_no,
                expected,
                found: record.partition,
            }),
            _ => Ok(record),
        }))
    }
}

/// Opens a corpus for streaming. Per-line failures surface as `Err` items
/// carrying the line number; only a missing or unreadable file fails here.
pub fn read_corpus(path: &Path, expected_partition: Option<Partition>) -> Result<CorpusReader, CorpusError> {
    Ok(CorpusReader {
        lines: open_maybe_gzip(path)?.lines(),
        line_no: 0,
        expected: expected_partition,
    })
}

/// Reads a whole corpus, failing on the first bad line.
pub fn read_corpus_strict(path: &Path, expected_partition: Option<Partition>) -> Result<Vec<CodeRecord>, CorpusError> {
    read_corpus(path, expected_partition)?.collect()
}

/// Writes records as JSONL; returns the count written.
pub fn write_corpus<'a, I>(records: I, path: &Path) -> Result<usize, CorpusError>
where
    I: IntoIterator<Item = &'a CodeRecord>,
{
    let write_err = |source| CorpusError::Write {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(write_err)?;
    let mut out = BufWriter::new(file);
    let count = write_records(records, &mut out).map_err(write_err)?;
    out.flush().map_err(write_err)?;
    Ok(count)
}

pub fn write_records<'a, I, W>(records: I, out: &mut W) -> io::Result<usize>
where
    I: IntoIterator<Item = &'a CodeRecord>,
    W: Write,
{
    let mut count = 0;
    for record in records {
        out.write_all(record.to_json_line().as_bytes())?;
        out.write_all(b"\n")?;
        count += 1;
    }
    Ok(count)
}

#[cfg(test)]
pub(crate) fn sample_record(name: &str) -> CodeRecord {
    CodeRecord {
        repo: "pkg/demo".into(),
        path: "demo/io.py".into(),
        url: String::new(),
        func_name: name.into(),
        original_string: format!("def {name}(path):\n    \"\"\"Save a csv file.\"\"\"\n    return path"),
        language: "python".into(),
        code: format!("def {name}(path):\n    return path"),
        code_tokens: vec!["def".into(), name.into(), "(".into(), "path".into(), ")".into()],
        docstring: "Save a csv file.".into(),
        docstring_tokens: vec!["save".into(), "a".into(), "csv".into(), "file".into()],
        sha: String::new(),
        partition: Partition::Test,
        extra: BTreeMap::new(),
    }
}
