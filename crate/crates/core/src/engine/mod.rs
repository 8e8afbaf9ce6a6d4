//! Dual-encoder retrieval: a trainable neural bag-of-words model, a TF-IDF
//! baseline, exhaustive code indexes and deterministic top-k ranking.

pub mod model_file;
pub mod nbow;
pub mod tfidf;
pub mod vocab;

use std::cmp::Ordering;

use thiserror::Error;

use crate::scenario::{AugmentedRecord, SourceKey};

pub use nbow::{
    batch_loss, batch_loss_and_grad, embed_bag, train, EpochStats, Gradients, Matrix, Optimizer, RetrievalModel,
    TrainConfig, TrainOutcome,
};
pub use tfidf::{tfidf_baseline, TfIdfModel};
pub use vocab::Vocabulary;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("empty batch")]
    EmptyBatch,
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index is empty")]
    EmptyIndex,
    #[error("non-finite score input")]
    NonFinite,
    #[error("model file: {0}")]
    ModelFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Errors from a scoring backend.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("non-finite score")]
    NonFinite,
    /// Lost contact with the backend; the caller may retry the whole run.
    #[error("transient scorer failure: {0}")]
    Transient(String),
    #[error("scoring protocol violation: {0}")]
    Protocol(String),
    #[error("scorer rejected request {id}: {message}")]
    Remote { id: i64, message: String },
}

/// An encoded query or code.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    Dense(Vec<f64>),
    /// Sorted by id.
    Sparse(Vec<(u32, f64)>),
}

impl Embedding {
    pub fn dot(&self, other: &Embedding) -> f64 {
        match (self, other) {
            (Embedding::Dense(a), Embedding::Dense(b)) => dot(a, b),
            (Embedding::Sparse(a), Embedding::Sparse(b)) => {
                let (mut i, mut j, mut acc) = (0, 0, 0.0);
                while i < a.len() && j < b.len() {
                    match a[i].0.cmp(&b[j].0) {
                        Ordering::Less => i += 1,
                        Ordering::Greater => j += 1,
                        Ordering::Equal => {
                            acc += a[i].1 * b[j].1;
                            i += 1;
                            j += 1;
                        }
                    }
                }
                acc
            }
            _ => panic!("cannot compare dense and sparse embeddings"),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Embedding::Dense(v) => v.iter().all(|x| x.is_finite()),
            Embedding::Sparse(v) => v.iter().all(|(_, x)| x.is_finite()),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `cosine / temperature - margin_offset` for unit vectors.
pub fn score(q: &[f64], y: &[f64], temperature: f64, margin_offset: f64) -> Result<f64, EngineError> {
    if !(temperature.is_finite() && temperature > 0.0) || !margin_offset.is_finite() {
        return Err(EngineError::NonFinite);
    }
    if q.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(EngineError::NonFinite);
    }
    Ok(dot(q, y) / temperature - margin_offset)
}

/// A pair counts as matched when its score is strictly positive.
pub fn is_match(score: f64) -> bool {
    score > 0.0
}

/// Encodes both sides into a shared space and scores them.
pub trait Encoder {
    fn encode_query(&self, tokens: &[String]) -> Embedding;
    fn encode_code(&self, tokens: &[String]) -> Embedding;
    fn similarity(&self, query: &Embedding, code: &Embedding) -> f64;
}

/// Anything that can score (query, code) pairs. Backends that encode
/// ahead of time do so in [`Scorer::prepare`].
pub trait Scorer {
    fn prepare<'s>(
        &'s self,
        queries: &[&[String]],
        codes: &[&[String]],
    ) -> Result<Box<dyn PreparedScores + 's>, ScoreError>;
}

pub trait PreparedScores {
    /// Scores `(query index, code index)` pairs, in order.
    fn score(&mut self, pairs: &[(usize, usize)]) -> Result<Vec<f64>, ScoreError>;
}

struct EncodedScores<'e, E: Encoder + ?Sized> {
    encoder: &'e E,
    queries: Vec<Embedding>,
    codes: Vec<Embedding>,
}

impl<E: Encoder + ?Sized> PreparedScores for EncodedScores<'_, E> {
    fn score(&mut self, pairs: &[(usize, usize)]) -> Result<Vec<f64>, ScoreError> {
        pairs
            .iter()
            .map(|&(q, c)| {
                let s = self.encoder.similarity(&self.queries[q], &self.codes[c]);
                if s.is_finite() {
                    Ok(s)
                } else {
                    Err(ScoreError::NonFinite)
                }
            })
            .collect()
    }
}

/// Shared [`Scorer::prepare`] for encoder-backed scorers.
pub fn prepare_encoded<'e, E: Encoder + ?Sized>(
    encoder: &'e E,
    queries: &[&[String]],
    codes: &[&[String]],
) -> Box<dyn PreparedScores + 'e> {
    Box::new(EncodedScores {
        encoder,
        queries: queries.iter().map(|q| encoder.encode_query(q)).collect(),
        codes: codes.iter().map(|c| encoder.encode_code(c)).collect(),
    })
}

#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub key: SourceKey,
    pub embedding: Embedding,
    pub display_code: String,
}

/// Every indexed code, encoded once.
#[derive(Debug, Clone, Default)]
pub struct CodeIndex {
    pub entries: Vec<IndexEntry>,
}

impl CodeIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn build_index<E: Encoder + ?Sized>(encoder: &E, records: &[AugmentedRecord]) -> CodeIndex {
    CodeIndex {
        entries: records
            .iter()
            .map(|r| IndexEntry {
                key: r.source_key.clone(),
                embedding: encoder.encode_code(&r.y_tokens.tokens),
                display_code: r.record.code.clone(),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedHit {
    pub position: usize,
    pub key: SourceKey,
    pub score: f64,
}

/// Ranking order: higher score first, then ascending key, then position.
pub fn rank_order(a: (f64, &SourceKey, usize), b: (f64, &SourceKey, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)).then_with(|| a.2.cmp(&b.2))
}

/// Top `k` entries for a query, best first.
pub fn rank<E: Encoder + ?Sized>(
    encoder: &E,
    index: &CodeIndex,
    query_tokens: &[String],
    k: usize,
) -> Result<Vec<RankedHit>, EngineError> {
    if k < 1 {
        return Err(EngineError::InvalidK);
    }
    if index.is_empty() {
        return Err(EngineError::EmptyIndex);
    }
    let q = encoder.encode_query(query_tokens);
    let mut scored: Vec<(f64, usize)> = index
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (encoder.similarity(&q, &e.embedding), i))
        .collect();
    if scored.iter().any(|(s, _)| !s.is_finite()) {
        return Err(EngineError::NonFinite);
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        rank_order((a.0, &index.entries[a.1].key, a.1), (b.0, &index.entries[b.1].key, b.1))
    };
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    Ok(scored
        .into_iter()
        .map(|(score, position)| RankedHit {
            position,
            key: index.entries[position].key.clone(),
            score,
        })
        .collect())
}
