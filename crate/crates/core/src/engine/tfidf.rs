//! TF-IDF cosine baseline over one vocabulary shared by queries and codes.

use std::collections::{BTreeMap, HashMap};

use super::{prepare_encoded, Embedding, Encoder, PreparedScores, ScoreError, Scorer};
use crate::scenario::AugmentedRecord;

/// Raw counts times smoothed idf, `ln((1 + N) / (1 + df)) + 1`, L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfModel {
    index: HashMap<String, u32>,
    idf: Vec<f64>,
}

impl TfIdfModel {
    /// Every sequence counts as one document.
    pub fn fit<'a, I>(documents: I) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        let mut n_docs = 0usize;
        for doc in documents {
            n_docs += 1;
            let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut index = HashMap::with_capacity(df.len());
        let mut idf = Vec::with_capacity(df.len());
        for (i, (token, count)) in df.into_iter().enumerate() {
            index.insert(token.to_string(), i as u32);
            idf.push(((1.0 + n_docs as f64) / (1.0 + count as f64)).ln() + 1.0);
        }
        Self { index, idf }
    }

    pub fn vocabulary_size(&self) -> usize {
        self.idf.len()
    }

    pub fn vector(&self, tokens: &[String]) -> Vec<(u32, f64)> {
        let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
        for t in tokens {
            if let Some(&id) = self.index.get(t) {
                *tf.entry(id).or_default() += 1.0;
            }
        }
        let mut v: Vec<(u32, f64)> = tf.into_iter().map(|(id, c)| (id, c * self.idf[id as usize])).collect();
        let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|(_, w)| *w /= norm);
        }
        v
    }

    /// Cosine similarity of two token sequences.
    pub fn cosine(&self, a: &[String], b: &[String]) -> f64 {
        Embedding::Sparse(self.vector(a)).dot(&Embedding::Sparse(self.vector(b)))
    }
}

/// Fits on the X and Y sides of `records`.
pub fn tfidf_baseline(records: &[AugmentedRecord]) -> TfIdfModel {
    TfIdfModel::fit(
        records
            .iter()
            .flat_map(|r| [r.x_tokens.tokens.as_slice(), r.y_tokens.tokens.as_slice()]),
    )
}

impl Encoder for TfIdfModel {
    fn encode_query(&self, tokens: &[String]) -> Embedding {
        Embedding::Sparse(self.vector(tokens))
    }

    fn encode_code(&self, tokens: &[String]) -> Embedding {
        Embedding::Sparse(self.vector(tokens))
    }

    fn similarity(&self, query: &Embedding, code: &Embedding) -> f64 {
        query.dot(code)
    }
}

impl Scorer for TfIdfModel {
    fn prepare<'s>(
        &'s self,
        queries: &[&[String]],
        codes: &[&[String]],
    ) -> Result<Box<dyn PreparedScores + 's>, ScoreError> {
        Ok(prepare_encoded(self, queries, codes))
    }
}
