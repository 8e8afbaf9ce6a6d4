use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const UNK: &str = "<unk>";
pub const UNK_ID: u32 = 0;

/// Token to id map. Id 0 is reserved for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    min_frequency: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    min_frequency: usize,
    tokens: Vec<String>,
}

impl From<VocabFile> for Vocabulary {
    fn from(f: VocabFile) -> Self {
        Vocabulary::from_tokens(f.tokens, f.min_frequency)
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile {
            min_frequency: v.min_frequency,
            tokens: v.tokens,
        }
    }
}

impl Vocabulary {
    /// Counts tokens across sequences and keeps those seen at least
    /// `min_frequency` times, most frequent first, ties by token text.
    pub fn build<'a, I>(sequences: I, min_frequency: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for seq in sequences {
            for tok in seq {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_frequency.max(1) && *t != UNK)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens = Vec::with_capacity(kept.len() + 1);
        tokens.push(UNK.to_string());
        tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
        Self::from_tokens(tokens, min_frequency)
    }

    /// `tokens[0]` must be the unknown marker.
    pub fn from_tokens(tokens: Vec<String>, min_frequency: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            index,
            min_frequency,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Ids for a sequence; an empty sequence maps to a lone unknown id.
    pub fn ids(&self, tokens: &[String]) -> Vec<u32> {
        if tokens.is_empty() {
            return vec![UNK_ID];
        }
        tokens.iter().map(|t| self.id(t)).collect()
    }
}
