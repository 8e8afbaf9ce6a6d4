use serde::{Deserialize, Serialize};

use super::lexer::{lex, LexKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    NaturalLanguage,
    Code,
}

/// An ordered token list tagged with the tokenizer that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub kind: TokenKind,
}

impl TokenSequence {
    pub fn new(kind: TokenKind, tokens: Vec<String>) -> Self {
        Self { tokens, kind }
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn extend(&mut self, other: &TokenSequence) {
        self.tokens.extend(other.tokens.iter().cloned());
    }

    /// Keeps the first `max` tokens.
    pub fn truncate(&mut self, max: usize) {
        self.tokens.truncate(max);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    /// Split `snake_case` and `camelCase` identifiers into lowercase subwords.
    pub split_identifiers: bool,
}

/// Lowercase word split: any non-alphanumeric character separates words.
pub fn tokenize_nl(text: &str) -> TokenSequence {
    let tokens = text
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(String::from)
        .collect();
    TokenSequence::new(TokenKind::NaturalLanguage, tokens)
}

/// Lexical code tokenizer with the default configuration.
pub fn tokenize_code(text: &str) -> TokenSequence {
    tokenize_code_with(text, TokenizerConfig::default())
}

/// Identifier, number, string literal (one token each) and operator
/// lexemes, in source order. Comments are dropped.
pub fn tokenize_code_with(text: &str, cfg: TokenizerConfig) -> TokenSequence {
    let lexed = lex(text, true).expect("lenient lexing never fails");
    let mut tokens = Vec::with_capacity(lexed.lexemes.len());
    for lexeme in &lexed.lexemes {
        match lexeme.kind {
            LexKind::Comment => {}
            LexKind::Name if cfg.split_identifiers => tokens.extend(split_identifier(lexeme.text)),
            _ => tokens.push(lexeme.text.to_string()),
        }
    }
    TokenSequence::new(TokenKind::Code, tokens)
}

/// Like [`tokenize_code_with`] but each comment is kept in place, expanded
/// through [`tokenize_nl`].
pub fn tokenize_code_with_comments(text: &str, cfg: TokenizerConfig) -> TokenSequence {
    let lexed = lex(text, true).expect("lenient lexing never fails");
    let mut tokens = Vec::with_capacity(lexed.lexemes.len());
    for lexeme in &lexed.lexemes {
        match lexeme.kind {
            LexKind::Comment => tokens.extend(tokenize_nl(lexeme.text).tokens),
            LexKind::Name if cfg.split_identifiers => tokens.extend(split_identifier(lexeme.text)),
            _ => tokens.push(lexeme.text.to_string()),
        }
    }
    TokenSequence::new(TokenKind::Code, tokens)
}

/// `loadCsvFile` -> [load, csv, file]; `to_csv` -> [to, csv]. An identifier
/// made only of underscores is returned unchanged.
pub fn split_identifier(ident: &str) -> Vec<String> {
    let mut parts = Vec::new();
    for piece in ident.split('_').filter(|p| !p.is_empty()) {
        let chars: Vec<char> = piece.chars().collect();
        let mut start = 0;
        for i in 1..chars.len() {
            let (prev, cur) = (chars[i - 1], chars[i]);
            let next_lower = chars.get(i + 1).is_some_and(|c| c.is_lowercase());
            let boundary = (prev.is_lowercase() && cur.is_uppercase())
                || (prev.is_alphabetic() && cur.is_ascii_digit())
                || (prev.is_ascii_digit() && cur.is_alphabetic())
                || (prev.is_uppercase() && cur.is_uppercase() && next_lower);
            if boundary {
                parts.push(chars[start..i].iter().collect::<String>().to_lowercase());
                start = i;
            }
        }
        parts.push(chars[start..].iter().collect::<String>().to_lowercase());
    }
    if parts.is_empty() {
        parts.push(ident.to_string());
    }
    parts
}
