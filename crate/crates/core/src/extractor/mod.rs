//! Lexical decomposition of Python functions into docstring, comments and
//! comment-free code.
//!
//! Function boundaries come from indentation of logical lines: a `def`
//! owns every following logical line indented deeper than itself. A
//! docstring is a first body statement made only of string literals.
//! Nested functions belong to the outermost enclosing `def`; methods of
//! classes are reported with their class path (`Outer.Inner.method`).

pub mod lexer;
pub mod tokenize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use lexer::{lex, LexKind, Lexed, Lexeme};
pub use tokenize::{
    split_identifier, tokenize_code, tokenize_code_with, tokenize_code_with_comments, tokenize_nl,
    TokenKind, TokenSequence, TokenizerConfig,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("unterminated string literal starting on line {line}")]
    UnterminatedString { line: usize },
    #[error("source is not valid UTF-8 (first bad byte at offset {offset})")]
    Undecodable { offset: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecomposedFunction {
    /// Name qualified by enclosing classes.
    pub func_name: String,
    /// Verbatim source from `def` (or `async`) through the last body line.
    pub source: String,
    /// Source with the docstring statement removed; comments kept.
    pub code: String,
    /// Source with the docstring and every comment removed.
    pub stripped_code: String,
    pub docstring_full: String,
    pub docstring_short: String,
    pub comments: Vec<String>,
    /// 1-based inclusive line span in the scanned source.
    pub span: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct ExtractConfig {
    pub max_function_lines: usize,
    pub tokenizer: TokenizerConfig,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            max_function_lines: 2000,
            tokenizer: TokenizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub functions: Vec<DecomposedFunction>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Decodes bytes before extraction.
pub fn decode_source(bytes: &[u8]) -> Result<&str, ExtractError> {
    std::str::from_utf8(bytes).map_err(|e| ExtractError::Undecodable {
        offset: e.valid_up_to(),
    })
}

pub fn extract_functions(source: &str, path: &str) -> Result<Vec<DecomposedFunction>, ExtractError> {
    Ok(extract_functions_with(source, path, &ExtractConfig::default())?.functions)
}

/// Extracts every top-level and method-level function in source order.
/// Functions longer than `max_function_lines` are skipped with a diagnostic.
pub fn extract_functions_with(source: &str, path: &str, cfg: &ExtractConfig) -> Result<Extraction, ExtractError> {
    let lexed = lex(source, false)?;
    let mut out = Extraction::default();
    // (indent, is_class, name)
    let mut scopes: Vec<(usize, bool, String)> = Vec::new();
    let mut covered_until = 0usize;

    for (li, line) in lexed.lines.iter().enumerate() {
        while scopes.last().is_some_and(|(indent, _, _)| *indent >= line.indent) {
            scopes.pop();
        }
        let Some((keyword_at, name)) = definition_head(&lexed, li) else {
            continue;
        };
        let is_class = lexed.lexeme(line, keyword_at).text == "class";
        let qualified = scopes
            .iter()
            .filter(|(_, class, _)| *class)
            .map(|(_, _, n)| n.as_str())
            .chain(std::iter::once(name))
            .collect::<Vec<_>>()
            .join(".");
        scopes.push((line.indent, is_class, name.to_string()));
        if is_class || line.start_line <= covered_until {
            continue;
        }

        let last = body_end(&lexed, li);
        let span = (line.start_line, lexed.lines[last].end_line);
        covered_until = span.1;
        if span.1 - span.0 + 1 > cfg.max_function_lines {
            out.diagnostics.push(Diagnostic {
                path: path.to_string(),
                line: span.0,
                message: format!(
                    "function `{qualified}` spans {} lines (limit {}), skipped",
                    span.1 - span.0 + 1,
                    cfg.max_function_lines
                ),
            });
            continue;
        }
        out.functions.push(decompose(source, &lexed, li, last, qualified));
    }
    Ok(out)
}

/// Returns the index of `def`/`class` within the logical line and the name.
fn definition_head<'a>(lexed: &Lexed<'a>, li: usize) -> Option<(usize, &'a str)> {
    let line = &lexed.lines[li];
    let mut at = 0;
    if lexed.lexeme(line, 0).text == "async" {
        at = 1;
    }
    let keyword = lexed.lexemes.get(*line.lexemes.get(at)?)?;
    if keyword.kind != LexKind::Name || !(keyword.text == "def" || (at == 0 && keyword.text == "class")) {
        return None;
    }
    let name = &lexed.lexemes[*line.lexemes.get(at + 1)?];
    (name.kind == LexKind::Name).then_some((at, name.text))
}

/// Position just past the header colon of a `def` logical line.
fn header_colon(lexed: &Lexed<'_>, li: usize) -> Option<usize> {
    let line = &lexed.lines[li];
    let mut depth = 0i32;
    for i in 0..line.lexemes.len() {
        let lexeme = lexed.lexeme(line, i);
        if lexeme.kind != LexKind::Op {
            continue;
        }
        match lexeme.text {
            "(" | "[" | "{" => depth += 1,
            ")" | "]" | "}" => depth -= 1,
            ":" if depth == 0 => return Some(i + 1),
            _ => {}
        }
    }
    None
}

fn is_one_liner(lexed: &Lexed<'_>, li: usize) -> bool {
    header_colon(lexed, li).is_some_and(|after| after < lexed.lines[li].lexemes.len())
}

fn body_end(lexed: &Lexed<'_>, li: usize) -> usize {
    if is_one_liner(lexed, li) {
        return li;
    }
    let indent = lexed.lines[li].indent;
    let mut last = li;
    for (j, line) in lexed.lines.iter().enumerate().skip(li + 1) {
        if line.indent <= indent {
            break;
        }
        last = j;
    }
    last
}

/// Lexemes of the docstring statement, if the body starts with one.
fn docstring_lexemes<'a, 'l>(lexed: &'l Lexed<'a>, li: usize, last: usize) -> Option<Vec<&'l Lexeme<'a>>> {
    let (line, from) = if is_one_liner(lexed, li) {
        (&lexed.lines[li], header_colon(lexed, li)?)
    } else if last > li {
        (&lexed.lines[li + 1], 0)
    } else {
        return None;
    };
    let lexemes: Vec<_> = line.lexemes[from..].iter().map(|&i| &lexed.lexemes[i]).collect();
    let is_text_literal = |l: &Lexeme<'_>| {
        let prefix = &l.text[..l.text.find(['"', '\'']).unwrap_or(0)];
        l.kind == LexKind::Str && !prefix.contains(['b', 'B'])
    };
    let only_strings = !lexemes.is_empty() && lexemes.iter().all(|l| is_text_literal(l));
    only_strings.then_some(lexemes)
}

/// Body of a string literal without prefix and quotes.
pub fn literal_body(literal: &str) -> &str {
    let quote_at = literal.find(['"', '\'']).unwrap_or(0);
    let rest = &literal[quote_at..];
    let delim = if rest.starts_with("\"\"\"") || rest.starts_with("'''") { 3 } else { 1 };
    if rest.len() >= 2 * delim {
        &rest[delim..rest.len() - delim]
    } else {
        &rest[delim.min(rest.len())..]
    }
}

/// Docstring indentation cleanup: first line left-trimmed, common margin
/// of the remaining lines removed, surrounding blank lines dropped.
pub fn clean_docstring(raw: &str) -> String {
    let expanded: Vec<String> = raw.split('\n').map(expand_tabs).collect();
    let margin = expanded
        .iter()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start().len())
        .min()
        .unwrap_or(0);
    let mut lines: Vec<String> = expanded
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                l.trim_start().to_string()
            } else if l.trim().is_empty() {
                String::new()
            } else {
                l[margin..].trim_end().to_string()
            }
        })
        .collect();
    if let Some(first) = lines.first_mut() {
        *first = first.trim_end().to_string();
    }
    while lines.first().is_some_and(|l| l.is_empty()) {
        lines.remove(0);
    }
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

fn expand_tabs(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    for c in line.chars() {
        if c == '\t' {
            let pad = 8 - out.chars().count() % 8;
            out.extend(std::iter::repeat_n(' ', pad));
        } else {
            out.push(c);
        }
    }
    out
}

fn decompose(source: &str, lexed: &Lexed<'_>, li: usize, last: usize, func_name: String) -> DecomposedFunction {
    let head = &lexed.lines[li];
    let start = lexed.lexeme(head, 0).start;
    let end_line = lexed.lines[last].end_line;
    let last_lexeme = lexed.lexeme(&lexed.lines[last], lexed.lines[last].lexemes.len() - 1);
    let end = source[last_lexeme.end..]
        .find('\n')
        .map_or(source.len(), |i| last_lexeme.end + i);
    let end = if source[..end].ends_with('\r') { end - 1 } else { end };
    let text = &source[start..end];

    let comments: Vec<&Lexeme<'_>> = lexed
        .comments()
        .filter(|c| c.start >= start && c.end <= end)
        .collect();
    let doc = docstring_lexemes(lexed, li, last);

    let docstring_full = doc
        .as_ref()
        .map(|lexemes| clean_docstring(&lexemes.iter().map(|l| literal_body(l.text)).collect::<String>()))
        .unwrap_or_default();
    let (docstring_short, _) = split_docstring(&docstring_full);

    let doc_range = doc
        .as_ref()
        .map(|ls| (ls[0].start - start, ls[ls.len() - 1].end - start));
    let comment_ranges: Vec<(usize, usize)> = comments.iter().map(|c| (c.start - start, c.end - start)).collect();

    let code = remove_ranges(text, doc_range.as_slice(), true);
    let mut all: Vec<(usize, usize)> = comment_ranges;
    all.extend(doc_range);
    all.sort_unstable();
    let stripped_code = remove_ranges(text, &all, true);

    DecomposedFunction {
        func_name,
        source: text.to_string(),
        code,
        stripped_code,
        docstring_full,
        docstring_short,
        comments: comments
            .iter()
            .filter_map(|c| comment_body(c.text))
            .collect(),
        span: (head.start_line, end_line),
    }
}

/// Removes byte ranges (sorted, non-overlapping). Lines touched by a
/// removal lose their trailing whitespace; with `drop_emptied` such lines
/// disappear entirely when nothing but whitespace is left.
fn remove_ranges(text: &str, ranges: &[(usize, usize)], drop_emptied: bool) -> String {
    if ranges.is_empty() {
        return text.to_string();
    }
    let mut out: Vec<String> = Vec::new();
    let mut offset = 0;
    for line in text.split('\n') {
        let (ls, le) = (offset, offset + line.len());
        offset = le + 1;
        let touched = ranges
            .iter()
            .any(|&(s, e)| (s < le && e > ls) || (s <= ls && le <= e && s < e));
        if !touched {
            out.push(line.to_string());
            continue;
        }
        let mut kept = String::new();
        let mut cursor = ls;
        for &(s, e) in ranges {
            if e <= cursor || s >= le {
                continue;
            }
            if s > cursor {
                kept.push_str(&text[cursor..s]);
            }
            cursor = e.max(cursor);
        }
        if cursor < le {
            kept.push_str(&text[cursor..le]);
        }
        let kept = kept.trim_end();
        if drop_emptied && kept.trim().is_empty() {
            continue;
        }
        out.push(kept.to_string());
    }
    out.join("\n")
}

fn comment_body(raw: &str) -> Option<String> {
    let body = raw.trim_start_matches('#').trim();
    (!body.is_empty()).then(|| body.to_string())
}

fn is_magic_comment(lexeme: &Lexeme<'_>, lexed: &Lexed<'_>) -> bool {
    let own_line = !lexed
        .lines
        .iter()
        .any(|l| l.start_line <= lexeme.line && lexeme.line <= l.end_line);
    if !own_line {
        return false;
    }
    (lexeme.line == 1 && lexeme.text.starts_with("#!"))
        || (lexeme.line <= 2 && (lexeme.text.contains("coding:") || lexeme.text.contains("coding=")))
}

/// Every `#` comment outside string literals, marker and surrounding
/// whitespace removed. Shebang and encoding declarations are skipped.
pub fn extract_comments(source: &str) -> Result<Vec<String>, ExtractError> {
    let lexed = lex(source, false)?;
    Ok(lexed
        .comments()
        .filter(|c| !is_magic_comment(c, &lexed))
        .filter_map(|c| comment_body(c.text))
        .collect())
}

/// Removes comments in place. Line count is unchanged; lines that held a
/// comment lose trailing whitespace.
pub fn strip_comments(source: &str) -> Result<String, ExtractError> {
    let lexed = lex(source, false)?;
    let ranges: Vec<(usize, usize)> = lexed.comments().map(|c| (c.start, c.end)).collect();
    Ok(remove_ranges(source, &ranges, false))
}

fn docstring_lines(text: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    while lines.first().is_some_and(|l| l.is_empty()) {
        lines.remove(0);
    }
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines
}

/// Splits a docstring at its first blank line into the summary paragraph
/// and the remainder. Both halves are trimmed; the split is total.
pub fn split_docstring(docstring_full: &str) -> (String, String) {
    let lines = docstring_lines(docstring_full);
    let cut = lines.iter().position(|l| l.is_empty()).unwrap_or(lines.len());
    let short = lines[..cut].join("\n").trim().to_string();
    let rest_lines: Vec<&str> = lines[cut..].iter().copied().skip_while(|l| l.is_empty()).collect();
    let rest = rest_lines.join("\n").trim_end().to_string();
    (short, rest)
}

/// Canonical form that [`split_docstring`] halves reassemble into.
pub fn normalize_docstring(docstring_full: &str) -> String {
    let (short, rest) = split_docstring(docstring_full);
    join_docstring(&short, &rest)
}

pub fn join_docstring(short: &str, rest: &str) -> String {
    match (short.is_empty(), rest.is_empty()) {
        (_, true) => short.to_string(),
        (true, false) => rest.to_string(),
        (false, false) => format!("{short}\n\n{rest}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_function() {
        let fs = extract_functions("def f():\n    \"doc\"\n    return 1", "m.py").unwrap();
        assert_eq!(fs.len(), 1);
        let f = &fs[0];
        assert_eq!(f.func_name, "f");
        assert_eq!(f.docstring_full, "doc");
        assert_eq!(f.docstring_short, "doc");
        assert_eq!(f.stripped_code, "def f():\n    return 1");
        assert!(!f.stripped_code.contains("\"doc\""));
        assert_eq!(f.span, (1, 3));
    }

    #[test]
    fn class_methods_and_module_function_in_order() {
        let src = "\
import os

class Store:
    \"\"\"A store.\"\"\"

    def load(self, path):
        return open(path)

    def save(self, path):
        pass

def helper():
    return 2
";
        let names: Vec<_> = extract_functions(src, "s.py")
            .unwrap()
            .into_iter()
            .map(|f| f.func_name)
            .collect();
        assert_eq!(names, ["Store.load", "Store.save", "helper"]);
    }

    #[test]
    fn one_liner_tail_comment() {
        let fs = extract_functions("def g(): pass  # tail\n", "g.py").unwrap();
        assert_eq!(fs[0].comments, ["tail"]);
        assert_eq!(fs[0].stripped_code, "def g(): pass");
        assert_eq!(fs[0].code, "def g(): pass  # tail");
    }

    #[test]
    fn nested_defs_stay_inside_outer() {
        let src = "def outer():\n    def inner():\n        return 1\n    return inner\n\ndef after():\n    pass\n";
        let fs = extract_functions(src, "n.py").unwrap();
        let names: Vec<_> = fs.iter().map(|f| f.func_name.as_str()).collect();
        assert_eq!(names, ["outer", "after"]);
        assert!(fs[0].source.contains("def inner"));
        assert_eq!(fs[0].span, (1, 4));
    }

    #[test]
    fn multiline_docstring_and_comments() {
        let src = "\
class A:
    async def run(self, x):
        \"\"\"Sum values.

        Args:
            x: int
        \"\"\"
        # load data
        y = x + 1  # fast
        s = \"# not a comment\"
        return y
";
        let f = &extract_functions(src, "a.py").unwrap()[0];
        assert_eq!(f.func_name, "A.run");
        assert_eq!(f.docstring_full, "Sum values.\n\nArgs:\n    x: int");
        assert_eq!(f.docstring_short, "Sum values.");
        assert_eq!(f.comments, ["load data", "fast"]);
        assert_eq!(
            f.stripped_code,
            "async def run(self, x):\n        y = x + 1\n        s = \"# not a comment\"\n        return y"
        );
        assert!(f.code.contains("# load data"));
        assert!(!f.code.contains("Sum values"));
    }

    #[test]
    fn non_docstring_strings_are_code() {
        let f = &extract_functions("def f():\n    x = 1\n    \"\"\"late\"\"\"\n", "f.py").unwrap()[0];
        assert_eq!(f.docstring_full, "");
        assert!(f.stripped_code.contains("\"\"\"late\"\"\""));
    }

    #[test]
    fn unterminated_string_is_an_error() {
        let err = extract_functions("def f():\n    return 'oops\n", "x.py").unwrap_err();
        assert_eq!(err, ExtractError::UnterminatedString { line: 2 });
        assert!(matches!(decode_source(b"ok\xff"), Err(ExtractError::Undecodable { offset: 2 })));
    }

    #[test]
    fn oversize_functions_skipped_with_diagnostic() {
        let body: String = (0..10).map(|i| format!("    x{i} = {i}\n")).collect();
        let src = format!("def big():\n{body}def small():\n    pass\n");
        let cfg = ExtractConfig {
            max_function_lines: 5,
            ..ExtractConfig::default()
        };
        let ex = extract_functions_with(&src, "big.py", &cfg).unwrap();
        assert_eq!(ex.functions.len(), 1);
        assert_eq!(ex.functions[0].func_name, "small");
        assert_eq!(ex.diagnostics.len(), 1);
        assert_eq!(ex.diagnostics[0].line, 1);
    }

    #[test]
    fn split_docstring_examples() {
        assert_eq!(split_docstring(""), (String::new(), String::new()));
        assert_eq!(split_docstring("Save a csv file."), ("Save a csv file.".into(), String::new()));
        assert_eq!(
            split_docstring("Sum values.\n\nArgs:\n  x: int"),
            ("Sum values.".into(), "Args:\n  x: int".into())
        );
        assert_eq!(
            split_docstring("  Two line\n  summary.\n\n\n  Rest."),
            ("Two line\n  summary.".into(), "  Rest.".into())
        );
    }

    #[test]
    fn comment_examples() {
        assert!(extract_comments("x = \"#not a comment\"").unwrap().is_empty());
        assert_eq!(extract_comments("# load\nx=1  # fast").unwrap(), ["load", "fast"]);
        assert!(extract_comments("#!/usr/bin/env python").unwrap().is_empty());
        assert!(extract_comments("#!/usr/bin/env python\n# -*- coding: utf-8 -*-\n").unwrap().is_empty());
        assert_eq!(extract_comments("x = 1\n\n# coding: late\n").unwrap(), ["coding: late"]);
    }

    #[test]
    fn strip_examples() {
        let plain = "def f(x):\n    return x\n";
        assert_eq!(strip_comments(plain).unwrap(), plain);
        assert_eq!(strip_comments("x=1 # c").unwrap(), "x=1");
        assert_eq!(strip_comments("# a\nx = 1\n").unwrap(), "\nx = 1\n");
    }

    #[test]
    fn clean_docstring_dedents() {
        assert_eq!(clean_docstring("\n    Title.\n\n    Body\n      more\n    "), "Title.\n\nBody\n  more");
        assert_eq!(literal_body("r'''x'''"), "x");
        assert_eq!(literal_body("\"y\""), "y");
    }
}
