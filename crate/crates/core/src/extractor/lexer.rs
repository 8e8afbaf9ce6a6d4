//! Lexical scanner for Python source.
//!
//! Produces lexemes with byte spans and line numbers, and groups the
//! non-comment lexemes into logical lines (bracket depth and backslash
//! continuations respected). No parse tree is built.

use super::ExtractError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexKind {
    Name,
    Number,
    Str,
    Op,
    Comment,
    /// Any character the scanner has no class for.
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexeme<'a> {
    pub kind: LexKind,
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
    /// 1-based line of the first character.
    pub line: usize,
    /// 1-based line of the last character.
    pub end_line: usize,
}

/// Indices into the lexeme list for one logical line, comments excluded.
#[derive(Debug, Clone)]
pub struct LogicalLine {
    pub lexemes: Vec<usize>,
    /// Indentation column of the first lexeme (tabs advance to multiples of 8).
    pub indent: usize,
    pub start_line: usize,
    pub end_line: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Lexed<'a> {
    pub lexemes: Vec<Lexeme<'a>>,
    pub lines: Vec<LogicalLine>,
}

impl<'a> Lexed<'a> {
    pub fn comments(&self) -> impl Iterator<Item = &Lexeme<'a>> {
        self.lexemes.iter().filter(|l| l.kind == LexKind::Comment)
    }

    pub fn lexeme(&self, line: &LogicalLine, i: usize) -> &Lexeme<'a> {
        &self.lexemes[line.lexemes[i]]
    }
}

// Longest first so that greedy matching picks `**=` over `**`.
const OPERATORS: [&str; 48] = [
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=",
    "%=", "&=", "|=", "^=", "@=", "**", "//", "<<", ">>", "+", "-", "*", "/", "%", "@", "&", "|",
    "^", "~", "<", ">", "(", ")", "[", "]", "{", "}", ",", ":", ".", ";", "=", "!",
];

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

fn is_string_prefix(prefix: &str) -> bool {
    if prefix.is_empty() || prefix.len() > 2 {
        return false;
    }
    let lower = prefix.to_ascii_lowercase();
    matches!(lower.as_str(), "r" | "u" | "b" | "f" | "br" | "rb" | "fr" | "rf")
}

struct Scanner<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    lenient: bool,
}

impl<'a> Scanner<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, offset: usize) -> Option<char> {
        self.src[self.pos..].chars().nth(offset)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
        }
        Some(c)
    }

    fn starts_with(&self, s: &str) -> bool {
        self.src[self.pos..].starts_with(s)
    }

    /// Consumes a string body after its prefix; `self.pos` is at the opening quote.
    fn string_body(&mut self, start_line: usize) -> Result<(), ExtractError> {
        let quote = self.peek().expect("caller saw a quote");
        let triple = self.peek_at(1) == Some(quote) && self.peek_at(2) == Some(quote);
        let delim_len = if triple { 3 } else { 1 };
        for _ in 0..delim_len {
            self.bump();
        }
        loop {
            match self.peek() {
                None => {
                    if self.lenient {
                        return Ok(());
                    }
                    return Err(ExtractError::UnterminatedString { line: start_line });
                }
                Some('\\') => {
                    self.bump();
                    self.bump();
                }
                Some('\n') if !triple => {
                    if self.lenient {
                        return Ok(());
                    }
                    return Err(ExtractError::UnterminatedString { line: start_line });
                }
                Some(c) if c == quote => {
                    if !triple {
                        self.bump();
                        return Ok(());
                    }
                    if self.peek_at(1) == Some(quote) && self.peek_at(2) == Some(quote) {
                        self.bump();
                        self.bump();
                        self.bump();
                        return Ok(());
                    }
                    self.bump();
                }
                Some(_) => {
                    self.bump();
                }
            }
        }
    }

    fn number(&mut self) {
        let c = self.bump().expect("digit or dot");
        if c == '0' && matches!(self.peek(), Some('x' | 'X' | 'o' | 'O' | 'b' | 'B')) {
            self.bump();
            while matches!(self.peek(), Some(c) if c.is_ascii_hexdigit() || c == '_') {
                self.bump();
            }
            return;
        }
        let mut seen_exp = false;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || c == '_' || c == '.' {
                self.bump();
            } else if (c == 'e' || c == 'E') && !seen_exp {
                seen_exp = true;
                self.bump();
                if matches!(self.peek(), Some('+' | '-')) {
                    self.bump();
                }
            } else if c == 'j' || c == 'J' || c == 'l' || c == 'L' {
                self.bump();
                break;
            } else {
                break;
            }
        }
    }
}

fn indent_of(src: &str, lexeme_start: usize) -> usize {
    let line_start = src[..lexeme_start].rfind('\n').map_or(0, |i| i + 1);
    let mut col = 0;
    for c in src[line_start..lexeme_start].chars() {
        match c {
            '\t' => col = (col / 8 + 1) * 8,
            '\x0c' => col = 0,
            _ => col += 1,
        }
    }
    col
}

/// Scans `src`. In strict mode an unterminated string is an error; in
/// lenient mode it runs to the end of its line (or of the input, for
/// triple-quoted strings) and scanning continues.
pub fn lex(src: &str, lenient: bool) -> Result<Lexed<'_>, ExtractError> {
    let mut sc = Scanner {
        src,
        pos: 0,
        line: 1,
        lenient,
    };
    let mut lexemes = Vec::new();
    let mut lines = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut depth: usize = 0;

    let mut finish_line = |current: &mut Vec<usize>, lexemes: &Vec<Lexeme<'_>>| {
        if current.is_empty() {
            return;
        }
        let first: &Lexeme<'_> = &lexemes[current[0]];
        let last: &Lexeme<'_> = &lexemes[*current.last().expect("nonempty")];
        lines.push(LogicalLine {
            indent: indent_of(src, first.start),
            start_line: first.line,
            end_line: last.end_line,
            lexemes: std::mem::take(current),
        });
    };

    while let Some(c) = sc.peek() {
        let start = sc.pos;
        let line = sc.line;
        let kind = match c {
            '\n' => {
                sc.bump();
                if depth == 0 {
                    finish_line(&mut current, &lexemes);
                }
                continue;
            }
            '\\' if matches!(sc.peek_at(1), Some('\n')) => {
                sc.bump();
                sc.bump();
                continue;
            }
            '\\' if sc.starts_with("\\\r\n") => {
                sc.bump();
                sc.bump();
                sc.bump();
                continue;
            }
            c if c.is_whitespace() => {
                sc.bump();
                continue;
            }
            '#' => {
                while matches!(sc.peek(), Some(c) if c != '\n') {
                    sc.bump();
                }
                LexKind::Comment
            }
            '"' | '\'' => {
                sc.string_body(line)?;
                LexKind::Str
            }
            c if is_ident_start(c) => {
                while matches!(sc.peek(), Some(c) if is_ident_continue(c)) {
                    sc.bump();
                }
                if matches!(sc.peek(), Some('"' | '\'')) && is_string_prefix(&src[start..sc.pos]) {
                    sc.string_body(line)?;
                    LexKind::Str
                } else {
                    LexKind::Name
                }
            }
            c if c.is_ascii_digit() => {
                sc.number();
                LexKind::Number
            }
            '.' if matches!(sc.peek_at(1), Some(d) if d.is_ascii_digit()) => {
                sc.number();
                LexKind::Number
            }
            _ => {
                if let Some(op) = OPERATORS.iter().find(|op| sc.starts_with(op)) {
                    for _ in 0..op.len() {
                        sc.bump();
                    }
                    match *op {
                        "(" | "[" | "{" => depth += 1,
                        ")" | "]" | "}" => depth = depth.saturating_sub(1),
                        _ => {}
                    }
                    LexKind::Op
                } else {
                    sc.bump();
                    LexKind::Other
                }
            }
        };
        let end = sc.pos;
        let text = &src[start..end];
        let end_line = line + text.matches('\n').count();
        if kind != LexKind::Comment {
            current.push(lexemes.len());
        }
        lexemes.push(Lexeme {
            kind,
            text,
            start,
            end,
            line,
            end_line,
        });
    }
    finish_line(&mut current, &lexemes);
    Ok(Lexed { lexemes, lines })
}
