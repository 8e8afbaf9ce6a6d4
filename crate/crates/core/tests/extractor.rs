mod support;

use augcode_core::extractor::lexer::{lex, LexKind};
use augcode_core::extractor::{
    extract_comments, extract_functions, join_docstring, normalize_docstring, split_docstring, strip_comments,
    tokenize_code, tokenize_nl,
};
use proptest::prelude::*;
use support::fixture;

fn code_lexemes(src: &str) -> Vec<(LexKind, String)> {
    lex(src, false)
        .unwrap()
        .lexemes
        .into_iter()
        .filter(|l| l.kind != LexKind::Comment)
        .map(|l| (l.kind, l.text.to_string()))
        .collect()
}

#[test]
fn mixed_fixture_comments_and_stripping() {
    let src = std::fs::read_to_string(fixture("extractor/mixed.py")).unwrap();
    assert_eq!(src.lines().count(), 50);
    assert_eq!(
        extract_comments(&src).unwrap(),
        [
            "standard library",
            "fragment lives in the string",
            "rows are tuples",
            "copy",
            "join each field",
            "skip blank lines",
            "first",
            "wrapped",
            "after continuation",
            "end of file",
        ]
    );
    let stripped = strip_comments(&src).unwrap();
    assert_eq!(stripped.lines().count(), 50);
    assert_eq!(code_lexemes(&stripped), code_lexemes(&src));
    assert!(stripped.contains("\"http://example.com/#anchor\""));
    assert!(stripped.contains("# still a string"));
    assert!(stripped.contains("f\"{total} # items\""));
    assert!(!stripped.contains("# copy"));
    assert!(extract_comments(&stripped).unwrap().is_empty());

    let names: Vec<String> = extract_functions(&src, "mixed.py").unwrap().into_iter().map(|f| f.func_name).collect();
    assert_eq!(names, ["Report.__init__", "Report.render", "parse", "tail"]);
}

/// One generated statement and the comment it carries, if any.
#[derive(Debug, Clone)]
enum Stmt {
    Assign { value: String, comment: Option<String> },
    Triple { value: String },
    Comment(String),
}

fn words() -> impl Strategy<Value = String> {
    "[a-z]{1,5}( [a-z]{1,5}){0,3}"
}

fn stmt() -> impl Strategy<Value = Stmt> {
    prop_oneof![
        ("[a-z #']{0,12}", prop::option::of(words())).prop_map(|(value, comment)| Stmt::Assign { value, comment }),
        "[a-z #\"\n]{0,20}".prop_map(|value| Stmt::Triple { value }),
        words().prop_map(Stmt::Comment),
    ]
}

fn render(stmts: &[Stmt]) -> (String, Vec<String>) {
    let mut src = String::from("x = 1\n");
    let mut comments = Vec::new();
    for (i, s) in stmts.iter().enumerate() {
        match s {
            Stmt::Assign { value, comment } => {
                src.push_str(&format!("v{i} = \"{value}\""));
                if let Some(c) = comment {
                    src.push_str(&format!("  # {c}"));
                    comments.push(c.clone());
                }
                src.push('\n');
            }
            Stmt::Triple { value } => src.push_str(&format!("t{i} = '''{value}'''\n")),
            Stmt::Comment(c) => {
                src.push_str(&format!("# {c}\n"));
                comments.push(c.clone());
            }
        }
    }
    (src, comments)
}

proptest! {
    #[test]
    fn comments_found_exactly_and_never_inside_strings(stmts in prop::collection::vec(stmt(), 0..15)) {
        let (src, expected) = render(&stmts);
        prop_assert_eq!(extract_comments(&src).unwrap(), expected);
    }

    #[test]
    fn stripping_preserves_the_code_lexeme_stream(stmts in prop::collection::vec(stmt(), 0..15)) {
        let (src, _) = render(&stmts);
        let stripped = strip_comments(&src).unwrap();
        prop_assert_eq!(code_lexemes(&stripped), code_lexemes(&src));
        prop_assert!(extract_comments(&stripped).unwrap().is_empty());
        prop_assert_eq!(stripped.lines().count(), src.lines().count());
    }

    #[test]
    fn docstring_halves_reassemble(text in "[a-zA-Z .,\n ]{0,60}") {
        let (short, rest) = split_docstring(&text);
        let normalized = normalize_docstring(&text);
        prop_assert_eq!(join_docstring(&short, &rest), normalized.clone());
        prop_assert_eq!(normalize_docstring(&normalized), normalized.clone());
        prop_assert_eq!(split_docstring(&normalized), (short.clone(), rest));
        prop_assert!(!short.contains("\n\n"));
    }

    #[test]
    fn nl_tokens_are_clean_and_idempotent(text in any::<String>()) {
        let tokens = tokenize_nl(&text).tokens;
        prop_assert!(tokens.iter().all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)));
        prop_assert_eq!(tokenize_nl(&tokens.join(" ")).tokens, tokens.clone());
        prop_assert_eq!(tokenize_nl(&text).tokens, tokens);
    }

    #[test]
    fn code_tokenizer_is_total_and_whitespace_free_outside_strings(text in any::<String>()) {
        let tokens = tokenize_code(&text).tokens;
        prop_assert_eq!(tokenize_code(&text).tokens, tokens.clone());
        for t in &tokens {
            prop_assert!(!t.is_empty());
            let body = t.trim_start_matches(|c: char| "rRbBuUfF".contains(c));
            let is_string = body.starts_with('"') || body.starts_with('\'');
            prop_assert!(is_string || !t.chars().any(char::is_whitespace), "token {:?}", t);
        }
    }
}
