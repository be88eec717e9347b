//! Action grammars for model replies.
//!
//! A reply may open with one `<think>...</think>` block, which is dropped.
//! The first well-formed action in the remainder wins.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use cta_core::filereading::{Attribute, Delimiter, FormatTriple, QuoteChar};
use cta_core::EnvKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentAction {
    Verify(String),
    Guess(String),
    Retrieve,
    Answer(String),
    UnitTests(Vec<Attribute>),
    Code(FormatTriple),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAction {
    pub env: EnvKind,
    pub action: AgentAction,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseFailure {
    #[error("reply opens a <think> block that is never closed")]
    UnterminatedThink,
    #[error("no recognizable action in reply")]
    NoAction,
    #[error("unsupported read option: {0}")]
    Unsupported(String),
}

fn re(pattern: &str) -> Regex {
    Regex::new(pattern).expect("valid regex")
}

static PANDORA: LazyLock<Regex> = LazyLock::new(|| re(r"\b(VERIFY|GUESS)[ \t]+<?([A-Za-z][A-Za-z0-9_]*)>?"));
static RETRIEVE: LazyLock<Regex> = LazyLock::new(|| re(r"\bRETRIEVE\b"));
static ANSWER: LazyLock<Regex> = LazyLock::new(|| re(r"\bANSWER:[ \t]*(\S[^\n]*)"));
static UNIT_TESTS: LazyLock<Regex> = LazyLock::new(|| re(r"\bUNIT_TESTS:[ \t]*([^\n]*)"));
static TEST_CALL: LazyLock<Regex> = LazyLock::new(|| re(r"\btest_(delimiter|quotechar|skiprows)\s*\("));
static FENCE: LazyLock<Regex> = LazyLock::new(|| re(r"(?s)```[A-Za-z0-9_+-]*[ \t]*\r?\n(.*?)```"));
static STRING_KWARG: LazyLock<Regex> = LazyLock::new(|| {
    re(r#"\b(delimiter|sep|quotechar)\s*=\s*[rR]?('(?:[^'\\\n]|\\.)*'|"(?:[^"\\\n]|\\.)*")"#)
});
static SKIPROWS: LazyLock<Regex> = LazyLock::new(|| re(r"\bskiprows\s*=\s*([^,)\s]+)"));

/// Removes one leading reasoning block.
pub fn strip_think(reply: &str) -> Result<&str, ParseFailure> {
    let trimmed = reply.trim_start();
    match trimmed.strip_prefix("<think>") {
        None => Ok(trimmed),
        Some(rest) => match rest.find("</think>") {
            Some(end) => Ok(rest[end + "</think>".len()..].trim_start()),
            None => Err(ParseFailure::UnterminatedThink),
        },
    }
}

pub fn parse_action(env: EnvKind, reply: &str) -> Result<ParsedAction, ParseFailure> {
    let body = strip_think(reply)?;
    let action = match env {
        EnvKind::Pandora => parse_pandora(body),
        EnvKind::Qa => parse_qa(body),
        EnvKind::Code => parse_code(body)?,
    }
    .ok_or(ParseFailure::NoAction)?;
    Ok(ParsedAction { env, action, raw: reply.to_string() })
}

fn parse_pandora(body: &str) -> Option<AgentAction> {
    let c = PANDORA.captures(body)?;
    let label = c[2].to_string();
    Some(if &c[1] == "VERIFY" { AgentAction::Verify(label) } else { AgentAction::Guess(label) })
}

fn answer_at(body: &str) -> Option<(usize, AgentAction)> {
    ANSWER.captures(body).map(|c| (c.get(0).expect("group 0").start(), AgentAction::Answer(c[1].trim().to_string())))
}

fn parse_qa(body: &str) -> Option<AgentAction> {
    let retrieve = RETRIEVE.find(body).map(|m| (m.start(), AgentAction::Retrieve));
    [retrieve, answer_at(body)].into_iter().flatten().min_by_key(|(pos, _)| *pos).map(|(_, a)| a)
}

fn parse_code(body: &str) -> Result<Option<AgentAction>, ParseFailure> {
    let mut candidates: Vec<(usize, Result<AgentAction, ParseFailure>)> = Vec::new();
    if let Some(c) = UNIT_TESTS.captures(body) {
        let tests: Vec<Attribute> =
            TEST_CALL.captures_iter(&c[1]).filter_map(|t| Attribute::from_param_name(&t[1])).collect();
        if !tests.is_empty() {
            candidates.push((c.get(0).expect("group 0").start(), Ok(AgentAction::UnitTests(tests))));
        }
    }
    if let Some(c) = FENCE.captures(body) {
        candidates.push((c.get(0).expect("group 0").start(), read_options(&c[1]).map(AgentAction::Code)));
    }
    if let Some((pos, a)) = answer_at(body) {
        candidates.push((pos, Ok(a)));
    }
    candidates.into_iter().min_by_key(|(pos, _)| *pos).map(|(_, a)| a).transpose()
}

/// Decodes a Python string literal, including its quotes.
fn python_string(literal: &str) -> String {
    let inner = &literal[1..literal.len() - 1];
    let mut out = String::new();
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

fn single_char(name: &str, value: &str) -> Result<char, ParseFailure> {
    let mut it = value.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(ParseFailure::Unsupported(format!("{name}={value:?}"))),
    }
}

/// The read options a code block passes, with defaults for absent ones.
pub fn read_options(code: &str) -> Result<FormatTriple, ParseFailure> {
    let mut delimiter = None;
    let mut quote = None;
    for c in STRING_KWARG.captures_iter(code) {
        let value = python_string(&c[2]);
        let ch = single_char(&c[1], &value)?;
        match &c[1] {
            "quotechar" if quote.is_none() => {
                quote = Some(QuoteChar::from_char(ch).ok_or_else(|| ParseFailure::Unsupported(format!("quotechar={value:?}")))?)
            }
            "delimiter" | "sep" if delimiter.is_none() => {
                delimiter = Some(
                    Delimiter::from_char(ch).ok_or_else(|| ParseFailure::Unsupported(format!("{}={value:?}", &c[1])))?,
                )
            }
            _ => {}
        }
    }
    let skiprows = match SKIPROWS.captures(code) {
        None => 0,
        Some(c) => match &c[1] {
            "0" | "None" => 0,
            "1" => 1,
            other => return Err(ParseFailure::Unsupported(format!("skiprows={other}"))),
        },
    };
    Ok(FormatTriple::new(delimiter.unwrap_or(Delimiter::Comma), quote.unwrap_or(QuoteChar::Double), skiprows))
}

/// Canonical reply text for an action; `filename` is used by code actions.
pub fn render_action(action: &AgentAction, filename: &str) -> String {
    match action {
        AgentAction::Verify(l) => format!("VERIFY {l}"),
        AgentAction::Guess(l) => format!("GUESS {l}"),
        AgentAction::Retrieve => "RETRIEVE".into(),
        AgentAction::Answer(a) => format!("ANSWER: {a}"),
        AgentAction::UnitTests(tests) => {
            let calls: Vec<String> = tests.iter().map(|t| format!("test_{}(\"{filename}\")", t.param_name())).collect();
            format!("UNIT_TESTS: {}", calls.join(", "))
        }
        AgentAction::Code(z) => format!(
            "```python\nimport pandas as pd\ndf = pd.read_csv(\"{filename}\", delimiter={}, quotechar={}, skiprows={})\nprint(df.shape)\n```",
            z.repr(Attribute::Delimiter),
            z.repr(Attribute::Quote),
            z.skiprows
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn think_block_is_stripped_once() {
        assert_eq!(strip_think("  <think>a</think>\n\nGUESS B").unwrap(), "GUESS B");
        assert_eq!(strip_think("<think>x").unwrap_err(), ParseFailure::UnterminatedThink);
        assert_eq!(strip_think("VERIFY A").unwrap(), "VERIFY A");
    }

    #[test]
    fn pandora_grammar() {
        let p = parse_action(EnvKind::Pandora, "Action: **GUESS B**").unwrap();
        assert_eq!(p.action, AgentAction::Guess("B".into()));
        assert_eq!(parse_action(EnvKind::Pandora, "VERIFY <C>").unwrap().action, AgentAction::Verify("C".into()));
        assert_eq!(parse_action(EnvKind::Pandora, "I pick B").unwrap_err(), ParseFailure::NoAction);
    }

    #[test]
    fn qa_grammar_takes_first_action() {
        assert_eq!(parse_action(EnvKind::Qa, "RETRIEVE").unwrap().action, AgentAction::Retrieve);
        assert_eq!(
            parse_action(EnvKind::Qa, "ANSWER:  Paris \nthen RETRIEVE").unwrap().action,
            AgentAction::Answer("Paris".into())
        );
        assert_eq!(parse_action(EnvKind::Qa, "ANSWER:").unwrap_err(), ParseFailure::NoAction);
    }

    #[test]
    fn code_block_options() {
        let code = "```python\nimport pandas as pd\ndf = pd.read_csv('x.csv', sep='\\t', quotechar=\"'\")\nprint(df['a'].max())\n```";
        let p = parse_action(EnvKind::Code, code).unwrap();
        assert_eq!(p.action, AgentAction::Code(FormatTriple::new(Delimiter::Tab, QuoteChar::Single, 0)));
        let defaults = "```\nprint(pd.read_csv(path).shape)\n```";
        assert_eq!(parse_action(EnvKind::Code, defaults).unwrap().action, AgentAction::Code(FormatTriple::default()));
        let pipe = "```python\npd.read_csv(p, delimiter='|')\n```";
        assert!(matches!(parse_action(EnvKind::Code, pipe), Err(ParseFailure::Unsupported(_))));
        let skip = "```python\npd.read_csv(p, skiprows=1, delimiter=\";\")\n```";
        assert_eq!(
            parse_action(EnvKind::Code, skip).unwrap().action,
            AgentAction::Code(FormatTriple::new(Delimiter::Semicolon, QuoteChar::Double, 1))
        );
    }

    #[test]
    fn unclosed_fence_is_not_code() {
        assert_eq!(parse_action(EnvKind::Code, "```python\nprint(1)\n").unwrap_err(), ParseFailure::NoAction);
    }

    #[test]
    fn canonical_renderings_round_trip() {
        let cases = [
            (EnvKind::Pandora, AgentAction::Verify("A".into())),
            (EnvKind::Pandora, AgentAction::Guess("C".into())),
            (EnvKind::Qa, AgentAction::Retrieve),
            (EnvKind::Qa, AgentAction::Answer("Marie Curie".into())),
            (EnvKind::Code, AgentAction::Answer("12.5".into())),
            (EnvKind::Code, AgentAction::UnitTests(vec![Attribute::Skiprows, Attribute::Delimiter])),
        ];
        for (env, a) in cases {
            assert_eq!(parse_action(env, &render_action(&a, "f_eu.csv")).unwrap().action, a);
        }
        for z in FormatTriple::all() {
            let a = AgentAction::Code(z);
            assert_eq!(parse_action(EnvKind::Code, &render_action(&a, "f.csv")).unwrap().action, a);
        }
    }
}
