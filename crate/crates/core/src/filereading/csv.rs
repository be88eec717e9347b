//! Strict CSV reader and writer for a single known dialect.
//!
//! The reader mirrors the read options an agent controls: `skiprows`
//! physical lines are dropped, then fields are split on the delimiter outside
//! quoted regions. A quote only opens a quoted region at the start of a
//! field; inside one, a doubled quote stands for a literal quote. Any text
//! after a closing quote is kept verbatim. Unlike permissive readers, ragged
//! rows are an error rather than padded.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::format::{Delimiter, FormatTriple};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseErrorKind {
    UnterminatedQuote,
    RaggedRows,
    EmptyTable,
    SingleColumnSuspicious,
}

impl ParseErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseErrorKind::UnterminatedQuote => "unterminated_quote",
            ParseErrorKind::RaggedRows => "ragged_rows",
            ParseErrorKind::EmptyTable => "empty_table",
            ParseErrorKind::SingleColumnSuspicious => "single_column_suspicious",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}: {message}", kind.as_str())]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub message: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, message: impl Into<String>) -> Self {
        ParseError {
            kind,
            message: message.into(),
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum State {
    FieldStart,
    Unquoted,
    Quoted,
    AfterQuote,
}

pub fn parse_csv(bytes: &[u8], format: FormatTriple) -> Result<Table, ParseError> {
    let text = String::from_utf8_lossy(bytes);
    let mut rest: &str = &text;
    for _ in 0..format.skiprows {
        rest = match rest.find('\n') {
            Some(i) => &rest[i + 1..],
            None => "",
        };
    }

    let delim = format.delimiter.ch();
    let quote = format.quote.ch();
    let mut records: Vec<Vec<String>> = Vec::new();
    let mut record: Vec<String> = Vec::new();
    let mut field = String::new();
    let mut line_has_content = false;
    let mut state = State::FieldStart;
    let mut chars = rest.chars().peekable();
    let mut line = 1usize + usize::from(format.skiprows);

    let mut end_record = |record: &mut Vec<String>, field: &mut String, content: &mut bool| {
        record.push(std::mem::take(field));
        let done = std::mem::take(record);
        if std::mem::take(content) {
            records.push(done);
        }
    };

    while let Some(c) = chars.next() {
        match state {
            State::Quoted => {
                if c == quote {
                    if chars.peek() == Some(&quote) {
                        chars.next();
                        field.push(quote);
                    } else {
                        state = State::AfterQuote;
                    }
                } else {
                    if c == '\n' {
                        line += 1;
                    }
                    field.push(c);
                }
            }
            _ => {
                if c == '\r' && chars.peek() == Some(&'\n') {
                    continue;
                }
                if c == '\n' {
                    end_record(&mut record, &mut field, &mut line_has_content);
                    state = State::FieldStart;
                    line += 1;
                    continue;
                }
                line_has_content = true;
                if c == delim {
                    record.push(std::mem::take(&mut field));
                    state = State::FieldStart;
                } else if c == quote && state == State::FieldStart {
                    state = State::Quoted;
                } else {
                    field.push(c);
                    state = State::Unquoted;
                }
            }
        }
    }
    if state == State::Quoted {
        return Err(ParseError::new(
            ParseErrorKind::UnterminatedQuote,
            format!("quoted field still open at line {line}"),
        ));
    }
    end_record(&mut record, &mut field, &mut line_has_content);

    let mut it = records.into_iter();
    let header = it
        .next()
        .ok_or_else(|| ParseError::new(ParseErrorKind::EmptyTable, "no records"))?;
    if header.len() == 1 && Delimiter::ALL.iter().any(|d| header[0].contains(d.ch())) {
        return Err(ParseError::new(
            ParseErrorKind::SingleColumnSuspicious,
            format!("parsed a single column named {:?}", header[0]),
        ));
    }
    let rows: Vec<Vec<String>> = it.collect();
    if let Some((i, r)) = rows
        .iter()
        .enumerate()
        .find(|(_, r)| r.len() != header.len())
    {
        return Err(ParseError::new(
            ParseErrorKind::RaggedRows,
            format!(
                "row {} has {} fields, expected {}",
                i + 1,
                r.len(),
                header.len()
            ),
        ));
    }
    Ok(Table { header, rows })
}

fn needs_quoting(field: &str, format: FormatTriple) -> bool {
    field.contains([format.delimiter.ch(), format.quote.ch(), '\n', '\r'])
}

fn push_field(out: &mut String, field: &str, format: FormatTriple) {
    let q = format.quote.ch();
    if needs_quoting(field, format) {
        out.push(q);
        for c in field.chars() {
            if c == q {
                out.push(q);
            }
            out.push(c);
        }
        out.push(q);
    } else {
        out.push_str(field);
    }
}

/// Writes `table` under `format`. With `skiprows = 1` the file starts with
/// `preamble`, which must not contain delimiter, quote or newline characters.
pub fn render_csv(table: &Table, format: FormatTriple, preamble: &str) -> Vec<u8> {
    debug_assert!(!preamble.contains([',', ';', '\t', '"', '\'', '\n', '\r']));
    let mut out = String::new();
    if format.skiprows > 0 {
        out.push_str(preamble);
        out.push('\n');
    }
    for record in std::iter::once(&table.header).chain(&table.rows) {
        for (i, field) in record.iter().enumerate() {
            if i > 0 {
                out.push(format.delimiter.ch());
            }
            push_field(&mut out, field, format);
        }
        out.push('\n');
    }
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filereading::format::QuoteChar;
    use proptest::prelude::*;

    fn z(d: Delimiter, q: QuoteChar, s: u8) -> FormatTriple {
        FormatTriple::new(d, q, s)
    }

    #[test]
    fn semicolon_table() {
        let t = parse_csv(b"a;b\n1;2\n", z(Delimiter::Semicolon, QuoteChar::Double, 0)).unwrap();
        assert_eq!(t.header, vec!["a", "b"]);
        assert_eq!(t.rows, vec![vec!["1", "2"]]);
        let e = parse_csv(b"a;b\n1;2\n", z(Delimiter::Comma, QuoteChar::Double, 0)).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::SingleColumnSuspicious);
    }

    #[test]
    fn quoting_rules() {
        let f = z(Delimiter::Comma, QuoteChar::Double, 0);
        let t = parse_csv(b"a,b\n\"x,y\",\"say \"\"hi\"\"\"\nab\"c,\"q\"r\n", f).unwrap();
        assert_eq!(t.rows[0], vec!["x,y", "say \"hi\""]);
        assert_eq!(t.rows[1], vec!["ab\"c", "qr"]);
        let e = parse_csv(b"a,b\n\"open,1\n", f).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnterminatedQuote);
    }

    #[test]
    fn crlf_and_blank_lines() {
        let f = z(Delimiter::Tab, QuoteChar::Single, 0);
        let t = parse_csv(b"a\tb\r\n\r\n1\t2\r\n", f).unwrap();
        assert_eq!(t.rows, vec![vec!["1", "2"]]);
    }

    #[test]
    fn skiprows_and_errors() {
        let f = z(Delimiter::Comma, QuoteChar::Double, 1);
        let t = parse_csv(b"# exported 2024-01-01\na,b\n1,2\n", f).unwrap();
        assert_eq!(t.header, vec!["a", "b"]);
        let e = parse_csv(
            b"# exported 2024-01-01\na,b\n1,2\n",
            FormatTriple::default(),
        )
        .unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::RaggedRows);
        assert_eq!(
            parse_csv(b"", f).unwrap_err().kind,
            ParseErrorKind::EmptyTable
        );
        assert_eq!(
            parse_csv(b"only\n", f).unwrap_err().kind,
            ParseErrorKind::EmptyTable
        );
    }

    #[test]
    fn render_quotes_minimally() {
        let t = Table {
            header: vec!["id".into(), "note".into()],
            rows: vec![
                vec!["1".into(), "a;b".into()],
                vec!["2".into(), "it's".into()],
            ],
        };
        let out = render_csv(&t, z(Delimiter::Semicolon, QuoteChar::Single, 1), "# junk");
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "# junk\nid;note\n1;'a;b'\n2;'it''s'\n"
        );
    }

    fn field() -> impl Strategy<Value = String> {
        proptest::string::string_regex("[a-z0-9 ,;\t\"'\n.-]{0,8}").unwrap()
    }

    fn table() -> impl Strategy<Value = Table> {
        (2usize..5, 0usize..6).prop_flat_map(|(c, r)| {
            (
                proptest::collection::vec(field(), c),
                proptest::collection::vec(proptest::collection::vec(field(), c), r),
            )
                .prop_map(|(header, rows)| Table { header, rows })
        })
    }

    proptest! {
        #[test]
        fn roundtrip(t in table(), i in 0usize..12) {
            let f = FormatTriple::from_index(i);
            let bytes = render_csv(&t, f, "# exported 2024-01-01");
            prop_assert_eq!(parse_csv(&bytes, f).unwrap(), t);
        }
    }
}
