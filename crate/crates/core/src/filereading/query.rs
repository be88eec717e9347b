//! Aggregate queries over parsed tables.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::csv::Table;

/// Cell spellings treated as missing.
pub const NULL_TOKENS: [&str; 5] = ["", "None", "NaN", "nan", "null"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryOp {
    Min,
    Max,
    Mean,
    CountNonNull,
    ArgmaxBy,
}

impl QueryOp {
    pub const ALL: [QueryOp; 5] = [
        QueryOp::Min,
        QueryOp::Max,
        QueryOp::Mean,
        QueryOp::CountNonNull,
        QueryOp::ArgmaxBy,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub op: QueryOp,
    pub target_column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub by_column: Option<String>,
}

impl QuerySpec {
    /// Plain-language task statement.
    pub fn describe(&self) -> String {
        let t = &self.target_column;
        match self.op {
            QueryOp::Min => format!("What is the minimum value of the `{t}` column, excluding any None entries?"),
            QueryOp::Max => format!("What is the maximum value of the `{t}` column, excluding any None entries?"),
            QueryOp::Mean => format!(
                "What is the mean of the `{t}` column, excluding any None entries? Report it with 6 significant digits."
            ),
            QueryOp::CountNonNull => format!("How many rows have a non-None value in the `{t}` column?"),
            QueryOp::ArgmaxBy => format!(
                "Which `{}` has the maximum `{t}`, excluding any None entries? If several rows tie, report the first.",
                self.by_column.as_deref().unwrap_or("?")
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("column '{0}' not found")]
    MissingColumn(String),
    #[error("column '{column}' has non-numeric value {value:?}")]
    NonNumeric { column: String, value: String },
    #[error("column '{0}' has no non-null values")]
    AllNull(String),
    #[error("argmax_by needs a by_column")]
    MissingByColumn,
}

pub fn is_null(cell: &str) -> bool {
    NULL_TOKENS.contains(&cell.trim())
}

/// Python-style `%.6g` rendering.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = usize::try_from(5 - exp).expect("non-negative");
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn numeric_column(table: &Table, name: &str) -> Result<Vec<Option<f64>>, QueryError> {
    let col = table
        .column(name)
        .ok_or_else(|| QueryError::MissingColumn(name.to_string()))?;
    col.into_iter()
        .map(|cell| {
            if is_null(cell) {
                Ok(None)
            } else {
                cell.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(Some)
                    .ok_or_else(|| QueryError::NonNumeric {
                        column: name.to_string(),
                        value: cell.to_string(),
                    })
            }
        })
        .collect()
}

pub fn evaluate_query(table: &Table, query: &QuerySpec) -> Result<String, QueryError> {
    let values = numeric_column(table, &query.target_column)?;
    let present: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|x| (i, x)))
        .collect();
    if query.op == QueryOp::CountNonNull {
        return Ok(present.len().to_string());
    }
    if present.is_empty() {
        return Err(QueryError::AllNull(query.target_column.clone()));
    }
    Ok(match query.op {
        QueryOp::Min => format_number(present.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)),
        QueryOp::Max => format_number(
            present
                .iter()
                .map(|p| p.1)
                .fold(f64::NEG_INFINITY, f64::max),
        ),
        QueryOp::Mean => {
            format_number(present.iter().map(|p| p.1).sum::<f64>() / present.len() as f64)
        }
        QueryOp::ArgmaxBy => {
            let by = query
                .by_column
                .as_deref()
                .ok_or(QueryError::MissingByColumn)?;
            let by_idx = table
                .column_index(by)
                .ok_or_else(|| QueryError::MissingColumn(by.to_string()))?;
            let (row, _) = present
                .iter()
                .fold(present[0], |best, &p| if p.1 > best.1 { p } else { best });
            table.rows[row][by_idx].clone()
        }
        QueryOp::CountNonNull => unreachable!("handled above"),
    })
}

/// Answer comparison: numbers within relative tolerance 1e-6, other text
/// by trimmed equality.
pub fn answers_match(reply: &str, gold: &str) -> bool {
    let (a, b) = (reply.trim(), gold.trim());
    if a == b {
        return true;
    }
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) if x.is_finite() && y.is_finite() => {
            (x - y).abs() <= 1e-6 * x.abs().max(y.abs())
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(cols: &[&str], rows: &[&[&str]]) -> Table {
        Table {
            header: cols.iter().map(|s| s.to_string()).collect(),
            rows: rows
                .iter()
                .map(|r| r.iter().map(|s| s.to_string()).collect())
                .collect(),
        }
    }

    fn q(op: QueryOp) -> QuerySpec {
        QuerySpec {
            op,
            target_column: "v".into(),
            by_column: Some("id".into()),
        }
    }

    #[test]
    fn aggregates_skip_nulls() {
        let t = table(
            &["id", "v"],
            &[&["a", "3"], &["b", "None"], &["c", "1"], &["d", "2"]],
        );
        assert_eq!(evaluate_query(&t, &q(QueryOp::Min)).unwrap(), "1");
        assert_eq!(evaluate_query(&t, &q(QueryOp::Max)).unwrap(), "3");
        assert_eq!(evaluate_query(&t, &q(QueryOp::Mean)).unwrap(), "2");
        assert_eq!(evaluate_query(&t, &q(QueryOp::CountNonNull)).unwrap(), "3");
        assert_eq!(evaluate_query(&t, &q(QueryOp::ArgmaxBy)).unwrap(), "a");
        let two = table(&["id", "v"], &[&["a", "1"], &["b", "2"]]);
        assert_eq!(evaluate_query(&two, &q(QueryOp::Mean)).unwrap(), "1.5");
    }

    #[test]
    fn argmax_ties_pick_first() {
        let t = table(&["id", "v"], &[&["a", "1"], &["b", "5"], &["c", "5"]]);
        assert_eq!(evaluate_query(&t, &q(QueryOp::ArgmaxBy)).unwrap(), "b");
    }

    #[test]
    fn errors() {
        let t = table(&["id", "v"], &[&["a", "None"], &["b", "nan"]]);
        assert_eq!(
            evaluate_query(&t, &q(QueryOp::Min)),
            Err(QueryError::AllNull("v".into()))
        );
        assert_eq!(evaluate_query(&t, &q(QueryOp::CountNonNull)).unwrap(), "0");
        let bad = table(&["id", "v"], &[&["a", "1\"x"]]);
        assert!(matches!(
            evaluate_query(&bad, &q(QueryOp::Max)),
            Err(QueryError::NonNumeric { .. })
        ));
        let missing = QuerySpec {
            op: QueryOp::Max,
            target_column: "w".into(),
            by_column: None,
        };
        assert!(matches!(
            evaluate_query(&t, &missing),
            Err(QueryError::MissingColumn(_))
        ));
    }

    #[test]
    fn six_significant_digits() {
        let cases = [
            (1.5, "1.5"),
            (2.0, "2"),
            (1.0 / 3.0, "0.333333"),
            (123456.7, "123457"),
            (1234567.0, "1.23457e+06"),
            (0.0001234567, "0.000123457"),
            (0.00001234567, "1.23457e-05"),
            (-42.125, "-42.125"),
            (999999.5, "1e+06"),
            (100.0, "100"),
        ];
        for (x, s) in cases {
            assert_eq!(format_number(x), s, "{x}");
        }
    }

    #[test]
    fn answer_tolerance() {
        assert!(answers_match(" 12.5 ", "12.5"));
        assert!(answers_match("12.5000001", "12.5"));
        assert!(!answers_match("12.6", "12.5"));
        assert!(answers_match("u0003", "u0003"));
        assert!(!answers_match("u0003", "u0004"));
    }
}
