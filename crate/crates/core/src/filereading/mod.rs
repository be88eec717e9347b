//! The FileReading dataset: CSV files whose dialect is hidden but hinted at
//! by the filename, each paired with an aggregate query.

pub mod csv;
pub mod estimator;
pub mod format;
pub mod generate;
pub mod query;

pub use self::csv::{parse_csv, render_csv, ParseError, ParseErrorKind, Table};
pub use estimator::{attribute_accuracy, bayes_rate, fit_prior_estimator, EstimatedPriorModel};
pub use format::{
    value_repr, Attribute, Delimiter, FilenameFeatures, FormatPrior, FormatTriple, OracleFormatModel,
    QuoteChar,
};
pub use generate::{
    generate_dataset, generate_instance, FileReadingInstance, GeneratorConfig, Split,
};
pub use query::{answers_match, evaluate_query, format_number, QueryOp, QuerySpec};
