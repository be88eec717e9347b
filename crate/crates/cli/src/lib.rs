//! Command-line surface: dataset generation, episode runs, calibration,
//! one-off oracle queries and trace reports.
//!
//! Every subcommand is a plain function here so tests can drive it without
//! spawning the binary.

pub mod commands;
pub mod config;
pub mod policies;
pub mod report;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use commands::{DatasetKind, GenOptions, SolveQuery};
pub use config::RunConfig;
pub use report::{build_report, load_traces, write_report, ReportBundle};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Trace { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Core(#[from] cta_core::CoreError),
    #[error(transparent)]
    Generate(#[from] cta_core::filereading::generate::GenerateError),
    #[error(transparent)]
    Agent(#[from] cta_agent::ClientError),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

/// Creates `dir` and writes `contents` to `dir/name`.
pub(crate) fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

pub(crate) fn to_pretty_json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("serialization is infallible");
    text.push('\n');
    text.into_bytes()
}
