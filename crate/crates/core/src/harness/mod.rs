//! Experiment plumbing: configuration, synthetic data, runs, reports and the CLI.

use std::path::Path;

use thiserror::Error;

pub mod cli;
pub mod config;
pub mod corpus;
pub mod experiment;
pub mod report;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, RunReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Vocab(#[from] crate::vocab::VocabError),
    #[error(transparent)]
    Model(#[from] crate::models::ModelError),
    #[error(transparent)]
    Transform(#[from] crate::byte_transform::TransformError),
    #[error(transparent)]
    Decode(#[from] crate::fusion::DecodeError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error("report line {line}: {message}")]
    Report { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl HarnessError {
    pub fn io(path: &Path, err: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Escaped byte strings, one per line.
pub fn lines_text<B: AsRef<[u8]>>(items: &[B]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&crate::vocab::escape_bytes(item.as_ref(), false));
        out.push('\n');
    }
    out
}

/// Inverse of [`lines_text`].
pub fn parse_lines(text: &str) -> Result<Vec<Vec<u8>>, HarnessError> {
    text.lines()
        .enumerate()
        .map(|(i, l)| crate::vocab::unescape_bytes(l).map_err(|message| HarnessError::Report { line: i + 1, message }))
        .collect()
}
