//! File formats, checkpoints, run configuration and the command-line front
//! end for [`spellbee_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod formats;
pub mod vocab_io;

use std::path::Path;

/// A bundled 500-word list for benchmark generation and tests.
pub const SAMPLE_WORDS: &str = include_str!("../data/words.txt");

/// Errors reading or writing files.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] spellbee_core::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FormatError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io { path: path.display().to_string(), source }
    }
}
