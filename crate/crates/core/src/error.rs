use std::io;

use thiserror::Error;

/// Errors produced by the library. The CLI wraps these with `anyhow` context.
#[derive(Debug, Error)]
pub enum Error {
    #[error("document stream is empty")]
    EmptyCorpus,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("not a {expected} file (bad magic bytes)")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("integrity error at byte offset {offset}: {reason}")]
    Integrity { offset: usize, reason: String },

    #[error("coverage is undefined for an input with no n-grams")]
    UndefinedCoverage,

    #[error("structural mismatch: {0}")]
    Structural(String),

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("line {line}: {message}")]
    DataValidation { line: usize, message: String },

    #[error("{0}")]
    Prune(String),

    #[error("{0}")]
    Bench(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn integrity(offset: usize, reason: impl Into<String>) -> Self {
        Error::Integrity {
            offset,
            reason: reason.into(),
        }
    }
}
