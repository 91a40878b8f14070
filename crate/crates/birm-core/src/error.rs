//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or input value (non-prime modulus, probability
    /// out of range, fractions that do not sum to one, ...).
    #[error("validation: {0}")]
    Validation(String),

    /// A caller broke an operation's precondition (stepping a terminal
    /// trajectory, outcome labels for a partial solution, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Index outside the valid range for the referenced sequence.
    #[error("index out of range: {0}")]
    Index(String),

    /// A malformed or schema-violating line in a JSONL file.
    #[error("{}:{line}: {message}", path.display())]
    Jsonl {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A required field, label column, or score sequence is absent.
    #[error("missing {what}: {context}")]
    Missing { what: String, context: String },

    /// An operation that needs at least one element got none.
    #[error("empty input: {0}")]
    Empty(String),

    /// Remote generator failure, tagged with the step index being sampled.
    #[error("remote policy at step {step}: {message}")]
    Remote { step: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn index(msg: impl Into<String>) -> Self {
        Error::Index(msg.into())
    }

    pub fn missing(what: impl Into<String>, context: impl Into<String>) -> Self {
        Error::Missing {
            what: what.into(),
            context: context.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
