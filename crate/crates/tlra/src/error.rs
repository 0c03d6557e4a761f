//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by dataset handling, numerics, and training.
#[derive(Debug, Error)]
pub enum TlraError {
    /// Shape or dimension mismatch between operands.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An input that must be nonzero / nonempty was degenerate.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A bundle line could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A record violates the bundle header schema.
    #[error("schema error for record '{id}': {msg}")]
    Schema { id: String, msg: String },

    /// A protocol precondition was violated (e.g. missing reference features).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A forward or loss evaluation produced a non-finite value.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TlraError>;
