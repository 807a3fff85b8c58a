//! Error type shared across the crate.

use thiserror::Error;

/// Failure modes surfaced by library operations.
///
/// The CLI maps variants onto exit codes: configuration and schema problems
/// are user errors, numerical failures indicate an ill-posed computation, and
/// missing artifacts indicate stages run out of order.
#[derive(Debug, Error)]
pub enum DsiError {
    /// Invalid configuration or arguments.
    #[error("configuration error: {0}")]
    Config(String),

    /// Data does not match the schema it is used with.
    #[error("schema mismatch: {0}")]
    Schema(String),

    /// A numerical operation failed (singular matrix, divergence, non-finite
    /// values).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A required artifact file does not exist.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    /// Underlying file-system failure.
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed artifact contents.
    #[error("parse failure in {path}: {msg}")]
    Parse { path: String, msg: String },
}

pub type Result<T, E = DsiError> = std::result::Result<T, E>;

impl DsiError {
    /// Shorthand for configuration errors.
    pub fn config(msg: impl Into<String>) -> Self {
        DsiError::Config(msg.into())
    }

    /// Shorthand for schema errors.
    pub fn schema(msg: impl Into<String>) -> Self {
        DsiError::Schema(msg.into())
    }

    /// Shorthand for numerical errors.
    pub fn numerical(msg: impl Into<String>) -> Self {
        DsiError::Numerical(msg.into())
    }
}
