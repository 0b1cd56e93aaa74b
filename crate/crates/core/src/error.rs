//! Crate-wide error type.

/// Errors produced by configuration, input validation, and run verification.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A run configuration field failed validation. The field name is part of
    /// the message so CLI diagnostics can point at it.
    #[error("invalid config: field `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// A trace or other on-disk artifact is inconsistent with itself or with
    /// a deterministic re-execution.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A verification pass (oracle replay, schedule checks) found a mismatch.
    #[error("verification failed: {0}")]
    Verification(String),

    /// Text parsing of a config, trace, schedule, or dataset file failed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
