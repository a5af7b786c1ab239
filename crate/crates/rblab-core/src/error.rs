//! Error type shared by every module in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's preconditions (shape mismatch,
    /// out-of-range argument, inconsistent config).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A numeric computation produced or received a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Correlation is undefined because one argument has zero variance.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// R-squared is undefined because the total test variance is zero.
    #[error("undefined r-squared: {0}")]
    UndefinedR2(String),

    /// Dataset generation failed (rejection budget exhausted, infeasible
    /// conditioning).
    #[error("generation error: {0}")]
    Generation(String),

    /// A sequence failed structural validation.
    #[error("parse error at token {position}: {message}")]
    Parse { position: usize, message: String },

    /// A persisted file does not match the expected format.
    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn generation(msg: impl Into<String>) -> Self {
        Error::Generation(msg.into())
    }

    pub fn corrupt(msg: impl Into<String>) -> Self {
        Error::CorruptFile(msg.into())
    }
}
