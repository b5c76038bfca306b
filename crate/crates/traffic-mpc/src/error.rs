//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error for {entity}: {message}")]
    Validation { entity: String, message: String },

    #[error("insufficient history: need at least {needed} samples, have {have}")]
    InsufficientHistory { needed: usize, have: usize },

    #[error("rank-deficient regression; offending regressors: {0}")]
    RankDeficient(String),

    #[error("infeasible constraint set: {0}")]
    Infeasible(String),

    #[error("non-finite objective: {0}")]
    NonFinite(String),

    #[error("trajectory window not covered by available history: {0}")]
    WindowNotCovered(String),

    #[error("forecast horizon {available} shorter than required {required}")]
    ForecastHorizon { required: usize, available: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(entity: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation { entity: entity.into(), message: message.into() }
    }

    /// Wrap an error with a short description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }
}
