use std::io;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("precondition failure: {0}")]
    Precondition(String),

    /// A non-finite objective or gradient showed up during optimization.
    #[error("numerical failure at iteration {iteration}: {message}")]
    NumericalFailure { iteration: usize, message: String },

    /// Smoothed features (or data) whose tensor matrix is singular.
    #[error("degenerate instance: {0}")]
    Degenerate(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("property failure: {0}")]
    PropertyFailure(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
