//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation's arguments was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Rotation angle too close to pi for a well-defined logarithm.
    #[error("rotation angle {angle:.9} rad is within {margin:e} of the log branch cut at pi")]
    LogBranchCut { angle: f64, margin: f64 },

    /// A grid operation would exceed the configured parameter budget.
    #[error("grid capacity exceeded: {requested} parameters over budget of {budget}")]
    Capacity { requested: usize, budget: usize },

    /// Non-finite value encountered where the math requires finite inputs.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Backward pass invoked without a recorded forward context.
    #[error("missing forward context: {0}")]
    MissingContext(String),

    /// Configuration file failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),

    /// On-disk artifact (manifest, checkpoint, image) is malformed.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
