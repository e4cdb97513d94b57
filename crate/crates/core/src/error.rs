//! Error type shared by every module of the crate.

use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two operands disagree on a dimension.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// An argument violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A serialized artifact could not be decoded.
    #[error("format error: {0}")]
    Format(String),

    /// One or more configuration keys are malformed or unknown.
    #[error("config error: {}", .0.join("; "))]
    Config(Vec<String>),

    /// A dataset could not be loaded or does not match its declared shape.
    #[error("data error: {0}")]
    Data(String),

    /// Training produced a non-finite value.
    #[error("diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String },

    /// A backward pass was given activations from an older parameter version.
    #[error("stale activation cache (cache version {cache}, network version {network})")]
    StaleCache { cache: u64, network: u64 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn shape(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            context,
            expected,
            actual,
        }
    }

    /// Process exit code used by the command-line harness.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 2,
            Error::Diverged { .. } => 4,
            _ => 3,
        }
    }
}
