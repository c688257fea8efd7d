//! Error type shared by all pipeline stages.

use alloc::string::String;
use core::fmt;

/// Errors produced by the pipeline.
///
/// The variants map onto the process exit codes used by the CLI:
/// configuration problems, data/sampling problems, and numeric failures
/// are reported distinctly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// An operation was invoked in violation of its contract
    /// (shape mismatch, empty mask, out-of-range argument).
    Contract(String),
    /// Invalid configuration (empty class universe, bad widths).
    Config(String),
    /// Data or episode sampling could not satisfy its postconditions.
    Sampling(String),
    /// A non-finite value was produced or a numeric guard tripped.
    Numeric(String),
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Sampling(_) => "data",
            Error::Numeric(_) => "numeric",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Error::Contract(m) | Error::Config(m) | Error::Sampling(m) | Error::Numeric(m) => m,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind(), self.message())
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
