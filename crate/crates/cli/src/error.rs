//! CLI-side error wrapper: carries the error class that decides the
//! process exit code (0 success, 2 config, 3 data, 4 numeric) and a
//! one-line reason printed to stderr as `error: <kind>: <message>`.

use std::fmt;
use std::path::Path;

/// Error classes aligned with the documented exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    /// Attaches a file path to an I/O error (always a data error).
    pub fn io(context: &str, path: &Path, err: std::io::Error) -> CliError {
        CliError::Data(format!("{context} {}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind(), self.message())
    }
}

impl std::error::Error for CliError {}

impl From<bfg_core::Error> for CliError {
    fn from(e: bfg_core::Error) -> Self {
        match &e {
            bfg_core::Error::Config(_) | bfg_core::Error::Contract(_) => {
                CliError::Config(e.message().to_string())
            }
            bfg_core::Error::Sampling(_) => CliError::Data(e.message().to_string()),
            bfg_core::Error::Numeric(_) => CliError::Numeric(e.message().to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
