//! Library side of the `jvae` command line: config-file parsing, loss-trace
//! plotting, and the error-to-exit-code policy.

pub mod config;
pub mod plot;

use std::fmt;

/// Failures grouped by exit code: usage/configuration problems exit 2,
/// numerical aborts exit 3, everything I/O-shaped exits 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 1,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<jvae_core::Error> for CliError {
    fn from(e: jvae_core::Error) -> Self {
        match e {
            jvae_core::Error::Config(_) => CliError::Usage(e.to_string()),
            jvae_core::Error::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Io(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
