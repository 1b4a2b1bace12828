use std::fmt;

use rae_core::Error as CoreError;

/// A failed command and the process exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or arguments; the message names the key.
    Config(String),
    /// Missing, unreadable or malformed input data.
    Data(String),
    /// Training produced a non-finite loss.
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Diverged(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Diverged { .. } | CoreError::NonFinite(_) => CliError::Diverged(e.to_string()),
            CoreError::Io { .. } | CoreError::Format { .. } => CliError::Data(e.to_string()),
            CoreError::InvalidArgument(_) | CoreError::DimensionMismatch { .. } => {
                CliError::Config(e.to_string())
            }
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
