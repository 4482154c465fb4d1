use std::process::ExitCode;

use diet_core::Error as CoreError;
use thiserror::Error;

/// Two failure classes with distinct exit codes: bad input (2) and
/// failures while running a valid request (1).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl std::fmt::Display) -> Self {
        CliError::Usage(msg.to_string())
    }

    pub fn runtime(msg: impl std::fmt::Display) -> Self {
        CliError::Runtime(msg.to_string())
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }
}

impl From<CoreError> for CliError {
    /// Invalid arguments and shape mismatches are the caller's fault; the
    /// rest happened while doing the work.
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Argument(_) | CoreError::Shape { .. } | CoreError::Degenerate(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Tags failures to read user-supplied inputs as usage errors.
pub trait InputContext<T> {
    fn input(self) -> CliResult<T>;
}

impl<T> InputContext<T> for Result<T, CoreError> {
    fn input(self) -> CliResult<T> {
        self.map_err(|e| CliError::Usage(e.to_string()))
    }
}
