//! Process-level error classes and their exit codes.

use std::fmt;

use tdcnn_core::Error as CoreError;

/// Exit codes: 0 ok, 1 failed check, 2 config error, 3 data error,
/// 4 checkpoint mismatch.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Checkpoint(String),
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Checkpoint(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {}", m),
            CliError::Data(m) => write!(f, "data error: {}", m),
            CliError::Checkpoint(m) => write!(f, "checkpoint error: {}", m),
            CliError::Failed(m) => write!(f, "{}", m),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Checkpoint errors keep their class no matter where they surface; IO
/// failures are data problems; everything else takes the caller's class.
fn classify(e: CoreError, fallback: fn(String) -> CliError) -> CliError {
    match e {
        CoreError::IncompatibleCheckpoint(_) | CoreError::MalformedCheckpoint(_) => {
            CliError::Checkpoint(e.to_string())
        }
        CoreError::Io(_) => CliError::Data(e.to_string()),
        other => fallback(other.to_string()),
    }
}

pub trait Classify<T> {
    /// Failure attributable to run configuration (exit 2).
    fn config_err(self) -> CliResult<T>;
    /// Failure attributable to input data (exit 3).
    fn data_err(self) -> CliResult<T>;
    /// Failure attributable to a checkpoint (exit 4).
    fn ckpt_err(self) -> CliResult<T>;
}

impl<T> Classify<T> for Result<T, CoreError> {
    fn config_err(self) -> CliResult<T> {
        self.map_err(|e| classify(e, CliError::Config))
    }

    fn data_err(self) -> CliResult<T> {
        self.map_err(|e| classify(e, CliError::Data))
    }

    fn ckpt_err(self) -> CliResult<T> {
        self.map_err(|e| classify(e, CliError::Checkpoint))
    }
}

impl<T> Classify<T> for std::io::Result<T> {
    fn config_err(self) -> CliResult<T> {
        self.map_err(|e| CliError::Config(e.to_string()))
    }

    fn data_err(self) -> CliResult<T> {
        self.map_err(|e| CliError::Data(e.to_string()))
    }

    fn ckpt_err(self) -> CliResult<T> {
        self.map_err(|e| CliError::Checkpoint(e.to_string()))
    }
}
