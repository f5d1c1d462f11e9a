use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;
use trajplan_core::Error as CoreError;

/// Process exit codes, one per failure class.
pub mod exit {
    pub const OK: u8 = 0;
    pub const OTHER: u8 = 1;
    /// Command-line usage errors (reported by the argument parser).
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const MISSING_INPUT: u8 = 4;
    pub const BAD_INPUT: u8 = 5;
    pub const DIVERGENCE: u8 = 6;
    pub const EMPTY_CORPUS: u8 = 7;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("malformed config: {0}")]
    Config(String),

    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    /// Maps a failed open to `MissingInput` when the file does not exist.
    pub fn missing(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            CliError::MissingInput(path.to_path_buf())
        } else {
            CliError::Io { path: path.to_path_buf(), source }
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::MissingInput(_) => exit::MISSING_INPUT,
            CliError::Io { .. } => exit::OTHER,
            CliError::Core(e) => match e {
                CoreError::Divergence(_) | CoreError::Numerical { .. } => exit::DIVERGENCE,
                CoreError::EmptyCorpus | CoreError::UndefinedAngle => exit::EMPTY_CORPUS,
                CoreError::InvalidInput(_) | CoreError::Version { .. } | CoreError::Format(_) | CoreError::Json(_)
                | CoreError::Csv(_) => exit::BAD_INPUT,
                CoreError::Io(io) if io.kind() == io::ErrorKind::NotFound => exit::MISSING_INPUT,
                _ => exit::OTHER,
            },
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Core(CoreError::Io(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(CoreError::Json(e))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(CoreError::Csv(e))
    }
}
