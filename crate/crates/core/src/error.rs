use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A loss or parameter update became non-finite.
    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("numerical failure at step {step}: {message}")]
    Numerical { step: usize, message: String },

    #[error("angle undefined: every segment of the polyline has zero length")]
    UndefinedAngle,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("unsupported format_version {found} (supported versions: {supported:?})")]
    Version { found: u64, supported: Vec<u32> },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
