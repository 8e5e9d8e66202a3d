use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the arguments was violated.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The continued-fraction construction cannot go deeper.
    #[error("depth limit reached at depth {achieved}: {reason}")]
    DepthLimit { achieved: usize, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Band-edge or near-degenerate point where a derivative formula breaks down.
    #[error("degenerate point: {0}")]
    Degenerate(String),

    /// The requested window or threshold cannot be met.
    #[error("threshold not met: {message} (minimal admissible T = {min_t:e})")]
    Threshold { message: String, min_t: f64 },

    #[error("truncation: {0}")]
    Truncation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
