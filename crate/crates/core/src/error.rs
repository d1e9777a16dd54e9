use thiserror::Error;

use crate::model::ParamState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix of dimension {dim} is not positive definite ({detail})")]
    NotPositiveDefinite { dim: usize, detail: String },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("schema error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Schema { row: Option<usize>, message: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("mode mismatch: {0}")]
    ModeMismatch(String),

    /// A full conditional failed mid-chain. `last_state` is the state at the
    /// end of the last completed iteration.
    #[error("chain aborted at iteration {iteration}: {source}")]
    ChainAborted {
        iteration: usize,
        #[source]
        source: Box<Error>,
        last_state: Box<ParamState>,
    },
}

impl Error {
    pub(crate) fn schema(row: Option<usize>, message: impl Into<String>) -> Self {
        Error::Schema { row, message: message.into() }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidParameter(message.into())
    }
}
