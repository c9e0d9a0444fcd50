use thiserror::Error;

/// Errors raised by the simulator and the diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("response index {index} out of range for {len} responses")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("trajectory budget exceeded: {vocab}^{horizon} > {budget}")]
    BudgetExceeded {
        vocab: usize,
        horizon: usize,
        budget: usize,
    },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("contexts of the two trajectories differ")]
    ContextMismatch,

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
