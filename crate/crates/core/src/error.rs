use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or observation lies outside the support of a model.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    /// Factorization failure or an internal consistency check that did not hold.
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("training produced non-finite values at iteration {iteration}: {reason}")]
    Training { iteration: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
