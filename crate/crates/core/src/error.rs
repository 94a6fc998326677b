use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("environment error: {0}")]
    Env(String),

    #[error("trace format error: {0}")]
    Format(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("configuration invalid:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    #[error("degenerate normalization: oracle value {oracle} <= min value {min}")]
    DegenerateNormalization { oracle: f64, min: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
