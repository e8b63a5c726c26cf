use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("linear algebra kernel failed: {0}")]
    Kernel(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("reference not converged: {0}")]
    ReferenceUnconverged(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
