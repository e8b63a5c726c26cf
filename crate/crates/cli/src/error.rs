//! CLI error type and its mapping to process exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("reference not converged: {0}")]
    ReferenceUnconverged(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// 2: configuration or I/O, 3: numerical failure, 4: reference unconverged.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::ReferenceUnconverged(_) => 4,
        }
    }
}

impl From<pepsvqe::Error> for CliError {
    fn from(e: pepsvqe::Error) -> Self {
        use pepsvqe::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::ReferenceUnconverged(m) => CliError::ReferenceUnconverged(m),
            E::Io(e) => CliError::Io(e.to_string()),
            E::Json(e) => CliError::Io(e.to_string()),
            e @ (E::Shape(_) | E::Kernel(_) | E::Numerical(_)) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
