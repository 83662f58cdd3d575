use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TnpError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("empty attention row {row}")]
    EmptyAttentionRow { row: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("loss is not a scalar (shape {0:?})")]
    NotScalar(Vec<usize>),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("covariance factorization failed: {0}")]
    Factorization(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("out of domain: {0}")]
    Domain(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad model file: {0}")]
    Format(String),
}

impl TnpError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            TnpError::Config(_) | TnpError::File { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, TnpError>;
