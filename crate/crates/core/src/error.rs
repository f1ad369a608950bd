use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numeric domain error: {0}")]
    NumericDomain(String),
    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),
    #[error("degenerate pair: {0}")]
    DegeneratePair(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, EvaError>;

impl EvaError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        EvaError::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EvaError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            EvaError::InvalidArgument(_) => "invalid-argument",
            EvaError::NumericDomain(_) => "numeric-domain",
            EvaError::DegenerateMetric(_) => "degenerate-metric",
            EvaError::DegeneratePair(_) => "degenerate-pair",
            EvaError::Config(_) => "config",
            EvaError::Io { .. } => "io",
            EvaError::Serialization(_) => "serialization",
        }
    }

    /// Process exit code for the CLI, one per category.
    pub fn exit_code(&self) -> i32 {
        match self {
            EvaError::InvalidArgument(_) => 2,
            EvaError::Config(_) => 3,
            EvaError::Io { .. } => 4,
            EvaError::Serialization(_) => 5,
            EvaError::NumericDomain(_) => 6,
            EvaError::DegenerateMetric(_) => 7,
            EvaError::DegeneratePair(_) => 8,
        }
    }
}
