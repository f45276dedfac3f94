use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("degenerate task: {0}")]
    DegenerateTask(String),

    #[error("training diverged at step {step} (loss = {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("degenerate features: {0}")]
    DegenerateFeatures(String),

    #[error("source scales violate the rank condition: {0}")]
    RankCondition(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("{}:{line}: {msg}", file.display())]
    Parse { file: PathBuf, line: usize, msg: String },

    #[error("dataset integrity: {0}")]
    Integrity(String),

    #[error("container format: {0}")]
    Format(String),

    #[error("config file: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
