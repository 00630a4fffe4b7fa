use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no users left in the test set after filtering")]
    EmptyTest,

    #[error("estimator cannot be evaluated: {0}")]
    Estimator(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("degenerate world: {0}")]
    DegenerateWorld(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range: {0}")]
    Lookup(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("training diverged at epoch {epoch}: {msg}")]
    Divergence { epoch: usize, msg: String },

    #[error(
        "dataset not found at {}: {hint}",
        path.display()
    )]
    MissingDataset { path: PathBuf, hint: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short machine-readable tag, used for the CLI's error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
            Error::EmptyTest => "empty_test",
            Error::Estimator(_) => "estimator",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Generation(_) => "generation",
            Error::DegenerateWorld(_) => "degenerate_world",
            Error::Sampling(_) => "sampling",
            Error::Shape(_) => "shape",
            Error::Lookup(_) => "lookup",
            Error::Training(_) => "training",
            Error::Divergence { .. } => "divergence",
            Error::MissingDataset { .. } => "missing_dataset",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
