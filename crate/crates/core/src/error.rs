use thiserror::Error;

use crate::wire::WireError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("need at least {needed} classes, got {got}")]
    TooFewClasses { needed: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("malformed tensor text: {0}")]
    Parse(String),

    #[error("latency budget {delay_max}s is infeasible: edge-only latency is {d1}s")]
    InfeasibleBudget { delay_max: f64, d1: f64 },

    #[error("model requires ground truth but none was supplied")]
    MissingTruth,

    #[error(transparent)]
    Wire(#[from] WireError),

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("sample {index}: {source}")]
    Sample { index: usize, source: Box<Error> },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
