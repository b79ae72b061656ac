use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum HubError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{kind} index {index} out of range (have {len})")]
    IndexOutOfRange {
        kind: &'static str,
        index: usize,
        len: usize,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("utility difference is not recoverable: {0}")]
    NonInvertible(String),

    #[error("invalid scaling anchor: {0}")]
    InvalidAnchor(String),

    #[error("illegal action for this model: {0}")]
    IllegalAction(String),

    #[error("observation does not match action: {0}")]
    MismatchedObservation(String),

    #[error("observation has zero probability under every state in the belief")]
    ImpossibleObservation,

    #[error("state space is empty after filtering")]
    EmptyStateSpace,

    #[error("task generator exhausted after {attempts} attempts ({found} of {wanted} tasks found)")]
    GeneratorExhausted { attempts: u64, found: usize, wanted: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, HubError>;

impl HubError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HubError::Io {
            path: path.into(),
            source,
        }
    }
}
