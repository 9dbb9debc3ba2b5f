use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the fuzzy-system pipeline.
#[derive(Debug, Error)]
pub enum FlsError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Dimension {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("enumeration reducer supports at most {max} rules (2^P candidates), got {rules}")]
    Capacity { rules: usize, max: usize },

    #[error("insufficient data: {rows} training rows for {rules} rules")]
    InsufficientData { rows: usize, rules: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric failure in {stage}: {detail}")]
    Numeric { stage: &'static str, detail: String },

    #[error("training aborted at epoch {epoch}, batch {batch}: {source}")]
    TrainingAborted {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<FlsError>,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed model document: {0}")]
    ModelFormat(String),
}

pub type Result<T> = std::result::Result<T, FlsError>;

impl FlsError {
    pub(crate) fn dimension(context: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        FlsError::Dimension {
            context,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn numeric(stage: &'static str, detail: impl Into<String>) -> Self {
        FlsError::Numeric {
            stage,
            detail: detail.into(),
        }
    }
}
