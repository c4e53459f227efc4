use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum PanError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("empty sequence: {0}")]
    EmptySequence(String),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("gradient check: function is not deterministic ({first} != {second})")]
    NonDeterministic { first: f64, second: f64 },

    #[error("index {index} out of range for table with {rows} rows")]
    Lookup { index: usize, rows: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error at record `{record}`: {message}")]
    Checkpoint { record: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PanError {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        PanError::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PanError::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure is caused by user input (bad files, bad config)
    /// rather than a bug or numeric breakdown.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            PanError::Parse { .. }
                | PanError::Config(_)
                | PanError::Checkpoint { .. }
                | PanError::Io { .. }
                | PanError::Lookup { .. }
                | PanError::EmptySequence(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, PanError>;
