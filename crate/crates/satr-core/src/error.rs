//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes do not line up for an operation.
    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    Shape {
        op: &'static str,
        expected: String,
        found: String,
    },

    /// Invalid configuration value.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed input file.
    #[error("parse error in {file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    /// Corpus-level inconsistency across trials.
    #[error("corpus error: {0}")]
    Corpus(String),

    /// A trial is too short to yield a single window.
    #[error("trial '{trial_id}' has {len} samples, below the window size {window}")]
    TrialTooShort {
        trial_id: String,
        len: usize,
        window: usize,
    },

    /// Class label outside the head's class set.
    #[error("label {value} out of range for {head} head with {classes} classes")]
    LabelOutOfRange {
        head: String,
        value: usize,
        classes: usize,
    },

    /// API misuse, e.g. backward on a consumed tape.
    #[error("usage error: {0}")]
    Usage(String),

    /// Gradient map is missing a learnable parameter.
    #[error("missing gradient for parameter '{0}'")]
    MissingGradient(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    /// Checkpoint or report file is not in the expected format.
    #[error("format error in {file}: {message}")]
    Format { file: String, message: String },

    /// A cross-validation fold failed.
    #[error("fold {fold}: {source}")]
    Fold {
        fold: u8,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, found: impl Into<String>) -> Self {
        Error::Shape {
            op,
            expected: expected.into(),
            found: found.into(),
        }
    }
}
