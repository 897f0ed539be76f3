//! Error type shared across the sensing library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// Invalid configuration value (even Hampel window, cutoff outside
    /// (0, 1), out-of-range subject profile, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data violates its format or contains non-finite values.
    #[error("malformed data: {0}")]
    MalformedData(String),

    /// A recording is shorter than the requested analysis span.
    #[error("insufficient data: need {required_s} s, recording has {available_s} s")]
    InsufficientData { required_s: f64, available_s: f64 },

    /// An index (antenna, subcarrier, class label) is out of range.
    #[error("index out of range: {0}")]
    Range(String),

    /// A text input failed to parse; names the offending line.
    #[error("parse error in {source_name} line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    /// Training produced a non-finite loss or metric.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Nn(#[from] wisp_nn::NnError),
}

pub type Result<T> = std::result::Result<T, CoreError>;
