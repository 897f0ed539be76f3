//! Error type shared by the tensor engine.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    /// A tensor or layer received data whose shape does not match its
    /// contract. The message names the operation and both shapes.
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// A layer or optimizer was constructed with impossible settings
    /// (zero-sized kernel, empty batch, negative learning rate, ...).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An operation was called in the wrong mode or order, for example
    /// batch statistics requested for a single-sample training batch.
    #[error("invalid state: {0}")]
    State(String),

    /// A checkpoint could not be read or written.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl NnError {
    pub fn shape(context: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        NnError::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}
