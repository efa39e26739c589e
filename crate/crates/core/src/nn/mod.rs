//! A small reverse-mode autodiff engine and the layers the decoder needs.

mod adam;
pub mod gradcheck;
mod graph;
mod layers;
mod tensor;

use thiserror::Error;

pub use adam::Adam;
pub use graph::{Gradients, Graph, Var};
pub use layers::{multi_head_attention, Attended, AttentionMemory, Dense, LstmCell, MultiHeadAttention};
pub use tensor::{ParamId, ParamSet, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// `-log softmax(logits)[target]` as a plain number, for callers that do not
/// need a tape.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<f64, NnError> {
    if target >= logits.len() {
        return Err(NnError::Shape(format!(
            "target {target} outside {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(log_z - logits[target])
}

#[cfg(test)]
mod tests;
