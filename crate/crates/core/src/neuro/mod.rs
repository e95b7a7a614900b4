//! Differentiable primitives for the scheduling policy.
//!
//! A [`Tape`] records the forward pass of a fixed graph built from a small set
//! of operators (affine maps, activations, layer normalization, single-head
//! self-attention, row gathers and the policy losses). Every operator carries
//! its own hand-written backward rule; [`Tape::backward`] replays them in
//! reverse to produce parameter gradients. Parameters live in a
//! [`ParamStore`] and are updated by [`Adam`].

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::finite_diff_check;
pub use params::{Adam, Gradients, ParamId, ParamStore, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use tape::{clipped_surrogate, gaussian_log_density, gru_cell, softplus, GruParams, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuroError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFinite(String),
    #[error("{0}")]
    Contract(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NeuroError {
    NeuroError::Shape { op, detail: detail.into() }
}
