//! Minimal reverse-mode autodiff, layer kernels, Adam and gradient checks.

mod adam;
mod gradcheck;
mod layout;
mod mlp;
mod tape;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{central_difference, max_relative_error};
pub use layout::{load_checkpoint, save_checkpoint, Checkpoint, ParamLayout, TensorInfo};
pub use mlp::{Activation, Dense, Mlp};
pub use tape::{sigmoid, Gradients, NodeId, Tape};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{what}: expected {expected} values, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value produced by node {node} ({op})")]
    Poisoned { node: usize, op: &'static str },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
