//! Dense `f64` tensors with tape-based reverse-mode differentiation, a
//! named parameter store and an Adam optimizer.

pub mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{Adam, GroupHyper};
pub use params::{
    Checkpoint, CheckpointEntry, Gradients, ParamGroup, ParamId, ParamStore,
    CHECKPOINT_FORMAT_VERSION,
};
pub use tape::{elu, log_sum_exp, sigmoid, Tape, Var, ELU_ALPHA};
pub use tensor::Tensor;

/// Negative-side slope of every leaky ReLU in the model.
pub const LEAKY_SLOPE: f64 = 0.2;
