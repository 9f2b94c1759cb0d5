//! Reverse-mode differentiation over dense `f64` tensors, plus the handful
//! of network primitives the consensus and actor-critic code is built from.

mod error;
pub mod nn;
pub mod optim;
mod tape;
mod tensor;

pub use error::{AutodiffError, Result};
pub use nn::{
    cross_entropy_soft, mlp_forward, mlp_infer, multi_head_attention, softmax, softmax_vec,
    Activation, AttentionOutput, AttentionSpec, MlpSpec, PROB_FLOOR,
};
pub use optim::{adam_step, clip_grad_norm, ema_blend, AdamState};
pub use tape::{Bound, Gradients, Tape, Var};
pub use tensor::{ParameterSet, Tensor};
