//! Dense tensors, reverse-mode differentiation, and the optimizer stack
//! (Adam, global-norm clipping, inverted dropout, L2).

pub mod kernels;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use kernels::{log_softmax_into, softmax, softmax_into};
pub use optim::{adam_step, clip_global_norm, dropout_mask, global_norm, AdamConfig, AdamState, TrainHyper};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
