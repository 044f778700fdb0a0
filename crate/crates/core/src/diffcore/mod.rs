//! Reverse-mode differentiation over dense matrices, plus the layers,
//! reparameterizations and optimizer the mixture VAE is built from.
//!
//! Every stochastic operation takes its noise or mask as an explicit input;
//! the caller owns the random number generator.

pub mod gradcheck;
pub mod layer;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use gradcheck::{finite_difference_check, GradCheck};
pub use layer::{
    dropout, dropout_mask, gaussian_reparameterize, gumbel_noise, gumbel_softmax_sample, layer_apply,
    standard_normal, Activation, Dense, Dropout,
};
pub use optim::{adam_step, OptimizerState};
pub use tape::{log_softmax_rows, softmax_rows, Gradients, Tape, Var};
pub use tensor::{matmul, Tensor};
