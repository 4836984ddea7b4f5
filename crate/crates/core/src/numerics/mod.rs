//! Tensors, differentiable ops, losses, the Adam optimizer and
//! finite-difference gradient checking.

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod ops;
pub mod recurrent;
mod scalar;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::{conv1d, conv2d, conv_transpose2d};
pub use gradcheck::{adjoint_check, grad_check, grad_check_inputs, gradient_suite, OpCheck};
pub use ops::{activation, batchnorm, cross_entropy, l1_loss, linear, Activation, BatchNormStats, Mode};
pub use recurrent::{gru_cell, gru_step, lstm_step, RecurrentVars, RecurrentWeights};
pub use scalar::{matmul, Scalar};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
