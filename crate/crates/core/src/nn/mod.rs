//! Small dense-network engine: fixed-architecture perceptrons with
//! reverse-mode gradients, Adam, and the losses used for code training.

mod adam;
mod dense;
mod loss;
mod matrix;

pub use adam::AdamState;
pub use dense::{Activation, DenseNet, Gradients, Tape};
pub use loss::{bce_with_logits, bler_product_loss, sigmoid, ste_sign, ste_sign_backward};
pub use matrix::Mat;
