//! Dense numeric substrate: tensors, a small MLP with hand-derived backward
//! rules, and gradient checking.

pub mod grad;
pub mod mlp;
pub mod tensor;

pub use grad::{checked_value_and_grad, finite_diff_check, loss_gradient, HalfSquaredNorm, Objective};
pub use mlp::{mlp_forward, Activation, MlpCache, MlpSpec};
pub use tensor::DenseTensor;
