//! Dense vectors and matrices, a small feed-forward network with analytic
//! backpropagation, an Adam optimizer, and finite-difference checking.

pub mod fd;
pub mod linalg;
pub mod mlp;
pub mod optimizer;

pub use fd::{finite_difference_gradient, relative_error};
pub use linalg::{dot, norm, sigmoid, Matrix, Vector};
pub use mlp::{mlp_backward, mlp_forward, Activation, Layer, LayerGradient, MlpGradients, MlpParams, Tape};
pub use optimizer::{optimizer_step, OptimizerState};
