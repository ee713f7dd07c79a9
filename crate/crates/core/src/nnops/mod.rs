//! Differentiable building blocks, each with a forward pass and a
//! reverse-mode backward pass.

mod activation;
mod conv;

pub use activation::{softmax_backward, softmax_voxelwise, PRelu, PRELU_INIT_SLOPE};
pub use conv::{Conv3d, ConvGeometry, ConvTranspose3d};
