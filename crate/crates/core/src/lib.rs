//! Volumetric brain-tumor segmentation on the CPU: a V-Net with residual
//! stages and skip forwarding, soft dice loss, MRI preprocessing, MetaImage
//! and NIfTI-1 I/O, synthetic phantom data and a deterministic trainer.

pub mod error;
pub mod imageio;
pub mod loss;
pub mod nnops;
pub mod phantom;
pub mod preprocess;
pub mod tensor;
pub mod trainer;
pub mod vnet;

pub use error::{Error, Result};
pub use tensor::{Axes, Shape, Tensor};
