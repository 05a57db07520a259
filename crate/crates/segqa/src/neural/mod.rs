//! Minimal 3D tensor autodiff: convolution, transposed convolution,
//! instance normalization, parametric rectifier, logistic output, soft
//! Dice loss and Adam — the layer set needed for the denoising and
//! variational autoencoders, every primitive verified against central
//! finite differences.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{NodeId, Tape};
pub use tensor::{Scalar, Tensor};

/// Epsilon inside instance normalization.
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Smoothing constant of the training soft Dice loss; keeps empty channels
/// well-defined and differentiable.
pub const DICE_SMOOTH: f64 = 1e-5;
