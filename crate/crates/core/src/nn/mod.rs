//! Numerical kernel layer: layer kernels, fixed stacks, Adam and gradient checks.

pub mod adam;
pub mod gradcheck;
pub mod network;
pub mod ops;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use gradcheck::{central_differences, finite_difference_check, relative_error};
pub use network::{network_backward, LayerSpec, Network, Trace};
pub use ops::{
    activation, concat, conv2d_backward, conv2d_forward, dense_backward, dense_forward, sigmoid,
    softplus, split, upsample_nearest, Activation, Padding,
};
