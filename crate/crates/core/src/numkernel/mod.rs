//! Deterministic numeric building blocks for the codec: same-length 1D
//! convolution with its exact backward pass, the ELU activation, Adam, and a
//! portable seeded random source.

mod activation;
mod adam;
mod conv;
mod rng;

pub use activation::Activation;
pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::{
    conv1d_backward, conv1d_forward, init_conv_params, ConvGrads, ConvLayerParams, ConvLayerSpec,
};
pub use rng::Rng;
