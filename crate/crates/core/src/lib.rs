//! Learn discrete tokens from continuous representation sequences.
//!
//! A stride-1 convolutional encoder maps feature frames to latents, a vector
//! quantizer (plain or residual) with EMA-trained codebooks turns latents into
//! token indices, and a mirrored decoder reconstructs the input so the whole
//! stack can be trained on a reconstruction objective. A Lloyd's k-means
//! baseline and PNMI_n token-quality metrics share the same data types.

pub mod codec;
pub mod error;
pub mod featureio;
pub mod metrics;
pub mod numkernel;
pub mod quantizer;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Matrix, Real};
