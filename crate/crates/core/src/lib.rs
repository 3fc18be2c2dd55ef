//! From-scratch convolutional-network training and evaluation for gender
//! classification from clothing images.
//!
//! The crate covers the full pipeline: a dense tensor type with im2col/GEMM
//! convolution kernels, layer forward/backward passes, a VGG16-style model
//! builder with transfer-learning freeze control, corpus loading with
//! stratified splitting and augmentation, a mini-batch SGD training loop with
//! validation-driven callbacks, and a binary-classification evaluation engine.

pub mod data;
pub mod error;
pub mod eval;
pub mod im2col;
pub mod layers;
pub mod model;
#[cfg(feature = "oracles")]
pub mod oracles;
pub mod plots;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
