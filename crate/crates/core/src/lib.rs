//! Residual convolutional pore detection for high-resolution fingerprint
//! images.
//!
//! The pipeline maps fingerprint patches to pore intensity maps with an
//! 18-layer residual network, then recovers pore coordinates with a 5×5
//! maximum filter and a threshold. Around the network live label-map
//! generation, patch extraction, a synthetic fingerprint generator with known
//! pore positions, an ADAM training loop and the true/false detection rate
//! evaluation.
//!
//! All numerics use [`Real`], which is `f64` unless the `f32` feature is
//! enabled. Data-parallel loops run on rayon when the `parallel` feature is
//! on (the default) and fall back to plain iterators otherwise; both paths
//! reduce in the same fixed order, so results are bit-identical.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod eval;
pub mod layers;
pub mod network;
pub mod par;
pub mod postprocess;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Real, Shape, Tensor};
