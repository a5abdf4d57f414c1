//! Forward and backward kernels for the layer types of the residual network:
//! same-padded stride-1 convolution, batch normalization, ReLU and the
//! squared-error regression head.
//!
//! Backward passes are written out by hand per layer. Each forward call that
//! feeds a backward pass returns a cache holding what that backward pass
//! needs; caches are consumed by value so each is used at most once.

mod batchnorm;
mod conv;
mod gemm;
mod loss;
mod relu;

pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, batchnorm_infer, BatchNormCache, BatchNormGrads,
    BatchNormParams, DEFAULT_BN_EPSILON, DEFAULT_BN_MOMENTUM,
};
pub use conv::{
    conv2d_backward, conv2d_backward_direct, conv2d_forward, conv2d_forward_direct, conv2d_infer,
    ConvCache, ConvGrads, ConvParams,
};
pub use loss::{mse_loss, LossConvention};
pub use relu::{
    relu_backward, relu_backward_in_place, relu_forward, relu_forward_owned, relu_in_place,
    ReluCache,
};

/// Whether a forward pass records state for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates, caches for backward.
    Train,
    /// Running statistics, no mutation, no caches.
    Infer,
}
