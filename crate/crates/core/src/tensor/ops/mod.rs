//! Primitive operations with hand-written backward passes.
//!
//! Spatial tensors are channels-last: `[H, W, C]` for one sample or
//! `[B, H, W, C]` for a batch. Vector tensors are `[D]` or `[B, D]`.
//! All reductions accumulate sequentially in row-major order so results
//! are bit-reproducible.

mod activation;
mod conv;
mod dense;
mod dropout;
mod norm;
mod pool;
mod shape;


pub use activation::{relu, relu_backward, softmax, softmax_backward};
pub use conv::{
    conv2d, conv2d_backward, depthwise_conv2d, depthwise_conv2d_backward, ConvGrads, ConvMode,
    ConvSpec, Padding,
};
pub use dense::{dense, dense_backward, DenseGrads};
pub use dropout::{dropout, dropout_backward, DropoutSpec};
pub use norm::{DEFAULT_EPSILON, DEFAULT_MOMENTUM, batch_norm, batch_norm_backward, BatchNormCache, BatchNormGrads, BatchNormState};
pub use pool::{
    global_avg_pool, global_avg_pool_backward, global_max_pool, global_max_pool_backward,
    PoolIndices,
};
pub use shape::{add, concat, concat_backward};

use crate::error::{Error, Result};

/// Split a spatial shape into `(batch, h, w, c, batched)`.
pub(crate) fn spatial_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    match *shape {
        [h, w, c] => Ok((1, h, w, c, false)),
        [b, h, w, c] => Ok((b, h, w, c, true)),
        _ => Err(Error::shape(op, format!("expected [H,W,C] or [B,H,W,C], got {shape:?}"))),
    }
}

/// Split a vector shape into `(batch, d, batched)`.
pub(crate) fn vector_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize, bool)> {
    match *shape {
        [d] => Ok((1, d, false)),
        [b, d] => Ok((b, d, true)),
        _ => Err(Error::shape(op, format!("expected [D] or [B,D], got {shape:?}"))),
    }
}
