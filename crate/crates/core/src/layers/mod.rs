//! Layer primitives with hand-wired backward passes.
//!
//! Storage is `f32`. Reductions that feed scalars (bias gradients, losses,
//! single-vector dense products) accumulate in `f64`; the large matrix
//! products run through a blocked `f32` GEMM.

mod activation;
mod conv;
mod dense;
pub(crate) mod gemm;
mod loss;
mod pool;

pub use activation::{relu, relu_backward, relu_inplace};
pub use conv::{
    conv2d, conv2d_backward, conv2d_backward_with, conv2d_with, ConvConfig, ConvGrads,
    KernelBank, GRAD_CHUNK,
};
pub use dense::{dense, dense_backward, dense_backward_batch, dense_batch, DenseGrads, DenseParams};
pub use loss::{softmax, softmax_cross_entropy, softmax_cross_entropy_batch};
pub use pool::{maxpool2x2, maxpool2x2_backward, PoolIndices};
