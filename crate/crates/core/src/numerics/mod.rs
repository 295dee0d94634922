//! Dense `f64` tensor kernels: the forward/backward building blocks of every
//! model layer, plus a central-difference gradient oracle for testing them.
//!
//! All kernels are pure functions of their inputs. Convolution is
//! cross-correlation (no kernel flip) with zero padding.

mod conv;
mod gradcheck;
mod linalg;
mod norm;
mod ops;
mod tensor;

pub use conv::{conv2d_backward, conv2d_forward, conv_out_dim, ConvGrads};
pub(crate) use conv::{conv2d_backward_cols, conv2d_forward_cols};
pub use gradcheck::{finite_diff_grad, relative_error, RELATIVE_ERROR_FLOOR};
pub use linalg::matmul;
pub use norm::{
    batchnorm_backward, batchnorm_forward, BnCache, BnGrads, BnMode, BnOutput, RunningStats,
    BN_EPS, BN_MOMENTUM,
};
pub use ops::{
    global_avg_pool_backward, global_avg_pool_forward, linear_backward, linear_forward,
    maxpool2d_backward, maxpool2d_forward, relu_backward, relu_forward, softmax_cross_entropy,
    LinearGrads,
};
pub use tensor::Tensor;
