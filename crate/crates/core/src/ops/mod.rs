//! Forward kernels and their vector-Jacobian products.
//!
//! Every kernel is pure: the same input produces bitwise-identical output.
//! Dense convolutions parallelize over output planes, each plane being
//! accumulated in a fixed order, so results do not depend on thread count.

mod activation;
mod conv;
mod norm;
mod pool;
mod upsample;

pub use activation::{activation, activation_backward, sigmoid_scalar, Activation};
pub use conv::{conv2d, conv2d_backward, depthwise_conv2d, depthwise_conv2d_backward, ConvKind, ConvWeight};
pub use norm::{
    batch_norm_eval, batch_norm_eval_backward, batch_norm_train, batch_norm_train_backward, NormCache,
    NormState, DEFAULT_EPS, DEFAULT_MOMENTUM,
};
pub use pool::{pool2d, pool2d_backward, PoolMode};
pub use upsample::{resize_bilinear, upsample_bilinear, upsample_bilinear_backward};
