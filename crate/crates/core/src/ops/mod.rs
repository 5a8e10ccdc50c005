//! Layer kernels. Every forward op has an explicit backward counterpart;
//! there is no autodiff tape.

mod conv;
mod elementwise;
mod loss;
mod pool;

pub use conv::{conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, ConvSpec};
pub use elementwise::{
    crop_center, crop_center_backward, dropout, dropout_backward, relu, relu_backward,
    relu_inplace, DropoutMask,
};
pub use loss::{
    cross_entropy_parts, softmax_cross_entropy, CrossEntropyParts, LossOutput, IGNORE_ID,
};
pub use pool::{
    max_unpool, max_unpool_backward, maxpool_backward, maxpool_forward, pooled_len, PoolRecord,
};
