//! Squeeze-SegNet built from scratch: a SqueezeNet-style encoder, a mirrored
//! decoder of DFire modules with max-unpooling on shared pool indices, and a
//! final learned deconvolution to per-class logits.
//!
//! Every layer has an explicit backward pass. Tensors are generic over
//! `f32` (the storage and training type) and `f64` (used for gradient
//! checking).

pub mod arch;
pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{concat_channels, he_init, Dims, Scalar, Tensor};
