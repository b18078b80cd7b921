//! Frequency-domain image inputs for convolutional networks.
//!
//! Images are converted to full-range YCbCr, split into 8x8 blocks,
//! transformed with an orthonormal DCT-II and regrouped so that every
//! frequency becomes one channel of an `H/8 x W/8 x 192` tensor. Channels
//! can then be kept or dropped with static masks, or with a trainable
//! gate that samples a keep/drop bit per channel through the
//! Gumbel-softmax relaxation.

pub mod autodiff;
pub mod check;
pub mod codec;
pub mod dataio;
pub mod error;
pub mod gate;
pub mod model;
pub mod rng;
pub mod select;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::{Rng, Stream};
pub use tensor::Tensor;
