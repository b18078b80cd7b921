//! Image to frequency-channel codec.

pub mod color;
pub mod dct;
mod encode;
mod image;
pub mod pack;
mod stats;

pub use color::{rgb_to_ycbcr, ycbcr_to_rgb, YcbcrPlanes};
pub use dct::{dct8x8, idct8x8, Block, BlockDct};
pub use encode::{decode_image, decode_planes, encode_full, encode_image, ChannelTensor};
pub use image::RgbImage;
pub use pack::{pack_channels, unpack_channels, BlockGrid};
pub use stats::{ChannelMoments, ChannelStats, STANDARDIZE_EPS};
