//! Image <-> frequency channel tensor pipeline.

use crate::codec::color::{rgb_to_ycbcr, ycbcr_to_rgb, YcbcrPlanes};
use crate::codec::dct::BlockDct;
use crate::codec::image::RgbImage;
use crate::codec::pack::{blocks_to_plane, dct_plane, idct_grid, pack_channels, unpack_channels};
use crate::codec::stats::ChannelMoments;
use crate::error::{Error, Result};
use crate::select::{SelectionMask, TOTAL_CHANNELS};
use crate::tensor::Tensor;

/// `H/8 x W/8 x C` coefficients together with the channels they hold.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelTensor {
    pub tensor: Tensor,
    pub mask: SelectionMask,
}

impl ChannelTensor {
    pub fn channels(&self) -> usize {
        self.tensor.dims()[2]
    }
}

/// All 192 channels (Y | Cb | Cr, 64 each) of an image, unnormalized.
/// The image is edge-padded to a multiple of 8 first.
pub fn encode_full(img: &RgbImage, dct: &BlockDct) -> Tensor {
    let img = img.pad_to_blocks();
    let planes = rgb_to_ycbcr(&img);
    let (w, h) = (planes.width, planes.height);
    let packed: Vec<Tensor> = planes
        .planes()
        .iter()
        .map(|p| pack_channels(&dct_plane(dct, p, w, h).expect("padded extents")))
        .collect();
    let (rows, cols) = (h / 8, w / 8);
    let mut data = Vec::with_capacity(rows * cols * TOTAL_CHANNELS);
    for pos in 0..rows * cols {
        for t in &packed {
            data.extend_from_slice(&t.data()[pos * 64..pos * 64 + 64]);
        }
    }
    Tensor::new(vec![rows, cols, TOTAL_CHANNELS], data).expect("channel extents")
}

/// Encodes, drops channels outside `mask`, then standardizes with `stats`.
///
/// `stats` may describe either exactly the masked channels or all 192, in
/// which case the masked subset is used.
pub fn encode_image(
    img: &RgbImage,
    mask: Option<&SelectionMask>,
    stats: Option<&ChannelMoments>,
) -> Result<ChannelTensor> {
    let all = SelectionMask::all();
    let mask = mask.unwrap_or(&all);
    if mask.is_empty() {
        return Err(Error::config("selection mask is empty"));
    }
    let moments = match stats {
        Some(s) => Some(resolve_stats(s, mask)?),
        None => None,
    };
    let full = encode_full(img, BlockDct::standard());
    let mut tensor = if mask.is_all() {
        full
    } else {
        full.select_channels(&mask.channels())?
    };
    if let Some(m) = &moments {
        m.standardize(&mut tensor)?;
    }
    Ok(ChannelTensor {
        tensor,
        mask: mask.clone(),
    })
}

fn resolve_stats(stats: &ChannelMoments, mask: &SelectionMask) -> Result<ChannelMoments> {
    if stats.channels() == mask.len() {
        Ok(stats.clone())
    } else if stats.channels() == TOTAL_CHANNELS {
        stats.select(&mask.channels())
    } else {
        Err(Error::config(format!(
            "statistics cover {} channels, mask selects {}",
            stats.channels(),
            mask.len()
        )))
    }
}

/// Inverts [`encode_full`] up to the YCbCr planes (no rounding).
pub fn decode_planes(t: &Tensor, dct: &BlockDct) -> Result<YcbcrPlanes> {
    let (rows, cols, c) = t.hwc()?;
    if c != TOTAL_CHANNELS {
        return Err(Error::shape(format!("decoding needs all 192 channels, got {c}")));
    }
    let mut planes: Vec<Vec<f64>> = Vec::with_capacity(3);
    for comp in 0..3 {
        let sub = t.select_channels(&(comp * 64..comp * 64 + 64).collect::<Vec<_>>())?;
        let grid = idct_grid(dct, &unpack_channels(&sub)?);
        planes.push(blocks_to_plane(&grid));
    }
    let cr = planes.pop().expect("3 planes");
    let cb = planes.pop().expect("3 planes");
    let y = planes.pop().expect("3 planes");
    YcbcrPlanes::new(cols * 8, rows * 8, y, cb, cr)
}

/// Reconstructs the (padded) RGB image from an unnormalized full tensor.
pub fn decode_image(t: &Tensor) -> Result<RgbImage> {
    Ok(ycbcr_to_rgb(&decode_planes(t, BlockDct::standard())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::stats::ChannelStats;
    use crate::rng::{Rng, Stream};
    use crate::select::named_mask;

    fn random_image(w: usize, h: usize, seed: u64) -> RgbImage {
        let mut rng = Rng::new(seed, Stream::Data);
        RgbImage::new(w, h, (0..3 * w * h).map(|_| rng.below(256) as u8).collect()).unwrap()
    }

    #[test]
    fn imagenet_input_shapes() {
        let t = encode_image(&RgbImage::filled(448, 448, [10, 20, 30]), None, None).unwrap();
        assert_eq!(t.tensor.dims(), &[56, 56, 192]);
        let t = encode_image(&RgbImage::filled(896, 896, [10, 20, 30]), None, None).unwrap();
        assert_eq!(t.tensor.dims(), &[112, 112, 192]);
    }

    #[test]
    fn masked_shape() {
        let m = named_mask("DCT-24S").unwrap();
        let t = encode_image(&random_image(64, 64, 1), Some(&m), None).unwrap();
        assert_eq!(t.tensor.dims(), &[8, 8, 24]);
        assert_eq!(t.mask, m);
    }

    #[test]
    fn unaligned_images_are_padded() {
        let t = encode_image(&random_image(13, 9, 2), None, None).unwrap();
        assert_eq!(t.tensor.dims(), &[2, 2, 192]);
    }

    #[test]
    fn masked_equals_full_then_deleted() {
        let img = random_image(32, 24, 3);
        let m = named_mask("DCT-48T").unwrap();
        let full = encode_image(&img, None, None).unwrap();
        let masked = encode_image(&img, Some(&m), None).unwrap();
        assert_eq!(masked.tensor, full.tensor.select_channels(&m.channels()).unwrap());
    }

    #[test]
    fn round_trip_within_one_level() {
        for seed in 0..5 {
            let img = random_image(64, 64, seed);
            let t = encode_image(&img, None, None).unwrap();
            let back = decode_image(&t.tensor).unwrap();
            assert!(back.max_channel_diff(&img) <= 1);
        }
    }

    #[test]
    fn stats_mismatch_is_config_error() {
        let stats = ChannelMoments {
            mean: vec![0.0; 10],
            variance: vec![1.0; 10],
        };
        let m = named_mask("DCT-24S").unwrap();
        let r = encode_image(&random_image(16, 16, 1), Some(&m), Some(&stats));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn full_stats_apply_to_masked_subset() {
        let imgs: Vec<RgbImage> = (0..4).map(|s| random_image(16, 16, s)).collect();
        let mut acc = ChannelStats::new(192);
        for img in &imgs {
            acc.update(&encode_image(img, None, None).unwrap().tensor).unwrap();
        }
        let stats = acc.finalize().unwrap();
        let m = named_mask("DCT-24T").unwrap();
        let a = encode_image(&imgs[0], Some(&m), Some(&stats)).unwrap();
        let full = encode_image(&imgs[0], None, Some(&stats)).unwrap();
        let b = full.tensor.select_channels(&m.channels()).unwrap();
        assert!(a.tensor.max_abs_diff(&b) < 1e-12);
    }
}
