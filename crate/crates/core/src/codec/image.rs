use crate::error::{Error, Result};

/// 8-bit RGB image, row-major, three bytes per pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::shape(format!("empty image {width}x{height}")));
        }
        if pixels.len() != 3 * width * height {
            return Err(Error::shape(format!(
                "{width}x{height} image needs {} bytes, got {}",
                3 * width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take(3 * width * height).collect();
        Self::new(width, height, pixels).expect("positive extents")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Extends the image to the next multiple of 8 on each axis by
    /// repeating the last row and column.
    pub fn pad_to_blocks(&self) -> RgbImage {
        let w = self.width.div_ceil(8) * 8;
        let h = self.height.div_ceil(8) * 8;
        if w == self.width && h == self.height {
            return self.clone();
        }
        let mut out = Vec::with_capacity(3 * w * h);
        for y in 0..h {
            let sy = y.min(self.height - 1);
            for x in 0..w {
                out.extend_from_slice(&self.pixel(x.min(self.width - 1), sy));
            }
        }
        RgbImage::new(w, h, out).expect("padded extents")
    }

    /// Max absolute per-channel difference against an equally sized image.
    pub fn max_channel_diff(&self, other: &RgbImage) -> u8 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| a.abs_diff(*b))
            .max()
            .unwrap_or(0)
    }
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RgbImage({}x{})", self.width, self.height)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pad_replicates_edges() {
        let mut img = RgbImage::filled(9, 3, [1, 2, 3]);
        img.set_pixel(8, 2, [9, 9, 9]);
        let p = img.pad_to_blocks();
        assert_eq!((p.width(), p.height()), (16, 8));
        assert_eq!(p.pixel(15, 7), [9, 9, 9]);
        assert_eq!(p.pixel(8, 5), [9, 9, 9]);
        assert_eq!(p.pixel(7, 7), [1, 2, 3]);
    }
}
