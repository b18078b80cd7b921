//! Full-range (JFIF) RGB <-> YCbCr.

use std::sync::OnceLock;

use crate::codec::image::RgbImage;
use crate::error::{Error, Result};

const FORWARD: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
];
const OFFSET: [f64; 3] = [0.0, 128.0, 128.0];

/// Three equally sized real-valued planes.
#[derive(Clone, Debug, PartialEq)]
pub struct YcbcrPlanes {
    pub width: usize,
    pub height: usize,
    pub y: Vec<f64>,
    pub cb: Vec<f64>,
    pub cr: Vec<f64>,
}

impl YcbcrPlanes {
    pub fn new(width: usize, height: usize, y: Vec<f64>, cb: Vec<f64>, cr: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if n == 0 || y.len() != n || cb.len() != n || cr.len() != n {
            return Err(Error::shape(format!("planes do not match {width}x{height}")));
        }
        Ok(Self {
            width,
            height,
            y,
            cb,
            cr,
        })
    }

    pub fn planes(&self) -> [&[f64]; 3] {
        [&self.y, &self.cb, &self.cr]
    }
}

pub fn rgb_pixel_to_ycbcr(rgb: [u8; 3]) -> [f64; 3] {
    let v = rgb.map(f64::from);
    let mut out = OFFSET;
    for (o, row) in out.iter_mut().zip(&FORWARD) {
        *o += row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
    }
    out
}

fn inverse_matrix() -> &'static [[f64; 3]; 3] {
    static INV: OnceLock<[[f64; 3]; 3]> = OnceLock::new();
    INV.get_or_init(|| {
        let m = FORWARD;
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        let mut inv = [[0.0; 3]; 3];
        for (r, row) in inv.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                // Adjugate: cofactor of the transposed position.
                let (r1, r2) = others(c);
                let (c1, c2) = others(r);
                let minor = m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1];
                let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
                *cell = sign * minor / det;
            }
        }
        inv
    })
}

fn others(i: usize) -> (usize, usize) {
    match i {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// Exact inverse of the forward map, without rounding.
pub fn ycbcr_pixel_to_rgb_f64(ycc: [f64; 3]) -> [f64; 3] {
    let inv = inverse_matrix();
    let c = [ycc[0] - OFFSET[0], ycc[1] - OFFSET[1], ycc[2] - OFFSET[2]];
    inv.map(|row| row[0] * c[0] + row[1] * c[1] + row[2] * c[2])
}

pub fn ycbcr_pixel_to_rgb(ycc: [f64; 3]) -> [u8; 3] {
    ycbcr_pixel_to_rgb_f64(ycc).map(|v| v.round().clamp(0.0, 255.0) as u8)
}

pub fn rgb_to_ycbcr(img: &RgbImage) -> YcbcrPlanes {
    let n = img.width() * img.height();
    let (mut y, mut cb, mut cr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in img.pixels().chunks_exact(3) {
        let [a, b, c] = rgb_pixel_to_ycbcr([px[0], px[1], px[2]]);
        y.push(a);
        cb.push(b);
        cr.push(c);
    }
    YcbcrPlanes {
        width: img.width(),
        height: img.height(),
        y,
        cb,
        cr,
    }
}

pub fn ycbcr_to_rgb(planes: &YcbcrPlanes) -> RgbImage {
    let mut pixels = Vec::with_capacity(3 * planes.y.len());
    for i in 0..planes.y.len() {
        pixels.extend_from_slice(&ycbcr_pixel_to_rgb([planes.y[i], planes.cb[i], planes.cr[i]]));
    }
    RgbImage::new(planes.width, planes.height, pixels).expect("plane extents")
}
