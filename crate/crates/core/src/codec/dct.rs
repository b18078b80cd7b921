//! Orthonormal 8x8 DCT-II with the JPEG level shift.
//!
//! `X[u][v] = a(u) a(v) sum_ij (x[i][j] - 128) cos((2i+1)u pi/16) cos((2j+1)v pi/16)`
//! with `a(0) = sqrt(1/8)` and `a(k) = sqrt(2/8)`. The 2-D transform is
//! computed separably as `C (x - 128) C^T` with a precomputed basis.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Row-major 8x8 block; index `8*row + col` (or `8*u + v` for coefficients).
pub type Block = [f64; 64];

pub const LEVEL_SHIFT: f64 = 128.0;

#[derive(Clone, Debug, PartialEq)]
pub struct BlockDct {
    /// `basis[u][i] = a(u) cos((2i+1) u pi / 16)`
    basis: [[f64; 8]; 8],
}

impl Default for BlockDct {
    fn default() -> Self {
        Self::new()
    }
}

impl BlockDct {
    pub fn new() -> Self {
        Self::with_dc_scale(1.0)
    }

    /// Shared instance of the standard transform.
    pub fn standard() -> &'static BlockDct {
        static STD: OnceLock<BlockDct> = OnceLock::new();
        STD.get_or_init(BlockDct::new)
    }

    /// Transform whose DC normalization is multiplied by `scale`. Any value
    /// other than 1 breaks orthonormality; used to exercise the self-checks.
    #[doc(hidden)]
    pub fn with_dc_scale(scale: f64) -> Self {
        let mut basis = [[0.0; 8]; 8];
        for (u, row) in basis.iter_mut().enumerate() {
            let a = if u == 0 {
                (1.0f64 / 8.0).sqrt() * scale
            } else {
                (2.0f64 / 8.0).sqrt()
            };
            for (i, b) in row.iter_mut().enumerate() {
                *b = a * (((2 * i + 1) * u) as f64 * PI / 16.0).cos();
            }
        }
        Self { basis }
    }

    /// Pixel block (level-shifted internally) to coefficients.
    pub fn forward(&self, block: &Block) -> Block {
        let mut shifted = [0.0; 64];
        for (s, &p) in shifted.iter_mut().zip(block) {
            *s = p - LEVEL_SHIFT;
        }
        self.forward_centered(&shifted)
    }

    /// Transform of an already level-shifted block.
    pub fn forward_centered(&self, x: &Block) -> Block {
        // tmp = C x, then out = tmp C^T
        let b = &self.basis;
        let mut tmp = [0.0; 64];
        for u in 0..8 {
            for j in 0..8 {
                let mut s = 0.0;
                for i in 0..8 {
                    s += b[u][i] * x[8 * i + j];
                }
                tmp[8 * u + j] = s;
            }
        }
        let mut out = [0.0; 64];
        for u in 0..8 {
            for v in 0..8 {
                let mut s = 0.0;
                for j in 0..8 {
                    s += tmp[8 * u + j] * b[v][j];
                }
                out[8 * u + v] = s;
            }
        }
        out
    }

    /// Coefficients back to pixel values, including the `+128` unshift.
    pub fn inverse(&self, coeffs: &Block) -> Block {
        let mut out = self.inverse_centered(coeffs);
        out.iter_mut().for_each(|v| *v += LEVEL_SHIFT);
        out
    }

    pub fn inverse_centered(&self, c: &Block) -> Block {
        // x = C^T X C
        let b = &self.basis;
        let mut tmp = [0.0; 64];
        for i in 0..8 {
            for v in 0..8 {
                let mut s = 0.0;
                for u in 0..8 {
                    s += b[u][i] * c[8 * u + v];
                }
                tmp[8 * i + v] = s;
            }
        }
        let mut out = [0.0; 64];
        for i in 0..8 {
            for j in 0..8 {
                let mut s = 0.0;
                for v in 0..8 {
                    s += tmp[8 * i + v] * b[v][j];
                }
                out[8 * i + j] = s;
            }
        }
        out
    }
}

pub fn dct8x8(block: &Block) -> Block {
    BlockDct::standard().forward(block)
}

pub fn idct8x8(coeffs: &Block) -> Block {
    BlockDct::standard().inverse(coeffs)
}

/// Direct evaluation of the definition, O(64^2). Reference for tests and
/// for the runtime self-check.
pub fn dct8x8_reference(block: &Block) -> Block {
    let a = |k: usize| {
        if k == 0 {
            (1.0f64 / 8.0).sqrt()
        } else {
            (2.0f64 / 8.0).sqrt()
        }
    };
    let mut out = [0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            let mut s = 0.0;
            for i in 0..8 {
                for j in 0..8 {
                    s += (block[8 * i + j] - LEVEL_SHIFT)
                        * (((2 * i + 1) * u) as f64 * PI / 16.0).cos()
                        * (((2 * j + 1) * v) as f64 * PI / 16.0).cos();
                }
            }
            out[8 * u + v] = a(u) * a(v) * s;
        }
    }
    out
}
