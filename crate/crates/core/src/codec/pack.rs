//! Regrouping of per-block coefficients into frequency channels.

use crate::codec::dct::{Block, BlockDct};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major grid of 8x8 coefficient (or pixel) blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockGrid {
    pub rows: usize,
    pub cols: usize,
    pub blocks: Vec<Block>,
}

impl BlockGrid {
    pub fn block(&self, by: usize, bx: usize) -> &Block {
        &self.blocks[by * self.cols + bx]
    }
}

fn check_extents(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || width % 8 != 0 || height % 8 != 0 {
        return Err(Error::shape(format!(
            "plane extents {width}x{height} are not positive multiples of 8"
        )));
    }
    Ok(())
}

/// Cuts a `height x width` plane into 8x8 blocks.
pub fn plane_to_blocks(plane: &[f64], width: usize, height: usize) -> Result<BlockGrid> {
    check_extents(width, height)?;
    if plane.len() != width * height {
        return Err(Error::shape("plane length does not match extents"));
    }
    let (rows, cols) = (height / 8, width / 8);
    let mut blocks = Vec::with_capacity(rows * cols);
    for by in 0..rows {
        for bx in 0..cols {
            let mut b = [0.0; 64];
            for i in 0..8 {
                let src = &plane[(by * 8 + i) * width + bx * 8..][..8];
                b[8 * i..8 * i + 8].copy_from_slice(src);
            }
            blocks.push(b);
        }
    }
    Ok(BlockGrid { rows, cols, blocks })
}

pub fn blocks_to_plane(grid: &BlockGrid) -> Vec<f64> {
    let width = grid.cols * 8;
    let mut plane = vec![0.0; width * grid.rows * 8];
    for by in 0..grid.rows {
        for bx in 0..grid.cols {
            let b = grid.block(by, bx);
            for i in 0..8 {
                plane[(by * 8 + i) * width + bx * 8..][..8].copy_from_slice(&b[8 * i..8 * i + 8]);
            }
        }
    }
    plane
}

/// Blockwise forward DCT of one plane.
pub fn dct_plane(dct: &BlockDct, plane: &[f64], width: usize, height: usize) -> Result<BlockGrid> {
    let mut grid = plane_to_blocks(plane, width, height)?;
    grid.blocks.iter_mut().for_each(|b| *b = dct.forward(b));
    Ok(grid)
}

pub fn idct_grid(dct: &BlockDct, grid: &BlockGrid) -> BlockGrid {
    BlockGrid {
        rows: grid.rows,
        cols: grid.cols,
        blocks: grid.blocks.iter().map(|b| dct.inverse(b)).collect(),
    }
}

/// `out[by, bx, 8u + v]` = coefficient `(u, v)` of block `(by, bx)`.
pub fn pack_channels(grid: &BlockGrid) -> Tensor {
    let data = grid.blocks.iter().flat_map(|b| b.iter().copied()).collect();
    Tensor::new(vec![grid.rows, grid.cols, 64], data).expect("grid extents")
}

pub fn unpack_channels(t: &Tensor) -> Result<BlockGrid> {
    let (rows, cols, c) = t.hwc()?;
    if c != 64 {
        return Err(Error::shape(format!("expected 64 channels, got {c}")));
    }
    let blocks = t
        .data()
        .chunks_exact(64)
        .map(|px| {
            let mut b = [0.0; 64];
            b.copy_from_slice(px);
            b
        })
        .collect();
    Ok(BlockGrid { rows, cols, blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Rng, Stream};

    fn random_plane(w: usize, h: usize, seed: u64) -> Vec<f64> {
        let mut rng = Rng::new(seed, Stream::Data);
        (0..w * h).map(|_| rng.uniform_range(-100.0, 100.0)).collect()
    }

    #[test]
    fn single_block_index_identity() {
        let plane: Vec<f64> = (0..64).map(f64::from).collect();
        let t = pack_channels(&plane_to_blocks(&plane, 8, 8).unwrap());
        assert_eq!(t.dims(), &[1, 1, 64]);
        for c in 0..64 {
            assert_eq!(t.at3(0, 0, c), plane[(c / 8) * 8 + c % 8]);
        }
    }

    #[test]
    fn block_position_and_frequency() {
        let mut grid = BlockGrid {
            rows: 2,
            cols: 2,
            blocks: vec![[0.0; 64]; 4],
        };
        grid.blocks[1][8 * 2 + 3] = 42.0;
        let t = pack_channels(&grid);
        assert_eq!(t.at3(0, 1, 19), 42.0);
        assert_eq!(t.data().iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(unpack_channels(&t).unwrap(), grid);
    }

    #[test]
    fn bijection() {
        let plane = random_plane(32, 32, 1);
        let grid = plane_to_blocks(&plane, 32, 32).unwrap();
        assert_eq!(blocks_to_plane(&grid), plane);
        let t = pack_channels(&grid);
        assert_eq!(unpack_channels(&t).unwrap(), grid);
        assert_eq!(pack_channels(&unpack_channels(&t).unwrap()), t);
    }

    #[test]
    fn rejects_unaligned_planes() {
        assert!(matches!(plane_to_blocks(&[0.0; 80], 10, 8), Err(Error::Shape(_))));
        assert!(matches!(
            unpack_channels(&Tensor::zeros(&[1, 1, 63])),
            Err(Error::Shape(_))
        ));
    }
}
