//! `FDT1` binary tensor files.
//!
//! Layout: magic `FDT1`, rank (u32 LE), one u32 LE extent per axis, then
//! `product(extents)` IEEE-754 binary32 values, little-endian, row-major.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"FDT1";

pub fn tensor_write(t: &Tensor) -> Result<Vec<u8>> {
    if !t.is_finite() {
        return Err(Error::Validation("cannot store non-finite tensor".into()));
    }
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| Error::Validation(format!("extent {d} too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Corruption(format!("file ends at byte {} inside the header", bytes.len())))
}

pub fn tensor_read(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 4 || &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::Format("missing FDT1 magic".into()));
    }
    let rank = read_u32(bytes, 4)? as usize;
    if rank == 0 {
        return Err(Error::Corruption("rank 0".into()));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        dims.push(read_u32(bytes, 8 + 4 * i)? as usize);
    }
    let start = 8 + 4 * rank;
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Corruption("extent product overflows".into()))?;
    let payload = &bytes[start..];
    if n == 0 || payload.len() != 4 * n {
        return Err(Error::Corruption(format!(
            "extents {dims:?} need {} payload bytes, found {}",
            4 * n,
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    Tensor::new(dims, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Rng, Stream};

    #[test]
    fn exact_layout() {
        let bytes = tensor_write(&Tensor::from_vec(vec![1.0])).unwrap();
        assert_eq!(
            bytes,
            [0x46, 0x44, 0x54, 0x31, 1, 0, 0, 0, 1, 0, 0, 0, 0x00, 0x00, 0x80, 0x3F]
        );
    }

    #[test]
    fn round_trip_within_f32() {
        let mut rng = Rng::new(8, Stream::Data);
        let t = Tensor::new(
            vec![8, 8, 192],
            (0..8 * 8 * 192).map(|_| rng.normal() * 100.0).collect(),
        )
        .unwrap();
        let back = tensor_read(&tensor_write(&t).unwrap()).unwrap();
        assert_eq!(back.dims(), t.dims());
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(*b, (*a as f32) as f64);
            assert!((a - b).abs() <= (*a as f32).abs() as f64 * f32::EPSILON as f64);
        }
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(tensor_read(b"XXXX\x01\0\0\0"), Err(Error::Format(_))));
        let mut bytes = tensor_write(&Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        bytes.pop();
        assert!(matches!(tensor_read(&bytes), Err(Error::Corruption(_))));
        assert!(matches!(tensor_read(b"FDT1\x02\0\0\0\x01\0"), Err(Error::Corruption(_))));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(tensor_write(&Tensor::from_vec(vec![f64::NAN])).is_err());
    }
}
