//! Binary netpbm: P6 (RGB) read/write and P5 (gray) write.

use crate::codec::RgbImage;
use crate::error::{Error, Result};

struct Header {
    width: usize,
    height: usize,
    payload: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(Error::Truncated {
            offset: bytes.len(),
            msg: "missing magic".into(),
        });
    }
    if &bytes[..2] != b"P6" {
        return Err(Error::UnsupportedFormat(format!(
            "magic {:?}, only binary P6 is supported",
            String::from_utf8_lossy(&bytes[..2])
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Whitespace and `#` comments between fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => {
                    return Err(Error::Truncated {
                        offset: pos,
                        msg: "header ends early".into(),
                    })
                }
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Truncated {
                offset: start,
                msg: "expected a decimal header field".into(),
            })?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("maxval {maxval}, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("empty image {width}x{height}")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(Error::Truncated {
                offset: pos,
                msg: "expected one whitespace byte before the payload".into(),
            })
        }
    }
    Ok(Header {
        width,
        height,
        payload: pos,
    })
}

pub fn ppm_read(bytes: &[u8]) -> Result<RgbImage> {
    let h = parse_header(bytes)?;
    let need = 3 * h.width * h.height;
    let have = bytes.len() - h.payload;
    if have < need {
        return Err(Error::Truncated {
            offset: bytes.len(),
            msg: format!("payload has {have} of {need} bytes"),
        });
    }
    RgbImage::new(h.width, h.height, bytes[h.payload..h.payload + need].to_vec())
}

pub fn ppm_write(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

/// P5 grayscale, maxval 255.
pub fn pgm_write(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}
