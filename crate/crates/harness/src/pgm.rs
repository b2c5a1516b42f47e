use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{input, HarnessError, Result};
use crate::image::ImageFrame;

/// 8-bit level of a pixel: clipped to `[0, 1]`, scaled by 255, rounded half up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Binary PGM (P5, maxval 255) encoding of `frame`.
pub fn encode_pgm(frame: &ImageFrame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend(frame.pixels().iter().map(|v| quantize(*v)));
    out
}

pub fn write_pgm(path: &Path, frame: &ImageFrame) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(&encode_pgm(frame))
        .map_err(|e| HarnessError::io(path, e))
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(input("truncated PGM header"));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| input("malformed PGM header"))
}

/// Decodes a binary 8-bit PGM into levels divided by 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<ImageFrame> {
    let mut pos = 0;
    if header_token(bytes, &mut pos)? != b"P5" {
        return Err(input("not a binary PGM"));
    }
    let width = header_number(bytes, &mut pos)?;
    let height = header_number(bytes, &mut pos)?;
    let maxval = header_number(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(input(format!("unsupported maxval {maxval}")));
    }
    pos += 1;
    let data = bytes
        .get(pos..pos + width * height)
        .ok_or_else(|| input("truncated PGM data"))?;
    let pixels = Array2::from_shape_fn((height, width), |(i, j)| {
        f64::from(data[i * width + j]) / 255.0
    });
    ImageFrame::new(pixels)
}

pub fn read_pgm(path: &Path) -> Result<ImageFrame> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode_pgm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::gen_random_bars;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(1.5), 255);
        assert_eq!(quantize(-0.1), 0);
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(0.49 / 255.0), 0);
    }

    #[test]
    fn roundtrip_reproduces_quantized_frame() {
        let f = gen_random_bars(16, 5, 2).unwrap();
        let bytes = encode_pgm(&f);
        assert!(bytes.starts_with(b"P5\n16 16\n255\n"));
        let back = decode_pgm(&bytes).unwrap();
        assert_eq!(encode_pgm(&back), bytes);
        for (a, b) in f.pixels().iter().zip(back.pixels()) {
            assert_eq!(quantize(*a), quantize(*b));
        }
    }

    #[test]
    fn header_comments_and_errors() {
        let mut bytes = b"P5\n# comment\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let f = decode_pgm(&bytes).unwrap();
        assert_eq!(f.pixels()[[0, 1]], 1.0);
        assert!(decode_pgm(b"P2\n2 1\n255\n").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
    }
}
