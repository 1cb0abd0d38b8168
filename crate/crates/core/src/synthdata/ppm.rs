//! Binary PPM (`P6`, maxval 255) reading and writing.

use std::fs;
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Nearest 8-bit level of a unit-range value.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rounds every value to the nearest multiple of 1/255, as a PPM round trip would.
pub fn quantize(img: &Image) -> Image {
    let data = img.data().iter().map(|&v| to_u8(v) as f64 / 255.0).collect();
    Tensor::new(img.shape(), data).expect("same shape")
}

pub fn encode_ppm(img: &Image) -> Result<Vec<u8>> {
    let (h, w) = super::dims(img)?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let d = img.data();
    out.reserve(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            out.push(to_u8(d[c * plane + i]));
        }
    }
    Ok(out)
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
        return Err(Error::Data("PPM header ended early".into()));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Data(format!("PPM header: bad {what}")))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    if header_token(bytes, &mut pos)? != b"P6" {
        return Err(Error::Data("not a binary PPM (P6) file".into()));
    }
    let w = header_number(bytes, &mut pos, "width")?;
    let h = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::Data(format!("unsupported PPM maxval {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Data("PPM has zero size".into()));
    }
    pos += 1; // single whitespace byte after maxval
    let plane = h * w;
    let body = bytes
        .get(pos..pos + 3 * plane)
        .ok_or_else(|| Error::Data(format!("PPM pixel data truncated: need {} bytes", 3 * plane)))?;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in body.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(img)?).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    decode_ppm(&fs::read(path).map_err(|e| Error::io(path, e))?)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
