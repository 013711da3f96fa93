//! Binary PPM (P6, maxval 255) reading and writing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::ImageInput;

/// Encodes channels as `round(255 v)`.
pub fn encode<T: Scalar>(img: &ImageInput<T>) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.input()
            .values()
            .iter()
            .map(|v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}

/// Decodes a P6 image; each byte `b` becomes exactly `b / 255`.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<ImageInput<T>> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Ppm("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(Error::Ppm(format!("unsupported magic `{}`", fields[0])));
    }
    let parse = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Ppm(format!("invalid {what} `{s}`")))
    };
    let (width, height, maxval) = (parse(&fields[1], "width")?, parse(&fields[2], "height")?, parse(&fields[3], "maxval")?);
    if maxval != 255 {
        return Err(Error::Ppm(format!("only 8-bit images are supported, maxval is {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = 3 * width * height;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Ppm(format!("raster has {} bytes, expected {need}", bytes.len().saturating_sub(pos))))?;
    let scale = T::from_u8(255).expect("255 fits scalar");
    let values = raster
        .iter()
        .map(|b| T::from_u8(*b).expect("byte fits scalar") / scale.clone())
        .collect();
    ImageInput::from_flat(width, height, values)
}

pub fn save<T: Scalar>(img: &ImageInput<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(img))?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<ImageInput<T>> {
    decode(&fs::read(path)?)
}
