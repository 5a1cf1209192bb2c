//! Binary PPM (P6) and PGM (P5) images with 8-bit samples.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::tensor::{ImageTensor, Shape, Tensor};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot access image: {0}")]
    Io(#[from] io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("pixel data truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], ImageError> {
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
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    if start == *pos {
        return Err(ImageError::MalformedHeader(
            "unexpected end of header".into(),
        ));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize, ImageError> {
    let tok = next_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| {
            ImageError::MalformedHeader(format!("bad {what}: {:?}", String::from_utf8_lossy(tok)))
        })
}

/// Parses P6 (3 channels) or P5 (1 channel); samples become `k / 255`.
pub fn decode_image(bytes: &[u8]) -> Result<ImageTensor, ImageError> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    let channels = match magic {
        b"P6" => 3,
        b"P5" => 1,
        b"P3" | b"P2" => {
            return Err(ImageError::Unsupported(
                "ASCII portable maps are not supported".into(),
            ))
        }
        other => {
            return Err(ImageError::MalformedHeader(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageError::MalformedHeader(format!(
            "empty image {width}x{height}"
        )));
    }
    if maxval != 255 {
        return Err(ImageError::Unsupported(format!(
            "maxval {maxval}; only 8-bit (255) images are supported"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ImageError::Truncated {
            expected: width * height * channels,
            found: 0,
        });
    }
    pos += 1;
    let raster = &bytes[pos..];
    let expected = width * height * channels;
    if raster.len() < expected {
        return Err(ImageError::Truncated {
            expected,
            found: raster.len(),
        });
    }
    let shape = Shape::new(channels, height, width);
    let mut t = Tensor::zeros(shape);
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let b = raster[(y * width + x) * channels + c];
                t.set(c, y, x, b as f32 / 255.0);
            }
        }
    }
    Ok(t)
}

/// Quantises `v` in `[0, 1]` to a byte.
pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a 1-channel tensor as P5 or a 3-channel tensor as P6.
pub fn encode_image(image: &ImageTensor) -> Result<Vec<u8>, ImageError> {
    let magic = match image.channels() {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(ImageError::Unsupported(format!(
                "{c} channels; expected 1 or 3"
            )))
        }
    };
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w * ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                out.push(to_byte(image.get(c, y, x)));
            }
        }
    }
    Ok(out)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageTensor, ImageError> {
    decode_image(&fs::read(path)?)
}

pub fn write_image(path: impl AsRef<Path>, image: &ImageTensor) -> Result<(), ImageError> {
    fs::write(path, encode_image(image)?)?;
    Ok(())
}
