//! PNWT weight files.
//!
//! ```text
//! "PNWT"  u32 version (=1)  u32 layer_count
//! per layer: u8 kind
//!   kind 0 (conv):    u32 out, in, kh, kw, stride, pad
//!                     f32 weights[out*in*kh*kw]  f32 biases[out]
//!   kind 1 (relu):    no payload
//!   kind 2 (maxpool): u32 window, stride
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{BackboneError, BackboneSpec, Layer};
use crate::tensor::ConvKernel;

const MAGIC: &[u8; 4] = b"PNWT";
const VERSION: u32 = 1;
const KIND_CONV: u8 = 0;
const KIND_RELU: u8 = 1;
const KIND_MAXPOOL: u8 = 2;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("cannot read weights: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}, expected \"PNWT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported PNWT version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated at byte {offset} while reading {what}")]
    Truncated { offset: usize, what: String },
    #[error("layer {layer}: unknown layer kind {kind}")]
    UnknownKind { layer: usize, kind: u8 },
    #[error("layer {layer}: shape error: {message}")]
    Shape { layer: usize, message: String },
    #[error("{0} trailing bytes after last layer")]
    TrailingBytes(usize),
}

pub fn encode_weights(spec: &BackboneSpec) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.layers().len() as u32).to_le_bytes());
    for layer in spec.layers() {
        match layer {
            Layer::Conv(k) => {
                out.push(KIND_CONV);
                for v in [
                    k.out_channels,
                    k.in_channels,
                    k.kernel_h,
                    k.kernel_w,
                    k.stride,
                    k.padding,
                ] {
                    out.extend_from_slice(&(v as u32).to_le_bytes());
                }
                for w in k.weights.iter().chain(&k.biases) {
                    out.extend_from_slice(&w.to_le_bytes());
                }
            }
            Layer::Relu => out.push(KIND_RELU),
            Layer::MaxPool { window, stride } => {
                out.push(KIND_MAXPOOL);
                out.extend_from_slice(&(*window as u32).to_le_bytes());
                out.extend_from_slice(&(*stride as u32).to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], WeightsError> {
        if self.buf.len() - self.pos < n {
            return Err(WeightsError::Truncated {
                offset: self.buf.len(),
                what: what.to_string(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, WeightsError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, WeightsError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>, WeightsError> {
        let bytes = n.checked_mul(4).ok_or_else(|| WeightsError::Truncated {
            offset: self.buf.len(),
            what: what.to_string(),
        })?;
        let b = self.take(bytes, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<BackboneSpec, WeightsError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(WeightsError::BadMagic([
            magic[0], magic[1], magic[2], magic[3],
        ]));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(WeightsError::UnsupportedVersion(version));
    }
    let count = r.u32("layer count")? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let kind = r.u8(&format!("layer {i} kind"))?;
        match kind {
            KIND_CONV => {
                let what = format!("layer {i} conv header");
                let mut dims = [0usize; 6];
                for d in dims.iter_mut() {
                    *d = r.u32(&what)? as usize;
                }
                let [out, inp, kh, kw, stride, pad] = dims;
                let n = out
                    .checked_mul(inp)
                    .and_then(|v| v.checked_mul(kh))
                    .and_then(|v| v.checked_mul(kw))
                    .ok_or_else(|| WeightsError::Shape {
                        layer: i,
                        message: "weight count overflows".into(),
                    })?;
                let weights = r.f32s(n, &format!("layer {i} weights"))?;
                let biases = r.f32s(out, &format!("layer {i} biases"))?;
                let kernel = ConvKernel::new(out, inp, kh, kw, stride, pad, weights, biases)
                    .map_err(|e| WeightsError::Shape {
                        layer: i,
                        message: e.to_string(),
                    })?;
                layers.push(Layer::Conv(kernel));
            }
            KIND_RELU => layers.push(Layer::Relu),
            KIND_MAXPOOL => {
                let what = format!("layer {i} maxpool header");
                let window = r.u32(&what)? as usize;
                let stride = r.u32(&what)? as usize;
                layers.push(Layer::MaxPool { window, stride });
            }
            kind => return Err(WeightsError::UnknownKind { layer: i, kind }),
        }
    }
    if r.pos != bytes.len() {
        return Err(WeightsError::TrailingBytes(bytes.len() - r.pos));
    }
    BackboneSpec::new(layers).map_err(|e| match e {
        BackboneError::Layer { layer, source } => WeightsError::Shape {
            layer,
            message: source.to_string(),
        },
        other => WeightsError::Shape {
            layer: count.saturating_sub(1),
            message: other.to_string(),
        },
    })
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<BackboneSpec, WeightsError> {
    decode_weights(&fs::read(path)?)
}

pub fn save_weights(spec: &BackboneSpec, path: impl AsRef<Path>) -> Result<(), WeightsError> {
    fs::write(path, encode_weights(spec))?;
    Ok(())
}
