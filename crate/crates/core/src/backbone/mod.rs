//! The frozen convolutional backbone: layer stack, forward pass, and the
//! PNWT weight file format.

mod filterbank;
mod format;

use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tensor::{
    conv2d_forward, global_max_pool, maxpool2d, pool_output_shape, relu, ConvKernel, FeatureMap,
    ImageTensor, PoolSwitches, Shape, TensorError,
};

pub use filterbank::{
    builtin_filter_index, builtin_filterbank, FilterInfo, FilterKind, BUILTIN_FILTERS,
};
pub use format::{decode_weights, encode_weights, load_weights, save_weights, WeightsError};

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("layer {layer}: {source}")]
    Layer { layer: usize, source: TensorError },
    #[error("input {found} does not match backbone input channels {expected}")]
    InputChannels { expected: usize, found: Shape },
    #[error("invalid backbone: {0}")]
    Invalid(String),
    #[error("input {0}x{1} too small; builtin filter bank needs at least 32x32")]
    InputTooSmall(usize, usize),
    #[error("trace does not belong to this backbone: {0}")]
    TraceMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvKernel),
    Relu,
    MaxPool { window: usize, stride: usize },
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape, TensorError> {
        match self {
            Layer::Conv(k) => k.output_shape(input),
            Layer::Relu => Ok(input),
            Layer::MaxPool { window, stride } => pool_output_shape(input, *window, *stride),
        }
    }
}

/// An ordered conv / ReLU / max-pool stack whose last layer is a conv layer.
///
/// The number of final filters (`N_c`) is fixed by the stack; the final map
/// size (`M_c`) depends on the input size, which is supplied at forward time.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneSpec {
    layers: Vec<Layer>,
}

impl BackboneSpec {
    pub fn new(layers: Vec<Layer>) -> Result<Self, BackboneError> {
        let mut channels: Option<usize> = None;
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                Layer::Conv(k) => {
                    k.validate()
                        .map_err(|source| BackboneError::Layer { layer: i, source })?;
                    if let Some(c) = channels {
                        if c != k.in_channels {
                            return Err(BackboneError::Layer {
                                layer: i,
                                source: TensorError::Geometry(format!(
                                    "expects {} input channels but previous conv emits {}",
                                    k.in_channels, c
                                )),
                            });
                        }
                    }
                    channels = Some(k.out_channels);
                }
                Layer::MaxPool { window, stride } => {
                    if *window == 0 || *stride == 0 {
                        return Err(BackboneError::Layer {
                            layer: i,
                            source: TensorError::Geometry(
                                "pool window and stride must be at least 1".into(),
                            ),
                        });
                    }
                }
                Layer::Relu => {}
            }
        }
        match layers.last() {
            Some(Layer::Conv(_)) => Ok(BackboneSpec { layers }),
            Some(other) => Err(BackboneError::Invalid(format!(
                "final layer must be conv, found {}",
                other.name()
            ))),
            None => Err(BackboneError::Invalid("no layers".into())),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_channels(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| match l {
                Layer::Conv(k) => Some(k.in_channels),
                _ => None,
            })
            .expect("backbone has a conv layer")
    }

    /// `N_c`: filters in the final conv layer.
    pub fn filter_count(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Conv(k)) => k.out_channels,
            _ => unreachable!("validated in new"),
        }
    }

    pub fn final_kernel(&self) -> &ConvKernel {
        match self.layers.last() {
            Some(Layer::Conv(k)) => k,
            _ => unreachable!("validated in new"),
        }
    }

    /// Output shape of every layer for an input of `input`.
    pub fn output_shapes(&self, input: Shape) -> Result<Vec<Shape>, BackboneError> {
        if input.channels != self.input_channels() {
            return Err(BackboneError::InputChannels {
                expected: self.input_channels(),
                found: input,
            });
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = input;
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer
                .output_shape(cur)
                .map_err(|source| BackboneError::Layer { layer: i, source })?;
            shapes.push(cur);
        }
        Ok(shapes)
    }

    /// Product of all strides: one final-map cell per this many input pixels.
    pub fn total_stride(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(k) => k.stride,
                Layer::MaxPool { stride, .. } => *stride,
                Layer::Relu => 1,
            })
            .product()
    }

    /// Side length of the receptive field of one final-layer cell.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut jump = 1;
        for l in &self.layers {
            let (k, s) = match l {
                Layer::Conv(k) => (k.kernel_h.max(k.kernel_w), k.stride),
                Layer::MaxPool { window, stride } => (*window, *stride),
                Layer::Relu => (1, 1),
            };
            rf += (k - 1) * jump;
            jump *= s;
        }
        rf
    }

    /// Pixel box (y0, x0, y1, x1), half-open and possibly extending past the
    /// image, that influences final-layer cell `(row, col)`.
    pub fn receptive_box(&self, row: usize, col: usize) -> (isize, isize, isize, isize) {
        let (mut y0, mut y1) = (row as isize, row as isize + 1);
        let (mut x0, mut x1) = (col as isize, col as isize + 1);
        for l in self.layers.iter().rev() {
            let (kh, kw, s, p) = match l {
                Layer::Conv(k) => (k.kernel_h, k.kernel_w, k.stride, k.padding),
                Layer::MaxPool { window, stride } => (*window, *window, *stride, 0),
                Layer::Relu => continue,
            };
            let (s, p) = (s as isize, p as isize);
            y0 = y0 * s - p;
            x0 = x0 * s - p;
            y1 = (y1 - 1) * s - p + kh as isize;
            x1 = (x1 - 1) * s - p + kw as isize;
        }
        (y0, x0, y1, x1)
    }

    /// Short hex digest of the PNWT encoding.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(encode_weights(self));
        digest[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Plain-text summary of the layer stack, with shapes when `input` is
    /// given.
    pub fn describe(&self, input: Option<Shape>) -> Result<String, BackboneError> {
        let shapes = input.map(|s| self.output_shapes(s)).transpose()?;
        let mut out = String::new();
        let _ = writeln!(out, "backbone {}", self.fingerprint());
        let _ = writeln!(out, "layers {}", self.layers.len());
        if let Some(s) = input {
            let _ = writeln!(out, "input {s}");
        }
        for (i, l) in self.layers.iter().enumerate() {
            let shape = shapes
                .as_ref()
                .map(|v| format!(" -> {}", v[i]))
                .unwrap_or_default();
            match l {
                Layer::Conv(k) => {
                    let _ = writeln!(
                        out,
                        "{i:>3} conv out={} in={} k={}x{} stride={} pad={}{shape}",
                        k.out_channels, k.in_channels, k.kernel_h, k.kernel_w, k.stride, k.padding
                    );
                }
                Layer::Relu => {
                    let _ = writeln!(out, "{i:>3} relu{shape}");
                }
                Layer::MaxPool { window, stride } => {
                    let _ = writeln!(out, "{i:>3} maxpool window={window} stride={stride}{shape}");
                }
            }
        }
        let _ = writeln!(out, "filters {}", self.filter_count());
        if let Some(s) = shapes.as_ref().and_then(|v| v.last()) {
            let _ = writeln!(out, "final_map {}x{}", s.height, s.width);
        }
        let _ = writeln!(out, "total_stride {}", self.total_stride());
        let _ = writeln!(out, "receptive_field {}", self.receptive_field());
        Ok(out)
    }

    /// Runs the stack on `image`, keeping every intermediate map.
    pub fn forward(&self, image: &ImageTensor) -> Result<ForwardTrace, BackboneError> {
        self.output_shapes(image.shape())?;
        let mut activations: Vec<FeatureMap> = Vec::with_capacity(self.layers.len());
        let mut switches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = activations.last().unwrap_or(image);
            let (out, sw) = apply_layer(layer, input)
                .map_err(|source| BackboneError::Layer { layer: i, source })?;
            activations.push(out);
            switches.push(sw);
        }
        let global = global_max_pool(activations.last().expect("at least one layer"));
        Ok(ForwardTrace {
            input_shape: image.shape(),
            activations,
            switches,
            pooled: global.values,
            argmax: global.argmax,
        })
    }

    /// Final-layer global-max values only; intermediate maps are dropped as
    /// soon as the next layer has consumed them.
    pub fn pooled_responses(&self, image: &ImageTensor) -> Result<Vec<f32>, BackboneError> {
        self.output_shapes(image.shape())?;
        let mut cur: Option<FeatureMap> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let input = cur.as_ref().unwrap_or(image);
            let (out, _) = apply_layer(layer, input)
                .map_err(|source| BackboneError::Layer { layer: i, source })?;
            cur = Some(out);
        }
        Ok(global_max_pool(&cur.expect("at least one layer")).values)
    }
}

fn apply_layer(
    layer: &Layer,
    input: &FeatureMap,
) -> Result<(FeatureMap, Option<PoolSwitches>), TensorError> {
    Ok(match layer {
        Layer::Conv(k) => (conv2d_forward(input, k)?, None),
        Layer::Relu => (relu(input), None),
        Layer::MaxPool { window, stride } => {
            let (out, sw) = maxpool2d(input, *window, *stride)?;
            (out, Some(sw))
        }
    })
}

/// Everything a forward pass produced: per-layer outputs, pool switches, and
/// the final-layer global max per filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input_shape: Shape,
    /// Output of layer `i`.
    pub activations: Vec<FeatureMap>,
    /// `Some` for max-pool layers.
    pub switches: Vec<Option<PoolSwitches>>,
    pub pooled: Vec<f32>,
    pub argmax: Vec<(usize, usize)>,
}

impl ForwardTrace {
    pub fn final_map(&self) -> &FeatureMap {
        self.activations.last().expect("non-empty trace")
    }

    /// Checks that the trace came from `spec`.
    pub fn check_against(&self, spec: &BackboneSpec) -> Result<(), BackboneError> {
        if self.activations.len() != spec.layers().len()
            || self.switches.len() != spec.layers().len()
        {
            return Err(BackboneError::TraceMismatch(format!(
                "trace has {} layers, backbone has {}",
                self.activations.len(),
                spec.layers().len()
            )));
        }
        let shapes = spec.output_shapes(self.input_shape)?;
        for (i, (shape, act)) in shapes.iter().zip(&self.activations).enumerate() {
            if *shape != act.shape() {
                return Err(BackboneError::TraceMismatch(format!(
                    "layer {i} output {} but backbone produces {shape}",
                    act.shape()
                )));
            }
            let is_pool = matches!(spec.layers()[i], Layer::MaxPool { .. });
            if is_pool != self.switches[i].is_some() {
                return Err(BackboneError::TraceMismatch(format!(
                    "layer {i} switches do not match layer kind"
                )));
            }
        }
        if self.pooled.len() != spec.filter_count() {
            return Err(BackboneError::TraceMismatch(format!(
                "{} pooled values for {} filters",
                self.pooled.len(),
                spec.filter_count()
            )));
        }
        Ok(())
    }
}
