//! Dense channel-major tensors and the convolution / pooling kernels the
//! backbone is built from.
//!
//! Samples are stored as `f32`; every dot product accumulates in `f64`
//! in a fixed order (input channel, kernel row, kernel column) so the
//! results are reproducible bit-for-bit.

use std::fmt;

use thiserror::Error;

/// Errors raised by tensor construction and the kernels.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: Shape, found: Shape },
    #[error("data length {len} does not match shape {shape}")]
    DataLength { shape: Shape, len: usize },
    #[error("non-finite sample at flat index {index}")]
    NonFinite { index: usize },
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("pooling window {window} larger than input {height}x{width}")]
    WindowTooLarge {
        window: usize,
        height: usize,
        width: usize,
    },
}

/// Channel / height / width triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Dense `channels x height x width` array in row-major channel-plane order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

/// An input image; samples are expected in `[0, 1]`.
pub type ImageTensor = Tensor;
/// The output of a backbone layer.
pub type FeatureMap = Tensor;

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Wraps `data`, checking its length and that every sample is finite.
    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self, TensorError> {
        if data.len() != shape.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index });
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape.height + y) * self.shape.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f32) {
        let i = self.index(c, y, x);
        self.data[i] = value;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.shape.plane();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.shape.plane();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// Convolution weights and geometry. Weights are laid out
/// `[out][in][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

impl ConvKernel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
        weights: Vec<f32>,
        biases: Vec<f32>,
    ) -> Result<Self, TensorError> {
        let kernel = ConvKernel {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            weights,
            biases,
        };
        kernel.validate()?;
        Ok(kernel)
    }

    /// Kernel with all weights and biases zero.
    pub fn zeros(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        ConvKernel {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            weights: vec![0.0; out_channels * in_channels * kernel_h * kernel_w],
            biases: vec![0.0; out_channels],
        }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if self.stride == 0 {
            return Err(TensorError::Geometry("stride must be at least 1".into()));
        }
        if self.out_channels == 0
            || self.in_channels == 0
            || self.kernel_h == 0
            || self.kernel_w == 0
        {
            return Err(TensorError::Geometry(format!(
                "degenerate kernel {}x{}x{}x{}",
                self.out_channels, self.in_channels, self.kernel_h, self.kernel_w
            )));
        }
        let expected = self.weight_count();
        if self.weights.len() != expected {
            return Err(TensorError::Geometry(format!(
                "weight count {} does not match {}x{}x{}x{} = {}",
                self.weights.len(),
                self.out_channels,
                self.in_channels,
                self.kernel_h,
                self.kernel_w,
                expected
            )));
        }
        if self.biases.len() != self.out_channels {
            return Err(TensorError::Geometry(format!(
                "bias count {} does not match {} output channels",
                self.biases.len(),
                self.out_channels
            )));
        }
        if let Some(i) = self
            .weights
            .iter()
            .chain(self.biases.iter())
            .position(|v| !v.is_finite())
        {
            return Err(TensorError::NonFinite { index: i });
        }
        Ok(())
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_h * self.kernel_w
    }

    #[inline]
    pub fn weight_index(&self, o: usize, c: usize, i: usize, j: usize) -> usize {
        ((o * self.in_channels + c) * self.kernel_h + i) * self.kernel_w + j
    }

    #[inline]
    pub fn weight(&self, o: usize, c: usize, i: usize, j: usize) -> f32 {
        self.weights[self.weight_index(o, c, i, j)]
    }

    pub fn set_weight(&mut self, o: usize, c: usize, i: usize, j: usize, w: f32) {
        let idx = self.weight_index(o, c, i, j);
        self.weights[idx] = w;
    }

    /// Output shape for `input`, or an error if the input does not fit.
    pub fn output_shape(&self, input: Shape) -> Result<Shape, TensorError> {
        if input.channels != self.in_channels {
            return Err(TensorError::ShapeMismatch {
                expected: Shape::new(self.in_channels, input.height, input.width),
                found: input,
            });
        }
        let padded_h = input.height + 2 * self.padding;
        let padded_w = input.width + 2 * self.padding;
        if padded_h < self.kernel_h || padded_w < self.kernel_w {
            return Err(TensorError::Geometry(format!(
                "{}x{} kernel does not fit padded input {}x{}",
                self.kernel_h, self.kernel_w, padded_h, padded_w
            )));
        }
        Ok(Shape::new(
            self.out_channels,
            (padded_h - self.kernel_h) / self.stride + 1,
            (padded_w - self.kernel_w) / self.stride + 1,
        ))
    }
}

/// Direct 2-D cross-correlation with zero padding.
///
/// `out[o, y, x] = bias[o] + sum_{c,i,j} in[c, y*s - p + i, x*s - p + j] * w[o, c, i, j]`
pub fn conv2d_forward(input: &Tensor, kernel: &ConvKernel) -> Result<FeatureMap, TensorError> {
    let out_shape = kernel.output_shape(input.shape())?;
    let (in_h, in_w) = (input.height() as isize, input.width() as isize);
    let (s, p) = (kernel.stride as isize, kernel.padding as isize);
    let mut out = Tensor::zeros(out_shape);
    // all-zero (o, c) kernel slices contribute nothing and are skipped
    let plane_len = kernel.kernel_h * kernel.kernel_w;
    let live: Vec<bool> = kernel
        .weights
        .chunks(plane_len)
        .map(|w| w.iter().any(|&v| v != 0.0))
        .collect();
    for o in 0..out_shape.channels {
        let bias = kernel.biases[o] as f64;
        for y in 0..out_shape.height {
            for x in 0..out_shape.width {
                let mut acc = bias;
                for c in 0..kernel.in_channels {
                    if !live[o * kernel.in_channels + c] {
                        continue;
                    }
                    let plane = input.plane(c);
                    for i in 0..kernel.kernel_h {
                        let iy = y as isize * s - p + i as isize;
                        if iy < 0 || iy >= in_h {
                            continue;
                        }
                        let row = &plane[(iy as usize) * input.width()..][..input.width()];
                        let wrow =
                            &kernel.weights[kernel.weight_index(o, c, i, 0)..][..kernel.kernel_w];
                        for (j, &w) in wrow.iter().enumerate() {
                            let ix = x as isize * s - p + j as isize;
                            if ix < 0 || ix >= in_w {
                                continue;
                            }
                            acc += row[ix as usize] as f64 * w as f64;
                        }
                    }
                }
                out.set(o, y, x, acc as f32);
            }
        }
    }
    Ok(out)
}

/// Transpose of [`conv2d_forward`] with respect to its input: scatters
/// `grad` (shaped like the convolution output) back through the kernel onto
/// a map of `input_shape`. Bias does not participate.
pub fn conv2d_transpose(
    grad: &Tensor,
    kernel: &ConvKernel,
    input_shape: Shape,
) -> Result<Tensor, TensorError> {
    let out_shape = kernel.output_shape(input_shape)?;
    if grad.shape() != out_shape {
        return Err(TensorError::ShapeMismatch {
            expected: out_shape,
            found: grad.shape(),
        });
    }
    let (in_h, in_w) = (input_shape.height as isize, input_shape.width as isize);
    let (s, p) = (kernel.stride as isize, kernel.padding as isize);
    let mut acc = vec![0.0f64; input_shape.len()];
    for o in 0..out_shape.channels {
        let gplane = grad.plane(o);
        for y in 0..out_shape.height {
            for x in 0..out_shape.width {
                let g = gplane[y * out_shape.width + x] as f64;
                if g == 0.0 {
                    continue;
                }
                for c in 0..kernel.in_channels {
                    for i in 0..kernel.kernel_h {
                        let iy = y as isize * s - p + i as isize;
                        if iy < 0 || iy >= in_h {
                            continue;
                        }
                        for j in 0..kernel.kernel_w {
                            let ix = x as isize * s - p + j as isize;
                            if ix < 0 || ix >= in_w {
                                continue;
                            }
                            let idx = (c * input_shape.height + iy as usize) * input_shape.width
                                + ix as usize;
                            acc[idx] += g * kernel.weight(o, c, i, j) as f64;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(input_shape, acc.into_iter().map(|v| v as f32).collect())
}

/// Elementwise `max(x, 0)`. Negative and zero inputs map to `+0.0`.
pub fn relu(input: &Tensor) -> FeatureMap {
    Tensor {
        shape: input.shape,
        data: input
            .data
            .iter()
            .map(|&v| if v > 0.0 { v } else { 0.0 })
            .collect(),
    }
}

/// Argmax positions recorded by [`maxpool2d`], one per pooled cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolSwitches {
    pub input_shape: Shape,
    pub output_shape: Shape,
    pub window: usize,
    pub stride: usize,
    /// `(row, col)` in the input plane, indexed like the pooled tensor.
    pub positions: Vec<(usize, usize)>,
}

impl PoolSwitches {
    pub fn get(&self, c: usize, y: usize, x: usize) -> (usize, usize) {
        self.positions[(c * self.output_shape.height + y) * self.output_shape.width + x]
    }
}

/// Output shape of a `window`/`stride` max pool.
pub fn pool_output_shape(input: Shape, window: usize, stride: usize) -> Result<Shape, TensorError> {
    if window == 0 || stride == 0 {
        return Err(TensorError::Geometry(
            "pooling window and stride must be at least 1".into(),
        ));
    }
    if window > input.height || window > input.width {
        return Err(TensorError::WindowTooLarge {
            window,
            height: input.height,
            width: input.width,
        });
    }
    Ok(Shape::new(
        input.channels,
        (input.height - window) / stride + 1,
        (input.width - window) / stride + 1,
    ))
}

/// Windowed max pooling. Ties go to the first maximum in row-major order.
pub fn maxpool2d(
    input: &Tensor,
    window: usize,
    stride: usize,
) -> Result<(FeatureMap, PoolSwitches), TensorError> {
    let out_shape = pool_output_shape(input.shape(), window, stride)?;
    let mut out = Tensor::zeros(out_shape);
    let mut positions = Vec::with_capacity(out_shape.len());
    for c in 0..out_shape.channels {
        let plane = input.plane(c);
        for y in 0..out_shape.height {
            for x in 0..out_shape.width {
                let (y0, x0) = (y * stride, x * stride);
                let mut best = plane[y0 * input.width() + x0];
                let mut at = (y0, x0);
                for iy in y0..y0 + window {
                    for ix in x0..x0 + window {
                        let v = plane[iy * input.width() + ix];
                        if v > best {
                            best = v;
                            at = (iy, ix);
                        }
                    }
                }
                out.set(c, y, x, best);
                positions.push(at);
            }
        }
    }
    Ok((
        out,
        PoolSwitches {
            input_shape: input.shape(),
            output_shape: out_shape,
            window,
            stride,
            positions,
        },
    ))
}

/// Places every pooled value back at its switch position; everything else is
/// zero. Cells reached by more than one switch (overlapping windows) receive
/// the sum, which keeps this the exact adjoint of [`maxpool2d`].
pub fn max_unpool(pooled: &Tensor, switches: &PoolSwitches) -> Result<Tensor, TensorError> {
    if pooled.shape() != switches.output_shape {
        return Err(TensorError::ShapeMismatch {
            expected: switches.output_shape,
            found: pooled.shape(),
        });
    }
    let mut out = Tensor::zeros(switches.input_shape);
    let oshape = switches.output_shape;
    for c in 0..oshape.channels {
        for y in 0..oshape.height {
            for x in 0..oshape.width {
                let v = pooled.get(c, y, x);
                if v == 0.0 {
                    continue;
                }
                let (iy, ix) = switches.get(c, y, x);
                let i = out.index(c, iy, ix);
                out.data[i] += v;
            }
        }
    }
    Ok(out)
}

/// Per-channel maximum over the whole plane and where it was found.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMax {
    pub values: Vec<f32>,
    pub argmax: Vec<(usize, usize)>,
}

/// Global max pooling with the same first-maximum tie rule as [`maxpool2d`].
pub fn global_max_pool(input: &Tensor) -> GlobalMax {
    let w = input.width();
    let mut values = Vec::with_capacity(input.channels());
    let mut argmax = Vec::with_capacity(input.channels());
    for c in 0..input.channels() {
        let plane = input.plane(c);
        let mut best = f32::NEG_INFINITY;
        let mut at = 0;
        for (i, &v) in plane.iter().enumerate() {
            if v > best {
                best = v;
                at = i;
            }
        }
        if plane.is_empty() {
            best = 0.0;
        }
        values.push(best);
        argmax.push((at / w.max(1), at % w.max(1)));
    }
    GlobalMax { values, argmax }
}
