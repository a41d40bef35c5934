//! Dense row-major `f64` tensors and the image kernels used by both the
//! forward evaluator and the CNN encoder: convolution, max pooling, ReLU.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("data length {data} does not match shape {shape:?} (product {expected})")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        data: usize,
    },
    #[error("shape {0:?} has a zero extent")]
    ZeroExtent(Vec<usize>),
    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("expected shape {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("stride {stride} exceeds window size {window}")]
    StrideExceedsWindow { stride: usize, window: usize },
    #[error(
        "{axis}: ({extent} - {window} + 2*{padding}) mod {stride} = {remainder}, must be 0"
    )]
    Modulus {
        axis: Axis,
        extent: usize,
        window: usize,
        padding: usize,
        stride: usize,
        remainder: usize,
    },
    #[error("{axis}: window {window} does not fit padded extent {padded}")]
    WindowTooLarge {
        axis: Axis,
        window: usize,
        padded: usize,
    },
    #[error("kernel must be square, got {0:?}")]
    NonSquareKernel(Vec<usize>),
    #[error("zero-valued hyperparameter: {0}")]
    ZeroParameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Height,
    Width,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::Height => f.write_str("height"),
            Axis::Width => f.write_str("width"),
        }
    }
}

/// Dense tensor. `data.len()` always equals the product of `shape`, and no
/// entry is NaN or infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroExtent(shape));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                data: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(TensorError::NonFinite { index, value });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(value.is_finite());
        assert!(shape.iter().all(|&e| e > 0), "zero extent in {shape:?}");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(vec![data.len()], data)
    }

    /// Builds a 2-D tensor from equally long rows.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self, TensorError> {
        let h = rows.len();
        let w = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != w) {
            return Err(TensorError::ShapeMismatch {
                expected: vec![w],
                actual: vec![bad.len()],
            });
        }
        Self::new(vec![h, w], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len(), "index rank");
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &e)| {
            assert!(i < e, "index {i} out of extent {e}");
            acc * e + i
        })
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        assert!(value.is_finite());
        let k = self.flat_index(idx);
        self.data[k] = value;
    }

    /// Same data under a new shape of equal size.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self, TensorError> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn flatten(&self) -> Self {
        Self {
            shape: vec![self.data.len()],
            data: self.data.clone(),
        }
    }

    /// Elementwise map. Panics if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        assert!(data.iter().all(|v| v.is_finite()), "map produced non-finite");
        Self {
            shape: self.shape.clone(),
            data,
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, TensorError> {
        self.expect_shape(other.shape())?;
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.shape.clone(), data)
    }

    pub fn expect_shape(&self, expected: &[usize]) -> Result<(), TensorError> {
        if self.shape != expected {
            return Err(TensorError::ShapeMismatch {
                expected: expected.to_vec(),
                actual: self.shape.clone(),
            });
        }
        Ok(())
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }

    /// Slice of map `m` for a stacked `[maps, h, w]` tensor, as a `[h, w]` tensor.
    pub fn map_slice(&self, m: usize) -> Self {
        assert_eq!(self.shape.len(), 3, "map_slice needs a rank-3 tensor");
        let plane = self.shape[1] * self.shape[2];
        Self {
            shape: vec![self.shape[1], self.shape[2]],
            data: self.data[m * plane..(m + 1) * plane].to_vec(),
        }
    }

    /// Stacks equally shaped `[h, w]` maps into `[maps, h, w]`.
    pub fn stack(maps: &[Tensor]) -> Result<Self, TensorError> {
        let first = maps.first().ok_or(TensorError::ZeroExtent(vec![0]))?;
        let mut data = Vec::with_capacity(maps.len() * first.len());
        for m in maps {
            m.expect_shape(first.shape())?;
            data.extend_from_slice(&m.data);
        }
        let mut shape = vec![maps.len()];
        shape.extend_from_slice(first.shape());
        Self::new(shape, data)
    }
}

/// Convolution hyperparameters: square kernel size `f`, stride `S`, zero padding `P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvParams {
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(kernel_size: usize, stride: usize, padding: usize) -> Result<Self, TensorError> {
        if kernel_size == 0 {
            return Err(TensorError::ZeroParameter("kernel_size"));
        }
        if stride == 0 {
            return Err(TensorError::ZeroParameter("stride"));
        }
        if stride > kernel_size {
            return Err(TensorError::StrideExceedsWindow {
                stride,
                window: kernel_size,
            });
        }
        Ok(Self {
            kernel_size,
            stride,
            padding,
        })
    }

    /// Output extent `(n - f + 2P)/S + 1` along one axis, checking integrality.
    pub fn output_extent(&self, axis: Axis, extent: usize) -> Result<usize, TensorError> {
        window_extent(axis, extent, self.kernel_size, self.padding, self.stride)
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize), TensorError> {
        Ok((
            self.output_extent(Axis::Height, h)?,
            self.output_extent(Axis::Width, w)?,
        ))
    }
}

/// Max-pool hyperparameters: square window and stride, no padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PoolParams {
    pub pool_size: usize,
    pub stride: usize,
}

impl PoolParams {
    pub fn new(pool_size: usize, stride: usize) -> Result<Self, TensorError> {
        if pool_size == 0 {
            return Err(TensorError::ZeroParameter("pool_size"));
        }
        if stride == 0 {
            return Err(TensorError::ZeroParameter("stride"));
        }
        if stride > pool_size {
            return Err(TensorError::StrideExceedsWindow {
                stride,
                window: pool_size,
            });
        }
        Ok(Self { pool_size, stride })
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize), TensorError> {
        Ok((
            window_extent(Axis::Height, h, self.pool_size, 0, self.stride)?,
            window_extent(Axis::Width, w, self.pool_size, 0, self.stride)?,
        ))
    }
}

fn window_extent(
    axis: Axis,
    extent: usize,
    window: usize,
    padding: usize,
    stride: usize,
) -> Result<usize, TensorError> {
    let padded = extent + 2 * padding;
    if window > padded {
        return Err(TensorError::WindowTooLarge {
            axis,
            window,
            padded,
        });
    }
    let span = padded - window;
    let remainder = span % stride;
    if remainder != 0 {
        return Err(TensorError::Modulus {
            axis,
            extent,
            window,
            padding,
            stride,
            remainder,
        });
    }
    Ok(span / stride + 1)
}

fn expect_rank2(t: &Tensor) -> Result<(usize, usize), TensorError> {
    match *t.shape() {
        [h, w] => Ok((h, w)),
        _ => Err(TensorError::ShapeMismatch {
            expected: vec![0, 0],
            actual: t.shape().to_vec(),
        }),
    }
}

/// Surrounds a `[h, w]` map with `padding` frames of zeros.
pub fn zero_pad(input: &Tensor, padding: usize) -> Result<Tensor, TensorError> {
    let (h, w) = expect_rank2(input)?;
    if padding == 0 {
        return Ok(input.clone());
    }
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    let mut data = vec![0.0; ph * pw];
    for i in 0..h {
        let dst = (i + padding) * pw + padding;
        data[dst..dst + w].copy_from_slice(&input.data()[i * w..(i + 1) * w]);
    }
    Tensor::new(vec![ph, pw], data)
}

/// Single-map convolution (cross-correlation, no kernel flip) swept in raster
/// order: output cell `(r, c)` is the sum of `kernel ⊙ window` where the
/// window starts at `(r*S, c*S)` of the zero-padded input.
pub fn conv2d(input: &Tensor, kernel: &Tensor, params: ConvParams) -> Result<Tensor, TensorError> {
    let (h, w) = expect_rank2(input)?;
    let f = params.kernel_size;
    if kernel.shape() != [f, f] {
        return Err(TensorError::NonSquareKernel(kernel.shape().to_vec()));
    }
    let (oh, ow) = params.output_dims(h, w)?;
    let padded = zero_pad(input, params.padding)?;
    let pw = padded.shape()[1];
    let src = padded.data();
    let k = kernel.data();
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        for c in 0..ow {
            let (r0, c0) = (r * params.stride, c * params.stride);
            let mut acc = 0.0;
            for i in 0..f {
                let row = (r0 + i) * pw + c0;
                for j in 0..f {
                    acc += src[row + j] * k[i * f + j];
                }
            }
            out.push(acc);
        }
    }
    Tensor::new(vec![oh, ow], out)
}

/// Max over each `pool_size × pool_size` window of a `[h, w]` map.
pub fn maxpool2d(input: &Tensor, params: PoolParams) -> Result<Tensor, TensorError> {
    let (h, w) = expect_rank2(input)?;
    let (oh, ow) = params.output_dims(h, w)?;
    let p = params.pool_size;
    let src = input.data();
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        for c in 0..ow {
            let (r0, c0) = (r * params.stride, c * params.stride);
            let mut best = f64::NEG_INFINITY;
            for i in 0..p {
                for j in 0..p {
                    best = best.max(src[(r0 + i) * w + c0 + j]);
                }
            }
            out.push(best);
        }
    }
    Tensor::new(vec![oh, ow], out)
}

/// Flat position (row-major within the window) of the maximum of the pooling
/// window at output cell `(r, c)`; ties go to the lowest position.
pub fn pool_argmax(input: &Tensor, params: PoolParams, r: usize, c: usize) -> (usize, usize) {
    let w = input.shape()[1];
    let src = input.data();
    let (r0, c0) = (r * params.stride, c * params.stride);
    let mut best = (r0, c0);
    for i in 0..params.pool_size {
        for j in 0..params.pool_size {
            if src[(r0 + i) * w + c0 + j] > src[best.0 * w + best.1] {
                best = (r0 + i, c0 + j);
            }
        }
    }
    best
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// `W x + b` for `W: [n_out, n_in]`, `x: [n_in]`, `b: [n_out]`.
pub fn affine(weights: &Tensor, x: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    let (n_out, n_in) = expect_rank2(weights)?;
    x.expect_shape(&[n_in])?;
    bias.expect_shape(&[n_out])?;
    let w = weights.data();
    let out = (0..n_out)
        .map(|r| {
            w[r * n_in..(r + 1) * n_in]
                .iter()
                .zip(x.data())
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + bias.data()[r]
        })
        .collect();
    Tensor::new(vec![n_out], out)
}
