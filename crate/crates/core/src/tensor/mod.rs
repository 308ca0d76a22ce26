//! Minimal deterministic tensor engine with reverse-mode autodiff.
//!
//! Everything is a [`Tensor4`]: a dense row-major (batch, channel, height,
//! width) array of `f32` or `f64`. Operations live on the [`Tape`], which
//! records enough to run [`Tape::backward`]. Forward kernels use fixed loop
//! nests so results are bit-identical across runs and thread counts; this is
//! what makes encoder/decoder parity testable downstream.

mod gradcheck;
pub(crate) mod kernels;
mod tape;

pub use gradcheck::{finite_diff_check, DEFAULT_FD_EPS};
pub use tape::{GradientMap, NodeId, Tape};

use std::fmt;

use thiserror::Error;

/// Floating-point mode of a graph. All tensors in one graph share one mode;
/// the type parameter on [`Tensor4`] enforces that statically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

/// Element type of the engine: `f32` for the production path, `f64` for
/// gradient checking.
pub trait Scalar:
    Copy
    + PartialEq
    + PartialOrd
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + 'static
{
    const PRECISION: Precision;
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Single;
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        self.exp()
    }
    fn sqrt(self) -> Self {
        self.sqrt()
    }
    fn abs(self) -> Self {
        self.abs()
    }
    fn is_finite(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::Double;
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        self.exp()
    }
    fn sqrt(self) -> Self {
        self.sqrt()
    }
    fn abs(self) -> Self {
        self.abs()
    }
    fn is_finite(self) -> bool {
        self.is_finite()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TensorError {
    #[error("data length {found} does not match dims {dims:?} (expected {expected})")]
    DataLength {
        dims: [usize; 4],
        expected: usize,
        found: usize,
    },
    #[error("zero-sized dimension in {dims:?}")]
    ZeroDim { dims: [usize; 4] },
    #[error("input has {input} channels but kernel expects {kernel}")]
    ChannelMismatch { input: usize, kernel: usize },
    #[error("kernel size {kernel} exceeds padded extent {padded}")]
    KernelTooLarge { kernel: usize, padded: usize },
    #[error("conv geometry (extent {extent}, kernel {kernel}, stride {stride}, pad {pad}) does not tile evenly")]
    ConvGeometry {
        extent: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    #[error("stride must be >= 1")]
    ZeroStride,
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: [usize; 4],
        right: [usize; 4],
    },
    #[error("weight vector has {weights} entries for {channels} channels")]
    WeightCount { channels: usize, weights: usize },
    #[error("dense shapes incompatible: input {input:?}, matrix {matrix:?}, bias {bias:?}")]
    DenseShape {
        input: [usize; 4],
        matrix: [usize; 4],
        bias: [usize; 4],
    },
    #[error("dims {dims:?} not divisible for shuffle factor {factor}")]
    ShuffleDivisibility { dims: [usize; 4], factor: usize },
    #[error("spatial dims of {dims:?} must be even")]
    OddSpatial { dims: [usize; 4] },
    #[error("loss node must be scalar (1,1,1,1), got {dims:?}")]
    NonScalarLoss { dims: [usize; 4] },
    #[error("node id {id} out of range (tape has {len} nodes)")]
    DanglingNode { id: usize, len: usize },
}

/// Dense 4-axis array in row-major (B, C, H, W) order.
///
/// Vectors ride along as degenerate shapes: a per-channel weight vector is
/// `(1, C, 1, 1)`, a dense-layer matrix is `(Cout, Cin, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<F> {
    dims: [usize; 4],
    data: Vec<F>,
}

impl<F: Scalar> Tensor4<F> {
    pub fn new(dims: [usize; 4], data: Vec<F>) -> Result<Self, TensorError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDim { dims });
        }
        let expected = dims.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                dims,
                expected,
                found: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::filled(dims, F::ZERO)
    }

    pub fn ones(dims: [usize; 4]) -> Self {
        Self::filled(dims, F::ONE)
    }

    pub fn filled(dims: [usize; 4], value: F) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "zero dim in {dims:?}");
        let numel = dims.iter().product();
        Self {
            dims,
            data: vec![value; numel],
        }
    }

    /// Scalar (1,1,1,1) tensor.
    pub fn scalar(value: F) -> Self {
        Self {
            dims: [1, 1, 1, 1],
            data: vec![value],
        }
    }

    /// Per-channel vector as (1, C, 1, 1).
    pub fn channel_vec(values: Vec<F>) -> Self {
        assert!(!values.is_empty());
        Self {
            dims: [1, values.len(), 1, 1],
            data: values,
        }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> F) -> Self {
        let mut t = Self::zeros(dims);
        let [b_n, c_n, h_n, w_n] = dims;
        let mut i = 0;
        for b in 0..b_n {
            for c in 0..c_n {
                for h in 0..h_n {
                    for w in 0..w_n {
                        t.data[i] = f(b, c, h, w);
                        i += 1;
                    }
                }
            }
        }
        t
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[F] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    #[inline]
    pub fn idx(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        ((b * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> F {
        self.data[self.idx(b, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, h: usize, w: usize, v: F) {
        let i = self.idx(b, c, h, w);
        self.data[i] = v;
    }

    /// Value of a scalar (1,1,1,1) tensor.
    pub fn item(&self) -> F {
        assert_eq!(self.dims, [1, 1, 1, 1], "item() on non-scalar");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise cast to another precision.
    pub fn cast<G: Scalar>(&self) -> Tensor4<G> {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| G::from_f64(v.to_f64())).collect(),
        }
    }

    /// Spatial sub-window `(y0..y0+h, x0..x0+w)`, all batches and channels.
    pub fn crop_spatial(&self, y0: usize, x0: usize, h: usize, w: usize) -> Tensor4<F> {
        let [b_n, c_n, hh, ww] = self.dims;
        assert!(y0 + h <= hh && x0 + w <= ww, "crop out of bounds");
        Tensor4::from_fn([b_n, c_n, h, w], |b, c, y, x| self.at(b, c, y0 + y, x0 + x))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Bitwise equality via the f64 image of each element. Exact for both
    /// precisions since f32 -> f64 is injective.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_f64().to_bits() == b.to_f64().to_bits())
    }
}
