//! Block DCT expressed as a strided convolution.
//!
//! One fixed kernel per frequency: output channel `u*N + v` of the forward
//! transform collects the `(u, v)` DCT-II coefficient of every `NxN` block,
//! so coefficients of the same frequency land in the same channel and keep
//! their spatial neighbourhood. The inverse is the transposed map of the
//! same orthonormal kernel bank, not a learned layer.

use thiserror::Error;

use crate::tensor::{NodeId, Scalar, Tape, Tensor4, TensorError};

#[derive(Debug, Error, PartialEq)]
pub enum FreqError {
    #[error("block size must be >= 1, got {0}")]
    InvalidBlockSize(usize),
    #[error("spatial dims {h}x{w} not divisible by block size {n}")]
    NotBlockAligned { h: usize, w: usize, n: usize },
    #[error("expected {expected} channels, got {found}")]
    ChannelCount { expected: usize, found: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// The `N^2` fixed convolution kernels of the forward block DCT-II, channel
/// `u*N + v` holding the `(u, v)` basis function. Kernels are generated from
/// the closed form in double precision, then cast to the working precision,
/// which is what makes the orthonormality checks meaningful.
#[derive(Debug, Clone)]
pub struct DctKernelBank<F> {
    n: usize,
    forward: Tensor4<F>,
}

/// Default block size used throughout.
pub const DCT_BLOCK: usize = 8;

fn dct_norm(n: usize, u: usize) -> f64 {
    if u == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    }
}

/// DCT-II basis weight at spatial offset `(i, j)` for frequency `(u, v)`.
pub fn dct_basis(n: usize, u: usize, v: usize, i: usize, j: usize) -> f64 {
    let pi = std::f64::consts::PI;
    dct_norm(n, u)
        * dct_norm(n, v)
        * (((i as f64 + 0.5) * pi / n as f64) * u as f64).cos()
        * (((j as f64 + 0.5) * pi / n as f64) * v as f64).cos()
}

impl<F: Scalar> DctKernelBank<F> {
    pub fn new(n: usize) -> Result<Self, FreqError> {
        if n < 1 {
            return Err(FreqError::InvalidBlockSize(n));
        }
        let mut data = Vec::with_capacity(n * n * n * n);
        for u in 0..n {
            for v in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        data.push(F::from_f64(dct_basis(n, u, v, i, j)));
                    }
                }
            }
        }
        let forward = Tensor4::new([n * n, 1, n, n], data).expect("bank dims are consistent");
        Ok(Self { n, forward })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Kernel tensor `(N^2, 1, N, N)`.
    pub fn forward(&self) -> &Tensor4<F> {
        &self.forward
    }
}

/// Forward block DCT of a single-channel image: `(B, 1, H, W)` to
/// `(B, N^2, H/N, W/N)`. Linear, so it participates in autodiff with the
/// transposed map as its backward.
pub fn dct_conv<F: Scalar>(
    tape: &mut Tape<F>,
    x: NodeId,
    bank: &DctKernelBank<F>,
) -> Result<NodeId, FreqError> {
    let [_, c, h, w] = tape.value(x).dims();
    if c != 1 {
        return Err(FreqError::ChannelCount {
            expected: 1,
            found: c,
        });
    }
    let n = bank.n;
    if h % n != 0 || w % n != 0 {
        return Err(FreqError::NotBlockAligned { h, w, n });
    }
    let k = tape.leaf(bank.forward.clone(), false);
    Ok(tape.conv2d(x, k, None, n, 0)?)
}

/// Inverse block DCT: `(B, N^2, H/N, W/N)` back to `(B, 1, H, W)`. Exact
/// inverse of [`dct_conv`] by orthonormality.
pub fn idct_conv<F: Scalar>(
    tape: &mut Tape<F>,
    y: NodeId,
    bank: &DctKernelBank<F>,
) -> Result<NodeId, FreqError> {
    let c = tape.value(y).dims()[1];
    let n = bank.n;
    if c != n * n {
        return Err(FreqError::ChannelCount {
            expected: n * n,
            found: c,
        });
    }
    let k = tape.leaf(bank.forward.clone(), false);
    Ok(tape.conv2d_transpose(y, k, n, 0)?)
}

/// Convenience tape-free forward transform.
pub fn dct_plane<F: Scalar>(x: &Tensor4<F>, bank: &DctKernelBank<F>) -> Result<Tensor4<F>, FreqError> {
    let mut tape = Tape::new();
    let id = tape.leaf(x.clone(), false);
    let out = dct_conv(&mut tape, id, bank)?;
    Ok(tape.value(out).clone())
}

/// Convenience tape-free inverse transform.
pub fn idct_plane<F: Scalar>(y: &Tensor4<F>, bank: &DctKernelBank<F>) -> Result<Tensor4<F>, FreqError> {
    let mut tape = Tape::new();
    let id = tape.leaf(y.clone(), false);
    let out = idct_conv(&mut tape, id, bank)?;
    Ok(tape.value(out).clone())
}
