//! Pure forward/backward kernels behind the tape ops.
//!
//! Every kernel uses a fixed loop nest (channel-in, then kernel row, then
//! kernel column) so each output element accumulates its terms in the same
//! order on every run and under any rayon thread count. Parallelism is only
//! over independent output slots.

use rayon::prelude::*;

use super::{Scalar, Tensor4, TensorError};

/// Below this many output elements the per-plane loops run serially;
/// rayon setup costs more than the work.
const PAR_THRESHOLD: usize = 4096;

pub(crate) fn conv_out_extent(
    extent: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize, TensorError> {
    if stride == 0 {
        return Err(TensorError::ZeroStride);
    }
    let padded = extent + 2 * pad;
    if kernel > padded {
        return Err(TensorError::KernelTooLarge { kernel, padded });
    }
    if (padded - kernel) % stride != 0 {
        return Err(TensorError::ConvGeometry {
            extent,
            kernel,
            stride,
            pad,
        });
    }
    Ok((padded - kernel) / stride + 1)
}

/// Valid output index range `lo..hi` such that `o*stride + k_off - pad`
/// stays inside `[0, extent)`.
#[inline]
fn valid_range(out_extent: usize, extent: usize, k_off: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k_off >= pad {
        0
    } else {
        (pad - k_off + stride - 1) / stride
    };
    let max_in = extent + pad;
    if k_off >= max_in {
        return (0, 0);
    }
    let hi = ((max_in - 1 - k_off) / stride + 1).min(out_extent);
    (lo.min(hi), hi)
}

fn for_each_plane<F: Scalar>(out: &mut [F], plane_len: usize, body: impl Fn(usize, &mut [F]) + Sync)
where
    F: Send,
{
    if out.len() <= PAR_THRESHOLD {
        for (p, chunk) in out.chunks_mut(plane_len).enumerate() {
            body(p, chunk);
        }
    } else {
        out.par_chunks_mut(plane_len)
            .enumerate()
            .for_each(|(p, chunk)| body(p, chunk));
    }
}

pub(crate) fn conv2d_fwd<F: Scalar>(
    x: &Tensor4<F>,
    w: &Tensor4<F>,
    bias: Option<&Tensor4<F>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor4<F>, TensorError> {
    let [b_n, ci_n, h, wd] = x.dims();
    let [co_n, wci, kh, kw] = w.dims();
    if kh != kw {
        return Err(TensorError::ShapeMismatch {
            left: w.dims(),
            right: [co_n, wci, kh, kh],
        });
    }
    if wci != ci_n {
        return Err(TensorError::ChannelMismatch {
            input: ci_n,
            kernel: wci,
        });
    }
    let ho = conv_out_extent(h, kh, stride, pad)?;
    let wo = conv_out_extent(wd, kw, stride, pad)?;
    if let Some(b) = bias {
        if b.dims() != [1, co_n, 1, 1] {
            return Err(TensorError::ShapeMismatch {
                left: b.dims(),
                right: [1, co_n, 1, 1],
            });
        }
    }

    let mut out = Tensor4::zeros([b_n, co_n, ho, wo]);
    let xd = x.data();
    let wdat = w.data();
    let k = kh;
    let plane = ho * wo;

    for_each_plane(out.data_mut(), plane, |p, out_plane| {
        let b = p / co_n;
        let co = p % co_n;
        for ci in 0..ci_n {
            let x_chan = &xd[(b * ci_n + ci) * h * wd..][..h * wd];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(ho, h, ky, stride, pad);
                for kx in 0..k {
                    let wv = wdat[((co * ci_n + ci) * k + ky) * k + kx];
                    let (ox_lo, ox_hi) = valid_range(wo, wd, kx, stride, pad);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let x_row = &x_chan[iy * wd..][..wd];
                        let out_row = &mut out_plane[oy * wo..][..wo];
                        if stride == 1 {
                            let ix0 = ox_lo + kx - pad;
                            let src = &x_row[ix0..ix0 + (ox_hi - ox_lo)];
                            for (o, xv) in out_row[ox_lo..ox_hi].iter_mut().zip(src) {
                                *o = *o + wv * *xv;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - pad;
                                out_row[ox] = out_row[ox] + wv * x_row[ix];
                            }
                        }
                    }
                }
            }
        }
        if let Some(b) = bias {
            let bv = b.data()[co];
            for o in out_plane.iter_mut() {
                *o = *o + bv;
            }
        }
    });
    Ok(out)
}

/// Gradient of conv2d w.r.t. its input; also the forward map of the
/// transposed convolution (used by the inverse DCT).
pub(crate) fn conv2d_grad_input<F: Scalar>(
    dy: &Tensor4<F>,
    w: &Tensor4<F>,
    x_dims: [usize; 4],
    stride: usize,
    pad: usize,
) -> Tensor4<F> {
    let [b_n, co_n, ho, wo] = dy.dims();
    let [wco, ci_n, k, _] = w.dims();
    debug_assert_eq!(wco, co_n);
    let [xb, xci, h, wd] = x_dims;
    debug_assert_eq!(xb, b_n);
    debug_assert_eq!(xci, ci_n);

    let mut dx = Tensor4::zeros(x_dims);
    let dyd = dy.data();
    let wdat = w.data();
    let plane = h * wd;

    for_each_plane(dx.data_mut(), plane, |p, dx_plane| {
        let b = p / ci_n;
        let ci = p % ci_n;
        for co in 0..co_n {
            let dy_chan = &dyd[(b * co_n + co) * ho * wo..][..ho * wo];
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(ho, h, ky, stride, pad);
                for kx in 0..k {
                    let wv = wdat[((co * ci_n + ci) * k + ky) * k + kx];
                    let (ox_lo, ox_hi) = valid_range(wo, wd, kx, stride, pad);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let dy_row = &dy_chan[oy * wo..][..wo];
                        let dx_row = &mut dx_plane[iy * wd..][..wd];
                        if stride == 1 {
                            let ix0 = ox_lo + kx - pad;
                            let dst = &mut dx_row[ix0..ix0 + (ox_hi - ox_lo)];
                            for (d, g) in dst.iter_mut().zip(&dy_row[ox_lo..ox_hi]) {
                                *d = *d + wv * *g;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - pad;
                                dx_row[ix] = dx_row[ix] + wv * dy_row[ox];
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

/// Dot product with a fixed 8-lane split. The lane shape never depends on
/// thread count or input, so results are reproducible while still
/// vectorizing.
#[inline]
pub(crate) fn dot_fixed<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [F::ZERO; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let ai = &a[i * 8..i * 8 + 8];
        let bi = &b[i * 8..i * 8 + 8];
        for l in 0..8 {
            lanes[l] = lanes[l] + ai[l] * bi[l];
        }
    }
    let mut tail = F::ZERO;
    for i in chunks * 8..a.len() {
        tail = tail + a[i] * b[i];
    }
    let s01 = lanes[0] + lanes[1];
    let s23 = lanes[2] + lanes[3];
    let s45 = lanes[4] + lanes[5];
    let s67 = lanes[6] + lanes[7];
    ((s01 + s23) + (s45 + s67)) + tail
}

pub(crate) fn conv2d_grad_weight<F: Scalar>(
    dy: &Tensor4<F>,
    x: &Tensor4<F>,
    w_dims: [usize; 4],
    stride: usize,
    pad: usize,
) -> Tensor4<F> {
    let [b_n, co_n, ho, wo] = dy.dims();
    let [_, ci_n, h, wd] = x.dims();
    let k = w_dims[2];

    let mut dw = Tensor4::zeros(w_dims);
    let dyd = dy.data();
    let xd = x.data();
    let plane = ci_n * k * k;

    for_each_plane(dw.data_mut(), plane, |co, dw_chan| {
        for ci in 0..ci_n {
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_range(ho, h, ky, stride, pad);
                for kx in 0..k {
                    let (ox_lo, ox_hi) = valid_range(wo, wd, kx, stride, pad);
                    let mut acc = F::ZERO;
                    if ox_lo < ox_hi {
                        for b in 0..b_n {
                            let dy_chan = &dyd[(b * co_n + co) * ho * wo..][..ho * wo];
                            let x_chan = &xd[(b * ci_n + ci) * h * wd..][..h * wd];
                            for oy in oy_lo..oy_hi {
                                let iy = oy * stride + ky - pad;
                                let dy_row = &dy_chan[oy * wo + ox_lo..oy * wo + ox_hi];
                                if stride == 1 {
                                    let ix0 = ox_lo + kx - pad;
                                    let x_row = &x_chan[iy * wd + ix0..][..ox_hi - ox_lo];
                                    acc = acc + dot_fixed(dy_row, x_row);
                                } else {
                                    for (i, g) in dy_row.iter().enumerate() {
                                        let ix = (ox_lo + i) * stride + kx - pad;
                                        acc = acc + *g * x_chan[iy * wd + ix];
                                    }
                                }
                            }
                        }
                    }
                    dw_chan[(ci * k + ky) * k + kx] = acc;
                }
            }
        }
    });
    dw
}

pub(crate) fn conv2d_grad_bias<F: Scalar>(dy: &Tensor4<F>) -> Tensor4<F> {
    let [b_n, co_n, ho, wo] = dy.dims();
    let mut db = Tensor4::zeros([1, co_n, 1, 1]);
    for co in 0..co_n {
        let mut acc = F::ZERO;
        for b in 0..b_n {
            for v in &dy.data()[(b * co_n + co) * ho * wo..][..ho * wo] {
                acc = acc + *v;
            }
        }
        db.data_mut()[co] = acc;
    }
    db
}

/// Output spatial extent of the transposed convolution.
pub(crate) fn conv_transpose_extent(extent: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (extent - 1) * stride + kernel - 2 * pad
}

/// Weight gradient for the transposed convolution: same contraction as
/// [`conv2d_grad_weight`] with the roles of the two activation tensors
/// swapped.
pub(crate) fn conv_transpose_grad_weight<F: Scalar>(
    y: &Tensor4<F>,
    d_out: &Tensor4<F>,
    w_dims: [usize; 4],
    stride: usize,
    pad: usize,
) -> Tensor4<F> {
    conv2d_grad_weight(y, d_out, w_dims, stride, pad)
}

pub(crate) fn relu_fwd<F: Scalar>(x: &Tensor4<F>) -> Tensor4<F> {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v < F::ZERO {
            *v = F::ZERO;
        }
    }
    out
}

pub(crate) fn relu_bwd<F: Scalar>(dy: &Tensor4<F>, x: &Tensor4<F>) -> Tensor4<F> {
    let mut dx = Tensor4::zeros(x.dims());
    for ((d, g), xv) in dx.data_mut().iter_mut().zip(dy.data()).zip(x.data()) {
        // Subgradient at exactly 0 is 0.
        if *xv > F::ZERO {
            *d = *g;
        }
    }
    dx
}

pub(crate) fn sigmoid_fwd<F: Scalar>(x: &Tensor4<F>) -> Tensor4<F> {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = sigmoid_scalar(*v);
    }
    out
}

#[inline]
pub(crate) fn sigmoid_scalar<F: Scalar>(x: F) -> F {
    // Branch on sign so exp never overflows.
    if x >= F::ZERO {
        F::ONE / (F::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::ONE + e)
    }
}

pub(crate) fn sigmoid_bwd<F: Scalar>(dy: &Tensor4<F>, s: &Tensor4<F>) -> Tensor4<F> {
    let mut dx = Tensor4::zeros(s.dims());
    for ((d, g), sv) in dx.data_mut().iter_mut().zip(dy.data()).zip(s.data()) {
        *d = *g * *sv * (F::ONE - *sv);
    }
    dx
}

pub(crate) fn add_fwd<F: Scalar>(x: &Tensor4<F>, y: &Tensor4<F>) -> Result<Tensor4<F>, TensorError> {
    if x.dims() != y.dims() {
        return Err(TensorError::ShapeMismatch {
            left: x.dims(),
            right: y.dims(),
        });
    }
    let mut out = x.clone();
    for (o, v) in out.data_mut().iter_mut().zip(y.data()) {
        *o = *o + *v;
    }
    Ok(out)
}

pub(crate) fn concat_channels_fwd<F: Scalar>(
    x: &Tensor4<F>,
    y: &Tensor4<F>,
) -> Result<Tensor4<F>, TensorError> {
    let [bx, cx, hx, wx] = x.dims();
    let [by, cy, hy, wy] = y.dims();
    if bx != by || hx != hy || wx != wy {
        return Err(TensorError::ShapeMismatch {
            left: x.dims(),
            right: y.dims(),
        });
    }
    let mut out = Tensor4::zeros([bx, cx + cy, hx, wx]);
    let plane = hx * wx;
    for b in 0..bx {
        let dst = &mut out.data_mut()[b * (cx + cy) * plane..][..(cx + cy) * plane];
        dst[..cx * plane].copy_from_slice(&x.data()[b * cx * plane..][..cx * plane]);
        dst[cx * plane..].copy_from_slice(&y.data()[b * cy * plane..][..cy * plane]);
    }
    Ok(out)
}

pub(crate) fn concat_channels_bwd<F: Scalar>(
    dy: &Tensor4<F>,
    cx: usize,
    cy: usize,
) -> (Tensor4<F>, Tensor4<F>) {
    let [b_n, _, h, w] = dy.dims();
    let plane = h * w;
    let mut dx = Tensor4::zeros([b_n, cx, h, w]);
    let mut dyy = Tensor4::zeros([b_n, cy, h, w]);
    for b in 0..b_n {
        let src = &dy.data()[b * (cx + cy) * plane..][..(cx + cy) * plane];
        dx.data_mut()[b * cx * plane..][..cx * plane].copy_from_slice(&src[..cx * plane]);
        dyy.data_mut()[b * cy * plane..][..cy * plane].copy_from_slice(&src[cx * plane..]);
    }
    (dx, dyy)
}

pub(crate) fn channel_scale_fwd<F: Scalar>(
    x: &Tensor4<F>,
    w: &Tensor4<F>,
) -> Result<Tensor4<F>, TensorError> {
    let [_, c_n, h, wd] = x.dims();
    if w.dims() != [1, c_n, 1, 1] {
        return Err(TensorError::WeightCount {
            channels: c_n,
            weights: w.numel(),
        });
    }
    let mut out = x.clone();
    let plane = h * wd;
    for (p, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let wv = w.data()[p % c_n];
        for v in chunk {
            *v = *v * wv;
        }
    }
    Ok(out)
}

pub(crate) fn channel_scale_bwd<F: Scalar>(
    dy: &Tensor4<F>,
    x: &Tensor4<F>,
    w: &Tensor4<F>,
) -> (Tensor4<F>, Tensor4<F>) {
    let [b_n, c_n, h, wd] = x.dims();
    let plane = h * wd;
    let mut dx = Tensor4::zeros(x.dims());
    for (p, chunk) in dx.data_mut().chunks_mut(plane).enumerate() {
        let wv = w.data()[p % c_n];
        let g = &dy.data()[p * plane..][..plane];
        for (d, gv) in chunk.iter_mut().zip(g) {
            *d = *gv * wv;
        }
    }
    let mut dw = Tensor4::zeros([1, c_n, 1, 1]);
    for c in 0..c_n {
        let mut acc = F::ZERO;
        for b in 0..b_n {
            let base = (b * c_n + c) * plane;
            let g = &dy.data()[base..][..plane];
            let xv = &x.data()[base..][..plane];
            for (gv, x_) in g.iter().zip(xv) {
                acc = acc + *gv * *x_;
            }
        }
        dw.data_mut()[c] = acc;
    }
    (dx, dw)
}

/// Per-batch channel gating: `out[b,c,h,w] = x[b,c,h,w] * s[b,c,0,0]`.
/// This is the batch-dependent cousin of `channel_scale`, needed where the
/// gate itself is computed from the input.
pub(crate) fn channel_gate_fwd<F: Scalar>(
    x: &Tensor4<F>,
    s: &Tensor4<F>,
) -> Result<Tensor4<F>, TensorError> {
    let [b_n, c_n, h, w] = x.dims();
    if s.dims() != [b_n, c_n, 1, 1] {
        return Err(TensorError::ShapeMismatch {
            left: s.dims(),
            right: [b_n, c_n, 1, 1],
        });
    }
    let mut out = x.clone();
    let plane = h * w;
    for (p, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let sv = s.data()[p];
        for v in chunk {
            *v = *v * sv;
        }
    }
    Ok(out)
}

pub(crate) fn channel_gate_bwd<F: Scalar>(
    dy: &Tensor4<F>,
    x: &Tensor4<F>,
    s: &Tensor4<F>,
) -> (Tensor4<F>, Tensor4<F>) {
    let [b_n, c_n, h, w] = x.dims();
    let plane = h * w;
    let mut dx = Tensor4::zeros(x.dims());
    let mut ds = Tensor4::zeros([b_n, c_n, 1, 1]);
    for p in 0..b_n * c_n {
        let sv = s.data()[p];
        let g = &dy.data()[p * plane..][..plane];
        let xv = &x.data()[p * plane..][..plane];
        let dxp = &mut dx.data_mut()[p * plane..][..plane];
        let mut acc = F::ZERO;
        for i in 0..plane {
            dxp[i] = g[i] * sv;
            acc = acc + g[i] * xv[i];
        }
        ds.data_mut()[p] = acc;
    }
    (dx, ds)
}

pub(crate) fn global_avg_pool_fwd<F: Scalar>(x: &Tensor4<F>) -> Tensor4<F> {
    let [b_n, c_n, h, w] = x.dims();
    let plane = h * w;
    let inv = F::from_f64(1.0 / plane as f64);
    let mut out = Tensor4::zeros([b_n, c_n, 1, 1]);
    for p in 0..b_n * c_n {
        let mut acc = F::ZERO;
        for v in &x.data()[p * plane..][..plane] {
            acc = acc + *v;
        }
        out.data_mut()[p] = acc * inv;
    }
    out
}

pub(crate) fn global_avg_pool_bwd<F: Scalar>(dy: &Tensor4<F>, x_dims: [usize; 4]) -> Tensor4<F> {
    let [_, _, h, w] = x_dims;
    let plane = h * w;
    let inv = F::from_f64(1.0 / plane as f64);
    let mut dx = Tensor4::zeros(x_dims);
    for (p, chunk) in dx.data_mut().chunks_mut(plane).enumerate() {
        let g = dy.data()[p] * inv;
        for v in chunk {
            *v = g;
        }
    }
    dx
}

pub(crate) fn dense_fwd<F: Scalar>(
    v: &Tensor4<F>,
    w: &Tensor4<F>,
    b: &Tensor4<F>,
) -> Result<Tensor4<F>, TensorError> {
    let [b_n, c_n, h, wd] = v.dims();
    let [co_n, wc, wh, ww] = w.dims();
    let bad = h != 1 || wd != 1 || wh != 1 || ww != 1 || wc != c_n || b.dims() != [1, co_n, 1, 1];
    if bad {
        return Err(TensorError::DenseShape {
            input: v.dims(),
            matrix: w.dims(),
            bias: b.dims(),
        });
    }
    let mut out = Tensor4::zeros([b_n, co_n, 1, 1]);
    for bi in 0..b_n {
        let vin = &v.data()[bi * c_n..][..c_n];
        for co in 0..co_n {
            let row = &w.data()[co * c_n..][..c_n];
            let mut acc = F::ZERO;
            for (wv, xv) in row.iter().zip(vin) {
                acc = acc + *wv * *xv;
            }
            out.data_mut()[bi * co_n + co] = acc + b.data()[co];
        }
    }
    Ok(out)
}

pub(crate) fn dense_bwd<F: Scalar>(
    dy: &Tensor4<F>,
    v: &Tensor4<F>,
    w: &Tensor4<F>,
) -> (Tensor4<F>, Tensor4<F>, Tensor4<F>) {
    let [b_n, c_n, _, _] = v.dims();
    let co_n = w.dims()[0];
    let mut dv = Tensor4::zeros(v.dims());
    let mut dw = Tensor4::zeros(w.dims());
    let mut db = Tensor4::zeros([1, co_n, 1, 1]);
    for bi in 0..b_n {
        for co in 0..co_n {
            let g = dy.data()[bi * co_n + co];
            let row = &w.data()[co * c_n..][..c_n];
            let dvrow = &mut dv.data_mut()[bi * c_n..][..c_n];
            for (d, wv) in dvrow.iter_mut().zip(row) {
                *d = *d + g * *wv;
            }
        }
    }
    for co in 0..co_n {
        let mut bacc = F::ZERO;
        for bi in 0..b_n {
            let g = dy.data()[bi * co_n + co];
            bacc = bacc + g;
            let vin = &v.data()[bi * c_n..][..c_n];
            let dwrow = &mut dw.data_mut()[co * c_n..][..c_n];
            for (d, xv) in dwrow.iter_mut().zip(vin) {
                *d = *d + g * *xv;
            }
        }
        db.data_mut()[co] = bacc;
    }
    (dv, dw, db)
}

/// Space-to-depth: output channel `c*r^2 + dy*r + dx` holds input position
/// `(y*r + dy, x*r + dx)`.
pub(crate) fn pixel_unshuffle_fwd<F: Scalar>(
    x: &Tensor4<F>,
    r: usize,
) -> Result<Tensor4<F>, TensorError> {
    let [b_n, c_n, h, w] = x.dims();
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(TensorError::ShuffleDivisibility {
            dims: x.dims(),
            factor: r,
        });
    }
    let (ho, wo) = (h / r, w / r);
    let mut out = Tensor4::zeros([b_n, c_n * r * r, ho, wo]);
    for b in 0..b_n {
        for c in 0..c_n {
            for dy in 0..r {
                for dx in 0..r {
                    let oc = c * r * r + dy * r + dx;
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let v = x.at(b, c, oy * r + dy, ox * r + dx);
                            out.set(b, oc, oy, ox, v);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Depth-to-space; exact inverse of [`pixel_unshuffle_fwd`].
pub(crate) fn pixel_shuffle_fwd<F: Scalar>(
    x: &Tensor4<F>,
    r: usize,
) -> Result<Tensor4<F>, TensorError> {
    let [b_n, c_n, h, w] = x.dims();
    if r == 0 || c_n % (r * r) != 0 {
        return Err(TensorError::ShuffleDivisibility {
            dims: x.dims(),
            factor: r,
        });
    }
    let co = c_n / (r * r);
    let mut out = Tensor4::zeros([b_n, co, h * r, w * r]);
    for b in 0..b_n {
        for c in 0..co {
            for dy in 0..r {
                for dx in 0..r {
                    let ic = c * r * r + dy * r + dx;
                    for iy in 0..h {
                        for ix in 0..w {
                            let v = x.at(b, ic, iy, ix);
                            out.set(b, c, iy * r + dy, ix * r + dx, v);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn avg_pool2_fwd<F: Scalar>(x: &Tensor4<F>) -> Result<Tensor4<F>, TensorError> {
    let [b_n, c_n, h, w] = x.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::OddSpatial { dims: x.dims() });
    }
    let quarter = F::from_f64(0.25);
    let mut out = Tensor4::zeros([b_n, c_n, h / 2, w / 2]);
    for p in 0..b_n * c_n {
        let src = &x.data()[p * h * w..][..h * w];
        let dst = &mut out.data_mut()[p * (h / 2) * (w / 2)..][..(h / 2) * (w / 2)];
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let y0 = 2 * oy;
                let x0 = 2 * ox;
                let s = ((src[y0 * w + x0] + src[y0 * w + x0 + 1])
                    + (src[(y0 + 1) * w + x0] + src[(y0 + 1) * w + x0 + 1]))
                    * quarter;
                dst[oy * (w / 2) + ox] = s;
            }
        }
    }
    Ok(out)
}

pub(crate) fn avg_pool2_bwd<F: Scalar>(dy: &Tensor4<F>, x_dims: [usize; 4]) -> Tensor4<F> {
    let [b_n, c_n, h, w] = x_dims;
    let quarter = F::from_f64(0.25);
    let mut dx = Tensor4::zeros(x_dims);
    for p in 0..b_n * c_n {
        let g = &dy.data()[p * (h / 2) * (w / 2)..][..(h / 2) * (w / 2)];
        let dst = &mut dx.data_mut()[p * h * w..][..h * w];
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let gv = g[oy * (w / 2) + ox] * quarter;
                let y0 = 2 * oy;
                let x0 = 2 * ox;
                dst[y0 * w + x0] = gv;
                dst[y0 * w + x0 + 1] = gv;
                dst[(y0 + 1) * w + x0] = gv;
                dst[(y0 + 1) * w + x0 + 1] = gv;
            }
        }
    }
    dx
}

pub(crate) fn sum_fwd<F: Scalar>(x: &Tensor4<F>) -> Tensor4<F> {
    let mut acc = F::ZERO;
    for v in x.data() {
        acc = acc + *v;
    }
    Tensor4::scalar(acc)
}

/// Mean squared error. The reduction runs in f64 regardless of element type
/// so the loss value is well conditioned on large batches; the gradient is
/// elementwise and stays in the working precision.
pub(crate) fn mse_fwd<F: Scalar>(
    pred: &Tensor4<F>,
    target: &Tensor4<F>,
) -> Result<Tensor4<F>, TensorError> {
    if pred.dims() != target.dims() {
        return Err(TensorError::ShapeMismatch {
            left: pred.dims(),
            right: target.dims(),
        });
    }
    let mut acc = 0.0f64;
    for (p, t) in pred.data().iter().zip(target.data()) {
        let d = p.to_f64() - t.to_f64();
        acc += d * d;
    }
    Ok(Tensor4::scalar(F::from_f64(acc / pred.numel() as f64)))
}

pub(crate) fn mse_bwd<F: Scalar>(
    g: F,
    pred: &Tensor4<F>,
    target: &Tensor4<F>,
) -> (Tensor4<F>, Tensor4<F>) {
    let scale = g * F::from_f64(2.0 / pred.numel() as f64);
    let mut dp = Tensor4::zeros(pred.dims());
    let mut dt = Tensor4::zeros(pred.dims());
    for ((dpv, dtv), (p, t)) in dp
        .data_mut()
        .iter_mut()
        .zip(dt.data_mut().iter_mut())
        .zip(pred.data().iter().zip(target.data()))
    {
        let d = scale * (*p - *t);
        *dpv = d;
        *dtv = -d;
    }
    (dp, dt)
}
