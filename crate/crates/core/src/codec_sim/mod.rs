//! Desk-scale stand-in for an intra codec pipeline: RGB/YUV conversion with
//! 4:2:0 subsampling, and block-DCT quantization degradation driven by a QP.
//!
//! The degradation model keeps the one property the rest of the pipeline
//! depends on: quantization error in block DCT coefficients, growing with
//! the quantizer step.

mod image_io;

pub use image_io::{
    load_pgm, load_ppm, load_yuv420, save_pgm, save_ppm, save_yuv420, RgbImage,
};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::freq::{dct_plane, idct_plane, DctKernelBank, DCT_BLOCK};
use crate::tensor::{Scalar, Tensor4};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("dimensions {width}x{height} must be even")]
    OddDimensions { width: usize, height: usize },
    #[error("qp {qp} out of range [0, 51]")]
    QpOutOfRange { qp: u8 },
    #[error("malformed header: {reason}")]
    BadHeader { reason: String },
    #[error("unsupported format: {reason}")]
    Unsupported { reason: String },
    #[error("size mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("planes do not form a 4:2:0 frame: luma {luma:?}, chroma {chroma:?}")]
    NotYuv420 {
        luma: (usize, usize),
        chroma: (usize, usize),
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One 8-bit sample plane, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, SimError> {
        if data.len() != width * height {
            return Err(SimError::SizeMismatch {
                expected: width * height,
                found: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Edge-replicate to the next multiple of `m` in each direction.
    pub fn pad_to_multiple(&self, m: usize) -> Plane {
        let w = self.width.div_ceil(m) * m;
        let h = self.height.div_ceil(m) * m;
        if w == self.width && h == self.height {
            return self.clone();
        }
        let mut out = Plane::filled(w, h, 0);
        for y in 0..h {
            let sy = y.min(self.height - 1);
            for x in 0..w {
                let sx = x.min(self.width - 1);
                out.set(x, y, self.get(sx, sy));
            }
        }
        out
    }

    pub fn crop(&self, width: usize, height: usize) -> Plane {
        assert!(width <= self.width && height <= self.height);
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            data.extend_from_slice(&self.data[y * self.width..y * self.width + width]);
        }
        Plane {
            width,
            height,
            data,
        }
    }

    pub fn crop_at(&self, x0: usize, y0: usize, width: usize, height: usize) -> Plane {
        assert!(x0 + width <= self.width && y0 + height <= self.height);
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let row = (y0 + y) * self.width + x0;
            data.extend_from_slice(&self.data[row..row + width]);
        }
        Plane {
            width,
            height,
            data,
        }
    }

    /// As a `(1, 1, H, W)` tensor of raw sample values in `[0, 255]`.
    pub fn to_tensor_raw<F: Scalar>(&self) -> Tensor4<F> {
        let data = self.data.iter().map(|v| F::from_f64(*v as f64)).collect();
        Tensor4::new([1, 1, self.height, self.width], data).expect("plane dims consistent")
    }

    /// As a `(1, 1, H, W)` tensor normalized to `[0, 1]`.
    pub fn to_tensor_norm<F: Scalar>(&self) -> Tensor4<F> {
        let data = self
            .data
            .iter()
            .map(|v| F::from_f64(*v as f64 / 255.0))
            .collect();
        Tensor4::new([1, 1, self.height, self.width], data).expect("plane dims consistent")
    }

    /// Quantize a normalized `(1, 1, H, W)` tensor back to 8-bit samples
    /// (scale by 255, round, clamp).
    pub fn from_tensor_norm<F: Scalar>(t: &Tensor4<F>) -> Plane {
        let [_, c, h, w] = t.dims();
        assert_eq!(c, 1, "expected single-channel tensor");
        let data = t
            .data()
            .iter()
            .map(|v| (v.to_f64() * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        Plane {
            width: w,
            height: h,
            data,
        }
    }
}

/// A 4:2:0 frame: full-resolution luma, half-resolution chroma planes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Yuv420Frame {
    pub y: Plane,
    pub u: Plane,
    pub v: Plane,
}

impl Yuv420Frame {
    pub fn new(y: Plane, u: Plane, v: Plane) -> Result<Self, SimError> {
        let ok = y.width % 2 == 0
            && y.height % 2 == 0
            && u.width == y.width / 2
            && u.height == y.height / 2
            && v.width == u.width
            && v.height == u.height;
        if !ok {
            return Err(SimError::NotYuv420 {
                luma: (y.width, y.height),
                chroma: (u.width, u.height),
            });
        }
        Ok(Self { y, u, v })
    }

    pub fn width(&self) -> usize {
        self.y.width
    }

    pub fn height(&self) -> usize {
        self.y.height
    }
}

/// RGB -> YUV conversion matrix (rows Y, U, V) and per-row offsets.
pub const RGB_TO_YUV: [[f64; 3]; 3] = [
    [0.2126, 0.7152, 0.0722],
    [-0.1146, -0.3854, 0.5000],
    [0.5000, -0.4542, -0.0458],
];
pub const YUV_OFFSET: [f64; 3] = [16.0, 128.0, 128.0];

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let cof = |r: usize, c: usize| {
        let (r1, r2) = match r {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let (c1, c2) = match c {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let minor = m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1];
        if (r + c) % 2 == 0 {
            minor
        } else {
            -minor
        }
    };
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            // adjugate transposes the cofactor matrix
            *v = cof(c, r) / det;
        }
    }
    inv
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Convert an RGB image to a 4:2:0 frame: the printed matrix and offsets
/// applied per pixel, output clamped to `[0, 255]`, chroma downsampled by
/// 2x2 mean before rounding.
pub fn rgb_to_yuv420(rgb: &RgbImage) -> Result<Yuv420Frame, SimError> {
    let (w, h) = (rgb.width(), rgb.height());
    if w % 2 != 0 || h % 2 != 0 {
        return Err(SimError::OddDimensions {
            width: w,
            height: h,
        });
    }
    let mut y_plane = Plane::filled(w, h, 0);
    let mut u_full = vec![0.0f64; w * h];
    let mut v_full = vec![0.0f64; w * h];
    for py in 0..h {
        for px in 0..w {
            let (r, g, b) = rgb.pixel(px, py);
            let (r, g, b) = (r as f64, g as f64, b as f64);
            let yv = RGB_TO_YUV[0][0] * r + RGB_TO_YUV[0][1] * g + RGB_TO_YUV[0][2] * b
                + YUV_OFFSET[0];
            let uv = RGB_TO_YUV[1][0] * r + RGB_TO_YUV[1][1] * g + RGB_TO_YUV[1][2] * b
                + YUV_OFFSET[1];
            let vv = RGB_TO_YUV[2][0] * r + RGB_TO_YUV[2][1] * g + RGB_TO_YUV[2][2] * b
                + YUV_OFFSET[2];
            y_plane.set(px, py, clamp_u8(yv));
            u_full[py * w + px] = uv;
            v_full[py * w + px] = vv;
        }
    }
    let mut u_plane = Plane::filled(w / 2, h / 2, 0);
    let mut v_plane = Plane::filled(w / 2, h / 2, 0);
    for cy in 0..h / 2 {
        for cx in 0..w / 2 {
            let mut su = 0.0;
            let mut sv = 0.0;
            for dy in 0..2 {
                for dx in 0..2 {
                    su += u_full[(2 * cy + dy) * w + 2 * cx + dx];
                    sv += v_full[(2 * cy + dy) * w + 2 * cx + dx];
                }
            }
            u_plane.set(cx, cy, clamp_u8(su / 4.0));
            v_plane.set(cx, cy, clamp_u8(sv / 4.0));
        }
    }
    Yuv420Frame::new(y_plane, u_plane, v_plane)
}

/// Inverse conversion with nearest-neighbour chroma upsampling.
pub fn yuv420_to_rgb(frame: &Yuv420Frame) -> RgbImage {
    let inv = invert3(&RGB_TO_YUV);
    let (w, h) = (frame.width(), frame.height());
    let mut out = RgbImage::filled(w, h, 0);
    for py in 0..h {
        for px in 0..w {
            let yv = frame.y.get(px, py) as f64 - YUV_OFFSET[0];
            let uv = frame.u.get(px / 2, py / 2) as f64 - YUV_OFFSET[1];
            let vv = frame.v.get(px / 2, py / 2) as f64 - YUV_OFFSET[2];
            let r = inv[0][0] * yv + inv[0][1] * uv + inv[0][2] * vv;
            let g = inv[1][0] * yv + inv[1][1] * uv + inv[1][2] * vv;
            let b = inv[2][0] * yv + inv[2][1] * uv + inv[2][2] * vv;
            out.set_pixel(px, py, clamp_u8(r), clamp_u8(g), clamp_u8(b));
        }
    }
    out
}

/// Quantization parameter and its derived step size. The step doubles every
/// six QP units and equals 1 at QP 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QpConfig {
    qp: u8,
}

impl QpConfig {
    pub fn new(qp: u8) -> Result<Self, SimError> {
        if qp > 51 {
            return Err(SimError::QpOutOfRange { qp });
        }
        Ok(Self { qp })
    }

    pub fn qp(&self) -> u8 {
        self.qp
    }

    pub fn qstep(&self) -> f64 {
        let e = self.qp as i32 - 4;
        if e.rem_euclid(6) == 0 {
            // exact powers of two on the 6-QP ladder
            2f64.powi(e / 6)
        } else {
            2f64.powf(e as f64 / 6.0)
        }
    }
}

/// Per-plane statistics of one degradation pass, for rate accounting.
#[derive(Debug, Clone, Default)]
pub struct DegradeStats {
    /// Count of nonzero quantized coefficients.
    pub nonzero: u64,
    /// Histogram of nonzero quantized coefficient levels.
    pub levels: BTreeMap<i64, u64>,
}

impl DegradeStats {
    pub fn merge(&mut self, other: &DegradeStats) {
        self.nonzero += other.nonzero;
        for (level, count) in &other.levels {
            *self.levels.entry(*level).or_insert(0) += count;
        }
    }

    /// Empirical entropy of the nonzero-level distribution, in bits/symbol.
    pub fn entropy_bits(&self) -> f64 {
        if self.nonzero == 0 {
            return 0.0;
        }
        let total = self.nonzero as f64;
        self.levels
            .values()
            .map(|c| {
                let p = *c as f64 / total;
                -p * p.log2()
            })
            .sum()
    }
}

fn round_half_away(v: f64) -> f64 {
    // f64::round rounds half away from zero
    v.round()
}

/// Degrade one plane through the block-DCT quantizer: pad to 8 by edge
/// replication, transform, quantize coefficients to the nearest multiple of
/// `qstep`, inverse transform, clamp, crop.
pub fn degrade_plane(p: &Plane, cfg: QpConfig) -> Plane {
    degrade_plane_stats(p, cfg).0
}

pub fn degrade_plane_stats(p: &Plane, cfg: QpConfig) -> (Plane, DegradeStats) {
    let padded = p.pad_to_multiple(DCT_BLOCK);
    let bank = DctKernelBank::<f64>::new(DCT_BLOCK).expect("fixed block size");
    let x = padded.to_tensor_raw::<f64>();
    let mut coeffs = dct_plane(&x, &bank).expect("padded plane is block aligned");
    let qstep = cfg.qstep();
    let mut stats = DegradeStats::default();
    for c in coeffs.data_mut() {
        let level = round_half_away(*c / qstep);
        if level != 0.0 {
            stats.nonzero += 1;
            *stats.levels.entry(level as i64).or_insert(0) += 1;
        }
        *c = level * qstep;
    }
    let back = idct_plane(&coeffs, &bank).expect("coefficient tensor is well formed");
    let mut out = Plane::filled(padded.width, padded.height, 0);
    for (dst, src) in out.data.iter_mut().zip(back.data()) {
        *dst = clamp_u8(*src);
    }
    (out.crop(p.width, p.height), stats)
}

/// Deterministic synthetic test image: smooth gradients, waves across
/// several scales, and hard-edged colour patches, distinct per channel so
/// chroma carries real structure for the quantizer to damage.
pub fn synthetic_rgb(width: usize, height: usize, seed: u64) -> RgbImage {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    // waves per channel: three low-frequency, two mid-frequency
    let mut waves = [[(0.0f64, 0.0f64, 0.0f64, 0.0f64); 5]; 3];
    for ch in waves.iter_mut() {
        for (i, w) in ch.iter_mut().enumerate() {
            let (k_lo, k_hi, amp_lo, amp_hi) = if i < 3 {
                (0.3, 3.0, 12.0, 35.0)
            } else {
                (4.0, 13.0, 4.0, 14.0)
            };
            *w = (
                rng.gen_range(k_lo..k_hi),
                rng.gen_range(k_lo..k_hi),
                rng.gen_range(0.0..tau),
                rng.gen_range(amp_lo..amp_hi),
            );
        }
    }
    let gdir = (rng.gen_range(-60.0..60.0f64), rng.gen_range(-60.0..60.0f64));
    // hard-edged rectangles with per-channel colour offsets
    let n_rects = 6;
    let mut rects = Vec::with_capacity(n_rects);
    for _ in 0..n_rects {
        let x0 = rng.gen_range(0.0..0.85f64);
        let y0 = rng.gen_range(0.0..0.85f64);
        rects.push((
            x0,
            y0,
            x0 + rng.gen_range(0.08..0.5),
            y0 + rng.gen_range(0.08..0.5),
            [
                rng.gen_range(-45.0..45.0f64),
                rng.gen_range(-45.0..45.0),
                rng.gen_range(-45.0..45.0),
            ],
        ));
    }
    let mut img = RgbImage::filled(width, height, 0);
    for y in 0..height {
        for x in 0..width {
            let fx = x as f64 / width as f64;
            let fy = y as f64 / height as f64;
            let grad = gdir.0 * fx + gdir.1 * fy;
            let mut rgb = [0u8; 3];
            for (c, chan) in waves.iter().enumerate() {
                let mut v = 128.0 + grad;
                for (kx, ky, phase, amp) in chan {
                    v += amp * (tau * (kx * fx + ky * fy) + phase).sin();
                }
                for (x0, y0, x1, y1, offs) in &rects {
                    if fx >= *x0 && fx < *x1 && fy >= *y0 && fy < *y1 {
                        v += offs[c];
                    }
                }
                v += rng.gen_range(-4.0..4.0);
                rgb[c] = clamp_u8(v);
            }
            img.set_pixel(x, y, rgb[0], rgb[1], rgb[2]);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mse(a: &Plane, b: &Plane) -> f64 {
        let n = a.data().len() as f64;
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| {
                let d = *x as f64 - *y as f64;
                d * d
            })
            .sum::<f64>()
            / n
    }

    fn psnr(a: &Plane, b: &Plane) -> f64 {
        10.0 * (255.0f64 * 255.0 / mse(a, b)).log10()
    }

    #[test]
    fn black_maps_to_printed_offsets() {
        let img = RgbImage::filled(2, 2, 0);
        let yuv = rgb_to_yuv420(&img).unwrap();
        assert_eq!(yuv.y.data(), &[16; 4]);
        assert_eq!(yuv.u.data(), &[128]);
        assert_eq!(yuv.v.data(), &[128]);
    }

    #[test]
    fn mid_gray_maps_to_144_128_128() {
        let img = RgbImage::filled(2, 2, 128);
        let yuv = rgb_to_yuv420(&img).unwrap();
        assert_eq!(yuv.y.data(), &[144; 4]);
        assert_eq!(yuv.u.data(), &[128]);
        assert_eq!(yuv.v.data(), &[128]);
    }

    #[test]
    fn chroma_rows_sum_to_zero() {
        for row in [RGB_TO_YUV[1], RGB_TO_YUV[2]] {
            let s: f64 = row.iter().sum();
            assert!(s.abs() < 1e-4, "row {row:?} sums to {s}");
        }
    }

    #[test]
    fn rejects_odd_dimensions() {
        let img = RgbImage::filled(3, 2, 10);
        assert!(matches!(
            rgb_to_yuv420(&img).unwrap_err(),
            SimError::OddDimensions { width: 3, height: 2 }
        ));
    }

    #[test]
    fn mid_range_round_trip_error_is_small() {
        // constant-colour sweep over [32, 192]^3
        let mut max_err = 0i32;
        for r in (32..=192).step_by(32) {
            for g in (32..=192).step_by(32) {
                for b in (32..=192).step_by(32) {
                    let mut img = RgbImage::filled(2, 2, 0);
                    for y in 0..2 {
                        for x in 0..2 {
                            img.set_pixel(x, y, r, g, b);
                        }
                    }
                    let back = yuv420_to_rgb(&rgb_to_yuv420(&img).unwrap());
                    let (r2, g2, b2) = back.pixel(0, 0);
                    max_err = max_err
                        .max((r as i32 - r2 as i32).abs())
                        .max((g as i32 - g2 as i32).abs())
                        .max((b as i32 - b2 as i32).abs());
                }
            }
        }
        assert!(max_err <= 4, "round trip error {max_err}");
    }

    #[test]
    fn qstep_ladder() {
        assert_eq!(QpConfig::new(4).unwrap().qstep(), 1.0);
        assert_eq!(QpConfig::new(22).unwrap().qstep(), 8.0);
        assert_eq!(QpConfig::new(10).unwrap().qstep(), 2.0);
        assert!(QpConfig::new(52).is_err());
        let q27 = QpConfig::new(27).unwrap().qstep();
        let q33 = QpConfig::new(33).unwrap().qstep();
        assert!((q33 / q27 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unit_qstep_is_nearly_lossless() {
        let img = synthetic_rgb(32, 32, 5);
        let yuv = rgb_to_yuv420(&img).unwrap();
        let deg = degrade_plane(&yuv.y, QpConfig::new(4).unwrap());
        let max_err = yuv
            .y
            .data()
            .iter()
            .zip(deg.data())
            .map(|(a, b)| (*a as i32 - *b as i32).abs())
            .max()
            .unwrap();
        assert!(max_err <= 1, "qp4 max error {max_err}");
    }

    #[test]
    fn degradation_psnr_decreases_with_qp() {
        let img = synthetic_rgb(64, 64, 6);
        let yuv = rgb_to_yuv420(&img).unwrap();
        let mut last = f64::INFINITY;
        for qp in [22u8, 27, 32, 37] {
            let deg = degrade_plane(&yuv.y, QpConfig::new(qp).unwrap());
            let p = psnr(&yuv.y, &deg);
            assert!(p < last, "qp {qp}: psnr {p} did not drop below {last}");
            last = p;
        }
    }

    #[test]
    fn degradation_is_nearly_idempotent() {
        let img = synthetic_rgb(48, 48, 7);
        let yuv = rgb_to_yuv420(&img).unwrap();
        let cfg = QpConfig::new(32).unwrap();
        let once = degrade_plane(&yuv.y, cfg);
        let twice = degrade_plane(&once, cfg);
        let delta = (psnr(&yuv.y, &once) - psnr(&yuv.y, &twice)).abs();
        assert!(delta < 0.5, "idempotence psnr delta {delta}");
    }

    #[test]
    fn error_energy_grows_with_qstep() {
        let img = synthetic_rgb(40, 40, 8);
        let yuv = rgb_to_yuv420(&img).unwrap();
        let mut last = -1.0;
        for qp in [10u8, 22, 30, 38, 46] {
            let deg = degrade_plane(&yuv.u, QpConfig::new(qp).unwrap());
            let e = mse(&yuv.u, &deg);
            assert!(e >= last, "qp {qp}: error energy fell");
            last = e;
        }
    }

    #[test]
    fn degrades_unaligned_planes_via_padding() {
        let img = synthetic_rgb(26, 18, 9);
        let yuv = rgb_to_yuv420(&img).unwrap();
        let deg = degrade_plane(&yuv.u, QpConfig::new(27).unwrap());
        assert_eq!((deg.width(), deg.height()), (13, 9));
    }

    #[test]
    fn stats_count_nonzero_coefficients() {
        let img = synthetic_rgb(32, 32, 10);
        let yuv = rgb_to_yuv420(&img).unwrap();
        let (_, lo) = degrade_plane_stats(&yuv.y, QpConfig::new(22).unwrap());
        let (_, hi) = degrade_plane_stats(&yuv.y, QpConfig::new(37).unwrap());
        assert!(lo.nonzero > hi.nonzero, "{} vs {}", lo.nonzero, hi.nonzero);
        assert!(lo.entropy_bits() > 0.0);
        let total: u64 = lo.levels.values().sum();
        assert_eq!(total, lo.nonzero);
    }

    #[test]
    fn pad_and_crop_round_trip() {
        let img = synthetic_rgb(22, 14, 11);
        let yuv = rgb_to_yuv420(&img).unwrap();
        let padded = yuv.u.pad_to_multiple(8);
        assert_eq!((padded.width(), padded.height()), (16, 8));
        assert_eq!(padded.crop(11, 7), yuv.u);
        // padded border replicates the edge
        assert_eq!(padded.get(15, 0), yuv.u.get(10, 0));
    }
}
