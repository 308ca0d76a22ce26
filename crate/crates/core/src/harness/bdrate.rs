//! Bjøntegaard rate delta between two rate-distortion curves.
//!
//! Cubic least-squares fit of log10(rate) as a function of PSNR per curve,
//! integrated over the common PSNR interval with 1000-interval composite
//! Simpson. The closed-form polynomial integral is evaluated alongside and
//! must agree to 1e-6, which pins down integration bugs early.

use super::HarnessError;

/// One rate-distortion measurement: total bits (content proxy plus side
/// information) against quality in dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdPoint {
    pub rate_bits: f64,
    pub psnr: f64,
}

/// A rate-distortion curve, one point per QP, strictly monotone: more bits,
/// better quality.
#[derive(Debug, Clone)]
pub struct RdCurve {
    points: Vec<RdPoint>,
}

impl RdCurve {
    /// Sorts by PSNR and validates positivity and strict monotonicity.
    pub fn new(mut points: Vec<RdPoint>) -> Result<Self, HarnessError> {
        if points.is_empty() {
            return Err(HarnessError::BadCurve {
                reason: "curve has no points".into(),
            });
        }
        for p in &points {
            if !(p.rate_bits > 0.0) || !p.psnr.is_finite() {
                return Err(HarnessError::BadCurve {
                    reason: format!("invalid point (rate {}, psnr {})", p.rate_bits, p.psnr),
                });
            }
        }
        points.sort_by(|a, b| a.psnr.total_cmp(&b.psnr));
        for w in points.windows(2) {
            if w[1].psnr <= w[0].psnr || w[1].rate_bits <= w[0].rate_bits {
                return Err(HarnessError::BadCurve {
                    reason: format!(
                        "curve not strictly monotone near psnr {:.4}",
                        w[1].psnr
                    ),
                });
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[RdPoint] {
        &self.points
    }

    fn psnr_range(&self) -> (f64, f64) {
        (
            self.points.first().expect("non-empty").psnr,
            self.points.last().expect("non-empty").psnr,
        )
    }
}

/// Least-squares cubic through (x, y), via the normal equations.
fn polyfit3(xs: &[f64], ys: &[f64]) -> [f64; 4] {
    let mut ata = [[0.0f64; 4]; 4];
    let mut atb = [0.0f64; 4];
    for (&x, &y) in xs.iter().zip(ys) {
        let powers = [1.0, x, x * x, x * x * x];
        for i in 0..4 {
            for j in 0..4 {
                ata[i][j] += powers[i] * powers[j];
            }
            atb[i] += powers[i] * y;
        }
    }
    solve4(ata, atb)
}

/// Gaussian elimination with partial pivoting on a 4x4 system.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> [f64; 4] {
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        a.swap(col, pivot);
        b.swap(col, pivot);
        let d = a[col][col];
        for row in col + 1..4 {
            let f = a[row][col] / d;
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 4];
    for row in (0..4).rev() {
        let mut acc = b[row];
        for k in row + 1..4 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

fn poly_eval(c: &[f64; 4], x: f64) -> f64 {
    ((c[3] * x + c[2]) * x + c[1]) * x + c[0]
}

fn poly_integral(c: &[f64; 4], a: f64, b: f64) -> f64 {
    let anti = |x: f64| (((c[3] / 4.0 * x + c[2] / 3.0) * x + c[1] / 2.0) * x + c[0]) * x;
    anti(b) - anti(a)
}

fn simpson(c: &[f64; 4], a: f64, b: f64, intervals: usize) -> f64 {
    debug_assert!(intervals % 2 == 0);
    let h = (b - a) / intervals as f64;
    let mut acc = poly_eval(c, a) + poly_eval(c, b);
    for i in 1..intervals {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * poly_eval(c, a + i as f64 * h);
    }
    acc * h / 3.0
}

const SIMPSON_INTERVALS: usize = 1000;

fn fit_curve(curve: &RdCurve, center: f64) -> [f64; 4] {
    let xs: Vec<f64> = curve.points.iter().map(|p| p.psnr - center).collect();
    let ys: Vec<f64> = curve.points.iter().map(|p| p.rate_bits.log10()).collect();
    polyfit3(&xs, &ys)
}

/// Average rate difference of `test` against `anchor` at equal quality, in
/// percent. Negative means the test curve spends fewer bits.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64, HarnessError> {
    for c in [anchor, test] {
        if c.points.len() < 4 {
            return Err(HarnessError::CurveTooShort {
                points: c.points.len(),
            });
        }
    }
    let (a_lo, a_hi) = anchor.psnr_range();
    let (t_lo, t_hi) = test.psnr_range();
    let lo = a_lo.max(t_lo);
    let hi = a_hi.min(t_hi);
    if hi <= lo {
        return Err(HarnessError::NoOverlap {
            anchor: (a_lo, a_hi),
            test: (t_lo, t_hi),
        });
    }
    // centering the fit keeps the normal equations well conditioned
    let center = (lo + hi) / 2.0;
    let ca = fit_curve(anchor, center);
    let ct = fit_curve(test, center);
    let (x0, x1) = (lo - center, hi - center);

    let ia = simpson(&ca, x0, x1, SIMPSON_INTERVALS);
    let it = simpson(&ct, x0, x1, SIMPSON_INTERVALS);
    debug_assert!(
        (ia - poly_integral(&ca, x0, x1)).abs() < 1e-6
            && (it - poly_integral(&ct, x0, x1)).abs() < 1e-6,
        "Simpson and analytic integrals disagree"
    );
    let avg_diff = (it - ia) / (hi - lo);
    Ok((10f64.powf(avg_diff) - 1.0) * 100.0)
}
