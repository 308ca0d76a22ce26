//! Central finite-difference gradient checking (double precision only).

use super::{NodeId, Tape, Tensor4, TensorError};

/// Probe step for central differences.
pub const DEFAULT_FD_EPS: f64 = 1e-4;

/// Compares the tape gradient of a scalar-valued graph against central
/// finite differences, probing every coordinate of `x`.
///
/// `builder` is invoked with a fresh tape and the probe leaf; it must return
/// a scalar node. Returns the max over coordinates of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn finite_diff_check<B, E>(builder: B, x: &Tensor4<f64>, eps: f64) -> Result<f64, E>
where
    B: Fn(&mut Tape<f64>, NodeId) -> Result<NodeId, E>,
    E: From<TensorError>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone(), true);
    let loss = builder(&mut tape, leaf)?;
    let dims = tape.value(loss).dims();
    if dims != [1, 1, 1, 1] {
        return Err(E::from(TensorError::NonScalarLoss { dims }));
    }
    let grads = tape.backward(loss).map_err(E::from)?;
    let analytic = grads
        .get(leaf)
        .cloned()
        .unwrap_or_else(|| Tensor4::zeros(x.dims()));

    let eval = |probe: Tensor4<f64>| -> Result<f64, E> {
        let mut t = Tape::new();
        let l = t.leaf(probe, false);
        let out = builder(&mut t, l)?;
        Ok(t.value(out).item())
    };

    let mut max_rel = 0.0f64;
    for i in 0..x.numel() {
        let x0 = x.data()[i];
        let mut plus = x.clone();
        plus.data_mut()[i] = x0 + eps;
        let mut minus = x.clone();
        minus.data_mut()[i] = x0 - eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
