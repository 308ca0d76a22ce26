//! Self-check suites behind the `gradcheck` and `dctcheck` CLI commands and
//! the acceptance tests. Each check is an independent oracle comparison
//! with a pinned tolerance.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::freq::{dct_basis, dct_conv, dct_plane, idct_conv, idct_plane, DctKernelBank, DCT_BLOCK};
use crate::network::{
    bind_params_override, build_oldn, oldn_forward_graph, GradScope, ModelConfig,
};
use crate::tensor::{finite_diff_check, NodeId, Tape, Tensor4, DEFAULT_FD_EPS};

/// One oracle comparison: the observed value must stay within tolerance.
#[derive(Debug, Clone)]
pub struct SuiteCheck {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl SuiteCheck {
    fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        let pass = value <= tolerance && value.is_finite();
        Self {
            name: name.into(),
            value,
            tolerance,
            pass,
        }
    }
}

pub fn all_pass(checks: &[SuiteCheck]) -> bool {
    checks.iter().all(|c| c.pass)
}

fn rand_tensor(rng: &mut ChaCha8Rng, dims: [usize; 4], lo: f64, hi: f64) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_, _, _, _| rng.gen_range(lo..hi))
}

/// Random values bounded away from zero (no relu kink within the probe
/// step).
fn off_kink(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_, _, _, _| {
        let mag = rng.gen_range(0.2..1.0);
        if rng.gen::<bool>() {
            mag
        } else {
            -mag
        }
    })
}

/// Textbook per-block DCT-II, evaluated coefficient by coefficient. The
/// independent oracle for the convolution path.
fn naive_block_dct(x: &Tensor4<f64>, n: usize) -> Tensor4<f64> {
    let [b_n, _, h, w] = x.dims();
    let mut out = Tensor4::zeros([b_n, n * n, h / n, w / n]);
    for b in 0..b_n {
        for by in 0..h / n {
            for bx in 0..w / n {
                for u in 0..n {
                    for v in 0..n {
                        let mut acc = 0.0;
                        for i in 0..n {
                            for j in 0..n {
                                acc +=
                                    x.at(b, 0, by * n + i, bx * n + j) * dct_basis(n, u, v, i, j);
                            }
                        }
                        out.set(b, u * n + v, by, bx, acc);
                    }
                }
            }
        }
    }
    out
}

/// Transform properties: exact inversion in single precision, agreement
/// with the naive oracle, energy conservation.
pub fn transform_suite(seed: u64) -> Result<Vec<SuiteCheck>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bank32 = DctKernelBank::<f32>::new(DCT_BLOCK)?;
    let bank64 = DctKernelBank::<f64>::new(DCT_BLOCK)?;
    let mut checks = Vec::new();

    let mut worst_round = 0.0f64;
    for _ in 0..100 {
        let x: Tensor4<f32> = rand_tensor(&mut rng, [1, 1, 64, 64], -1.0, 1.0).cast();
        let back = idct_plane(&dct_plane(&x, &bank32)?, &bank32)?;
        worst_round = worst_round.max(x.max_abs_diff(&back));
    }
    checks.push(SuiteCheck::new(
        "idct(dct) identity, single precision, 100 random 64x64 planes",
        worst_round,
        1e-5,
    ));

    let mut worst_oracle = 0.0f64;
    for _ in 0..10 {
        let x = rand_tensor(&mut rng, [1, 1, 32, 32], -1.0, 1.0);
        let oracle = naive_block_dct(&x, DCT_BLOCK);
        let got = dct_plane(&x.cast::<f32>(), &bank32)?;
        worst_oracle = worst_oracle.max(got.cast::<f64>().max_abs_diff(&oracle));
    }
    checks.push(SuiteCheck::new(
        "dct-conv vs naive block DCT-II oracle",
        worst_oracle,
        1e-5,
    ));

    let mut worst_parseval = 0.0f64;
    for _ in 0..100 {
        let x = rand_tensor(&mut rng, [1, 1, 32, 32], -1.0, 1.0);
        let y = dct_plane(&x, &bank64)?;
        let ex: f64 = x.data().iter().map(|v| v * v).sum();
        let ey: f64 = y.data().iter().map(|v| v * v).sum();
        worst_parseval = worst_parseval.max((ex - ey).abs() / ex);
    }
    checks.push(SuiteCheck::new(
        "Parseval energy conservation (relative)",
        worst_parseval,
        1e-6,
    ));

    Ok(checks)
}

type Builder<'a> = dyn Fn(&mut Tape<f64>, NodeId) -> Result<NodeId, HarnessError> + 'a;

fn fd(name: &str, builder: &Builder, x: &Tensor4<f64>, tol: f64) -> Result<SuiteCheck, HarnessError> {
    let err = finite_diff_check(builder, x, DEFAULT_FD_EPS)?;
    Ok(SuiteCheck::new(name, err, tol))
}

/// Finite-difference checks for every differentiable op, then the full toy
/// network graph probed through its inputs and parameters.
pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteCheck>, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = 1e-4;
    let mut checks = Vec::new();

    // per-op probes
    {
        let x = off_kink(&mut rng, [2, 3, 6, 6]);
        let w = off_kink(&mut rng, [4, 3, 3, 3]);
        let b = off_kink(&mut rng, [1, 4, 1, 1]);
        let wc = w.clone();
        let bc = b.clone();
        checks.push(fd(
            "conv2d d/dinput",
            &move |tape, leaf| {
                let wn = tape.leaf(wc.clone(), false);
                let bn = tape.leaf(bc.clone(), false);
                let y = tape.conv2d(leaf, wn, Some(bn), 1, 1)?;
                Ok(tape.sum(y))
            },
            &x,
            tol,
        )?);
        let xc = x.clone();
        checks.push(fd(
            "conv2d d/dweight",
            &move |tape, leaf| {
                let xn = tape.leaf(xc.clone(), false);
                let y = tape.conv2d(xn, leaf, None, 1, 1)?;
                Ok(tape.sum(y))
            },
            &w,
            tol,
        )?);
        let xc = x.clone();
        let wc = w.clone();
        checks.push(fd(
            "conv2d d/dbias",
            &move |tape, leaf| {
                let xn = tape.leaf(xc.clone(), false);
                let wn = tape.leaf(wc.clone(), false);
                let y = tape.conv2d(xn, wn, Some(leaf), 1, 1)?;
                Ok(tape.sum(y))
            },
            &b,
            tol,
        )?);
        let x7 = off_kink(&mut rng, [1, 3, 7, 7]);
        checks.push(fd(
            "conv2d strided d/dinput",
            &move |tape, leaf| {
                let wn = tape.leaf(w.clone(), false);
                let y = tape.conv2d(leaf, wn, None, 2, 1)?;
                Ok(tape.sum(y))
            },
            &x7,
            tol,
        )?);
    }
    {
        let x = off_kink(&mut rng, [1, 2, 5, 5]);
        checks.push(fd(
            "relu (probed off the kink)",
            &|tape, leaf| {
                let y = tape.relu(leaf);
                Ok(tape.sum(y))
            },
            &x,
            tol,
        )?);
        checks.push(fd(
            "sigmoid",
            &|tape, leaf| {
                let y = tape.sigmoid(leaf);
                Ok(tape.sum(y))
            },
            &x,
            tol,
        )?);
    }
    {
        let x = off_kink(&mut rng, [1, 2, 4, 4]);
        let other = off_kink(&mut rng, [1, 2, 4, 4]);
        let oc = other.clone();
        checks.push(fd(
            "add",
            &move |tape, leaf| {
                let o = tape.leaf(oc.clone(), false);
                let y = tape.add(leaf, o)?;
                Ok(tape.sum(y))
            },
            &x,
            tol,
        )?);
        checks.push(fd(
            "concat_channels",
            &move |tape, leaf| {
                let o = tape.leaf(other.clone(), false);
                let y = tape.concat_channels(leaf, o)?;
                Ok(tape.sum(y))
            },
            &x,
            tol,
        )?);
    }
    {
        let x = off_kink(&mut rng, [2, 3, 4, 4]);
        let w = off_kink(&mut rng, [1, 3, 1, 1]);
        let xc = x.clone();
        checks.push(fd(
            "channel_scale d/dweight",
            &move |tape, leaf| {
                let xn = tape.leaf(xc.clone(), false);
                let y = tape.channel_scale(xn, leaf)?;
                Ok(tape.sum(y))
            },
            &w,
            tol,
        )?);
        let wc = w.clone();
        checks.push(fd(
            "channel_scale d/dinput",
            &move |tape, leaf| {
                let wn = tape.leaf(wc.clone(), false);
                let y = tape.channel_scale(leaf, wn)?;
                Ok(tape.sum(y))
            },
            &x,
            tol,
        )?);
        let gate = off_kink(&mut rng, [2, 3, 1, 1]);
        checks.push(fd(
            "channel_gate d/dgate",
            &move |tape, leaf| {
                let xn = tape.leaf(x.clone(), false);
                let y = tape.channel_gate(xn, leaf)?;
                Ok(tape.sum(y))
            },
            &gate,
            tol,
        )?);
    }
    {
        let x = off_kink(&mut rng, [2, 2, 4, 4]);
        checks.push(fd(
            "global_avg_pool",
            &|tape, leaf| {
                let y = tape.global_avg_pool(leaf);
                Ok(tape.sum(y))
            },
            &x,
            tol,
        )?);
        checks.push(fd(
            "avg_pool2",
            &|tape, leaf| {
                let y = tape.avg_pool2(leaf)?;
                Ok(tape.sum(y))
            },
            &x,
            tol,
        )?);
        checks.push(fd(
            "pixel_unshuffle",
            &|tape, leaf| {
                let y = tape.pixel_unshuffle(leaf, 2)?;
                Ok(tape.sum(y))
            },
            &x,
            tol,
        )?);
        let c4 = off_kink(&mut rng, [1, 4, 2, 2]);
        checks.push(fd(
            "pixel_shuffle",
            &|tape, leaf| {
                let y = tape.pixel_shuffle(leaf, 2)?;
                Ok(tape.sum(y))
            },
            &c4,
            tol,
        )?);
    }
    {
        let v = off_kink(&mut rng, [2, 4, 1, 1]);
        let w = off_kink(&mut rng, [3, 4, 1, 1]);
        let b = off_kink(&mut rng, [1, 3, 1, 1]);
        let (vc, bc) = (v.clone(), b.clone());
        checks.push(fd(
            "dense d/dmatrix",
            &move |tape, leaf| {
                let vn = tape.leaf(vc.clone(), false);
                let bn = tape.leaf(bc.clone(), false);
                let y = tape.dense(vn, leaf, bn)?;
                Ok(tape.sum(y))
            },
            &w,
            tol,
        )?);
        checks.push(fd(
            "dense d/dinput",
            &move |tape, leaf| {
                let wn = tape.leaf(w.clone(), false);
                let bn = tape.leaf(b.clone(), false);
                let y = tape.dense(leaf, wn, bn)?;
                Ok(tape.sum(y))
            },
            &v,
            tol,
        )?);
    }
    {
        let pred = off_kink(&mut rng, [1, 2, 4, 4]);
        let target = off_kink(&mut rng, [1, 2, 4, 4]);
        checks.push(fd(
            "mse_loss",
            &move |tape, leaf| {
                let t = tape.leaf(target.clone(), false);
                Ok(tape.mse_loss(leaf, t)?)
            },
            &pred,
            tol,
        )?);
    }
    {
        let bank = DctKernelBank::<f64>::new(DCT_BLOCK)?;
        let x = rand_tensor(&mut rng, [1, 1, 16, 16], -1.0, 1.0);
        checks.push(fd(
            "dct_conv / idct_conv",
            &move |tape, leaf| {
                let y = dct_conv(tape, leaf, &bank)?;
                let back = idct_conv(tape, y, &bank)?;
                let m = tape.global_avg_pool(back);
                Ok(tape.sum(m))
            },
            &x,
            tol,
        )?);
    }

    // full toy network graph; the output head is re-inflated to He scale so
    // no probed gradient sits below the f64 finite-difference noise floor
    let toy = ModelConfig {
        n: 8,
        ..ModelConfig::default()
    };
    let mut params = build_oldn::<f64>(&toy, seed ^ 0xA11CE)?;
    for v in params
        .get_mut("recon.out.weight")
        .expect("output head exists")
        .data_mut()
    {
        *v *= 100.0;
    }
    let luma = rand_tensor(&mut rng, [1, 1, 16, 16], 0.1, 0.9);
    let chroma = rand_tensor(&mut rng, [1, 1, 8, 8], 0.1, 0.9);
    let target = rand_tensor(&mut rng, [1, 1, 8, 8], 0.1, 0.9);

    {
        let (p, l, t) = (params.clone(), luma.clone(), target.clone());
        checks.push(fd(
            "toy network d/dchroma",
            &move |tape, leaf| {
                let ln = tape.leaf(l.clone(), false);
                let tn = tape.leaf(t.clone(), false);
                let binding = bind_params_override(tape, &p, GradScope::None, &BTreeMap::new());
                let out = oldn_forward_graph(tape, &binding, p.config(), ln, leaf)?;
                Ok(tape.mse_loss(out, tn)?)
            },
            &chroma,
            tol,
        )?);
    }
    let probe_paths = [
        "recon.block0.al.weight",
        "recon.block2.al.weight",
        "fuse.entry.weight",
        "recon.out.bias",
        "recon.block1.cab.fc2.weight",
        "spatial.chroma.wb0.conv2.bias",
        "freq.expand.weight",
    ];
    for path in probe_paths {
        let probe = params
            .get(path)
            .unwrap_or_else(|| panic!("{path} missing from toy model"))
            .clone();
        let (p, l, c, t) = (params.clone(), luma.clone(), chroma.clone(), target.clone());
        let path_owned = path.to_string();
        checks.push(fd(
            &format!("toy network d/d{path}"),
            &move |tape, leaf| {
                let ln = tape.leaf(l.clone(), false);
                let cn = tape.leaf(c.clone(), false);
                let tn = tape.leaf(t.clone(), false);
                let mut overrides = BTreeMap::new();
                overrides.insert(path_owned.clone(), leaf);
                let binding = bind_params_override(tape, &p, GradScope::None, &overrides);
                let out = oldn_forward_graph(tape, &binding, p.config(), ln, cn)?;
                Ok(tape.mse_loss(out, tn)?)
            },
            &probe,
            tol,
        )?);
    }

    Ok(checks)
}

/// Render one check as a stable single-line report.
pub fn format_check(check: &SuiteCheck) -> String {
    format!(
        "[{}] {} (max err {:.3e}, tol {:.1e})",
        if check.pass { "PASS" } else { "FAIL" },
        check.name,
        check.value,
        check.tolerance
    )
}
