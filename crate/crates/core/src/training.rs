//! Offline baseline training and encoder-side online fine-tuning.
//!
//! Offline training fits every parameter on degraded/raw patch pairs.
//! Online training clones the baseline, fits only the adaptive-layer
//! weights against one frame's raw chroma, and returns the weight snapshot
//! to be residual-coded. A best-snapshot safeguard guarantees the returned
//! weights never lose to the baseline on that frame.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codec_sim::{
    degrade_plane, load_pgm, load_ppm, rgb_to_yuv420, Plane, QpConfig, RgbImage, SimError,
};
use crate::network::{
    bind_params, build_oldn, oldn_forward_graph, AlSnapshot, GradScope, ModelConfig, ModelParams,
    NetworkError,
};
use crate::tensor::{NodeId, Scalar, Tape, Tensor4, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample {index} has different dims than sample 0")]
    InconsistentSample { index: usize },
    #[error("planes are not 4:2:0 co-sited: luma {luma:?}, chroma {chroma:?}")]
    PlaneRatio {
        luma: (usize, usize),
        chroma: (usize, usize),
    },
    #[error("patch {patch} does not fit in {width}x{height} plane")]
    PatchTooLarge {
        patch: usize,
        width: usize,
        height: usize,
    },
    #[error("no gradient for parameter {path}")]
    MissingGradient { path: String },
    #[error("chroma dims {dims:?} not tileable by {tile}")]
    TileGeometry { dims: [usize; 4], tile: usize },
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Hyperparameters of the offline baseline phase.
#[derive(Debug, Clone)]
pub struct OfflineConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Chroma patch edge; the co-located luma patch is twice as large.
    pub chroma_patch: usize,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr: 1e-4,
            epochs: 20,
            seed: 0,
            chroma_patch: 32,
        }
    }
}

impl OfflineConfig {
    pub fn luma_patch(&self) -> usize {
        2 * self.chroma_patch
    }
}

/// Hyperparameters of encoder-side fine-tuning. Only ~a hundred scalars are
/// trained against a single frame, hence the aggressive default rate.
#[derive(Debug, Clone)]
pub struct OnlineConfig {
    pub steps: usize,
    pub lr: f64,
    /// Optional chroma tile edge for large frames; tiles are visited in
    /// raster order and the loss is accumulated over the full frame.
    pub tile: Option<usize>,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            lr: 1e-2,
            tile: None,
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates per parameter path.
#[derive(Debug, Clone, Default)]
pub struct AdamState<F> {
    m: BTreeMap<String, Tensor4<F>>,
    v: BTreeMap<String, Tensor4<F>>,
    step: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new() -> Self {
        Self {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over `paths`, in path order. Every updated parameter
/// must have a gradient.
pub fn adam_step<F: Scalar>(
    params: &mut ModelParams<F>,
    grads: &BTreeMap<String, Tensor4<F>>,
    state: &mut AdamState<F>,
    lr: f64,
    paths: &[String],
) -> Result<(), TrainError> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for path in paths {
        let g = grads
            .get(path)
            .ok_or_else(|| TrainError::MissingGradient { path: path.clone() })?;
        let p = params
            .get_mut(path)
            .ok_or_else(|| TrainError::MissingGradient { path: path.clone() })?;
        let m = state
            .m
            .entry(path.clone())
            .or_insert_with(|| Tensor4::zeros(g.dims()));
        let v = state
            .v
            .entry(path.clone())
            .or_insert_with(|| Tensor4::zeros(g.dims()));
        for ((pv, gv), (mv, vv)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            let gf = gv.to_f64();
            let mf = ADAM_BETA1 * mv.to_f64() + (1.0 - ADAM_BETA1) * gf;
            let vf = ADAM_BETA2 * vv.to_f64() + (1.0 - ADAM_BETA2) * gf * gf;
            *mv = F::from_f64(mf);
            *vv = F::from_f64(vf);
            let update = lr * (mf / bc1) / ((vf / bc2).sqrt() + ADAM_EPS);
            *pv = F::from_f64(pv.to_f64() - update);
        }
    }
    Ok(())
}

/// Mean-squared-error loss node.
pub fn mse_loss<F: Scalar>(
    tape: &mut Tape<F>,
    pred: NodeId,
    target: NodeId,
) -> Result<NodeId, TrainError> {
    Ok(tape.mse_loss(pred, target)?)
}

/// Co-located luma/chroma patch pair.
#[derive(Debug, Clone)]
pub struct PatchPair {
    pub luma: Plane,
    pub chroma: Plane,
}

/// Uniformly random chroma patch origins, reproducible from the seed.
pub fn patch_origins(
    chroma_width: usize,
    chroma_height: usize,
    count: usize,
    seed: u64,
    patch: usize,
) -> Result<Vec<(usize, usize)>, TrainError> {
    if patch > chroma_width || patch > chroma_height {
        return Err(TrainError::PatchTooLarge {
            patch,
            width: chroma_width,
            height: chroma_height,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let x = rng.gen_range(0..=chroma_width - patch);
            let y = rng.gen_range(0..=chroma_height - patch);
            (x, y)
        })
        .collect())
}

/// Crop `count` co-located patch pairs: a chroma patch at `(x, y)` pairs
/// with the luma patch at `(2x, 2y)` of twice the edge.
pub fn extract_patches(
    y_plane: &Plane,
    c_plane: &Plane,
    count: usize,
    seed: u64,
    chroma_patch: usize,
) -> Result<Vec<PatchPair>, TrainError> {
    if y_plane.width() != 2 * c_plane.width() || y_plane.height() != 2 * c_plane.height() {
        return Err(TrainError::PlaneRatio {
            luma: (y_plane.width(), y_plane.height()),
            chroma: (c_plane.width(), c_plane.height()),
        });
    }
    let origins = patch_origins(c_plane.width(), c_plane.height(), count, seed, chroma_patch)?;
    Ok(origins
        .into_iter()
        .map(|(x, y)| PatchPair {
            luma: y_plane.crop_at(2 * x, 2 * y, 2 * chroma_patch, 2 * chroma_patch),
            chroma: c_plane.crop_at(x, y, chroma_patch, chroma_patch),
        })
        .collect())
}

/// One training sample: degraded luma + chroma inputs and the raw chroma
/// target, all normalized `(1, 1, h, w)` tensors.
#[derive(Debug, Clone)]
pub struct TrainSample<F> {
    pub deg_luma: Tensor4<F>,
    pub deg_chroma: Tensor4<F>,
    pub raw_chroma: Tensor4<F>,
}

fn stack_batch<F: Scalar>(samples: &[&Tensor4<F>]) -> Tensor4<F> {
    let [_, c, h, w] = samples[0].dims();
    let mut data = Vec::with_capacity(samples.len() * c * h * w);
    for s in samples {
        data.extend_from_slice(s.data());
    }
    Tensor4::new([samples.len(), c, h, w], data).expect("uniform sample dims")
}

/// Loss and (optionally) parameter gradients for one forward pass,
/// optionally tiled over the frame.
fn loss_and_grads<F: Scalar>(
    params: &ModelParams<F>,
    luma: &Tensor4<F>,
    chroma: &Tensor4<F>,
    target: &Tensor4<F>,
    scope: GradScope,
    tile: Option<usize>,
) -> Result<(f64, BTreeMap<String, Tensor4<F>>), TrainError> {
    let tiles: Vec<(usize, usize)> = match tile {
        None => vec![(0, 0)],
        Some(t) => {
            let [_, _, h, w] = chroma.dims();
            if t == 0 || h % t != 0 || w % t != 0 || t % 8 != 0 {
                return Err(TrainError::TileGeometry {
                    dims: chroma.dims(),
                    tile: t,
                });
            }
            let mut out = Vec::new();
            for ty in 0..h / t {
                for tx in 0..w / t {
                    out.push((ty * t, tx * t));
                }
            }
            out
        }
    };
    let weight = 1.0 / tiles.len() as f64;
    let mut total_loss = 0.0;
    let mut grads: BTreeMap<String, Tensor4<F>> = BTreeMap::new();
    for (y0, x0) in tiles {
        let (l, c, tgt);
        let (luma_t, chroma_t, target_t) = if tile.is_some() {
            let t = tile.unwrap();
            l = luma.crop_spatial(2 * y0, 2 * x0, 2 * t, 2 * t);
            c = chroma.crop_spatial(y0, x0, t, t);
            tgt = target.crop_spatial(y0, x0, t, t);
            (&l, &c, &tgt)
        } else {
            (luma, chroma, target)
        };
        let mut tape = Tape::new();
        let ln = tape.leaf(luma_t.clone(), false);
        let cn = tape.leaf(chroma_t.clone(), false);
        let tn = tape.leaf(target_t.clone(), false);
        let binding = bind_params(&mut tape, params, scope);
        let out = oldn_forward_graph(&mut tape, &binding, params.config(), ln, cn)?;
        let loss = tape.mse_loss(out, tn)?;
        total_loss += tape.value(loss).item().to_f64() * weight;
        if scope != GradScope::None {
            let gmap = tape.backward(loss)?;
            for (path, node) in binding.iter() {
                if let Some(g) = gmap.get(node) {
                    match grads.get_mut(path) {
                        Some(acc) => {
                            for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                                *a = *a + *v * F::from_f64(weight);
                            }
                        }
                        None => {
                            let mut scaled = g.clone();
                            for v in scaled.data_mut() {
                                *v = *v * F::from_f64(weight);
                            }
                            grads.insert(path.to_string(), scaled);
                        }
                    }
                }
            }
        }
    }
    Ok((total_loss, grads))
}

/// Offline baseline training: minimizes MSE over all parameters (the
/// frozen/online partition is ignored here). Returns the trained model and
/// the per-epoch mean loss curve.
pub fn train_offline<F: Scalar>(
    dataset: &[TrainSample<F>],
    model: &ModelConfig,
    cfg: &OfflineConfig,
) -> Result<(ModelParams<F>, Vec<f64>), TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let dims0 = (
        dataset[0].deg_luma.dims(),
        dataset[0].deg_chroma.dims(),
        dataset[0].raw_chroma.dims(),
    );
    for (i, s) in dataset.iter().enumerate() {
        if (s.deg_luma.dims(), s.deg_chroma.dims(), s.raw_chroma.dims()) != dims0 {
            return Err(TrainError::InconsistentSample { index: i });
        }
    }

    let mut params = build_oldn::<F>(model, cfg.seed)?;
    let all_paths: Vec<String> = params.tensors().keys().cloned().collect();
    let mut state = AdamState::new();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED_BEEF));
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let luma = stack_batch(&chunk.iter().map(|i| &dataset[*i].deg_luma).collect::<Vec<_>>());
            let chroma =
                stack_batch(&chunk.iter().map(|i| &dataset[*i].deg_chroma).collect::<Vec<_>>());
            let target =
                stack_batch(&chunk.iter().map(|i| &dataset[*i].raw_chroma).collect::<Vec<_>>());
            let (loss, grads) =
                loss_and_grads(&params, &luma, &chroma, &target, GradScope::All, None)?;
            adam_step(&mut params, &grads, &mut state, cfg.lr, &all_paths)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let mean = loss_sum / dataset.len() as f64;
        log::info!("epoch {epoch}: mean loss {mean:.6e}");
        epoch_losses.push(mean);
    }
    Ok((params, epoch_losses))
}

/// Diagnostics from one online run.
#[derive(Debug, Clone, Copy)]
pub struct OnlineTrace {
    /// Loss of the baseline weights on this frame.
    pub initial_loss: f64,
    /// Loss after the last update step.
    pub final_loss: f64,
    /// Loss of the returned snapshot (never above `initial_loss`).
    pub returned_loss: f64,
}

/// Encoder-side fine-tuning of the adaptive-layer weights against one
/// frame. The baseline is not mutated; the best-loss snapshot seen is
/// returned, so the result never regresses below the baseline on this
/// frame.
pub fn train_online<F: Scalar>(
    baseline: &ModelParams<F>,
    deg_luma: &Tensor4<F>,
    deg_chroma: &Tensor4<F>,
    raw_chroma: &Tensor4<F>,
    cfg: &OnlineConfig,
) -> Result<(AlSnapshot<F>, OnlineTrace), TrainError> {
    let mut work = baseline.clone();
    let online_paths: Vec<String> = work.online_paths().iter().map(|s| s.to_string()).collect();
    let mut state = AdamState::new();

    let mut best_snap = work.al_snapshot();
    let mut best_loss = f64::INFINITY;
    let mut initial_loss = None;

    for _ in 0..cfg.steps {
        let (loss, grads) = loss_and_grads(
            &work,
            deg_luma,
            deg_chroma,
            raw_chroma,
            GradScope::OnlineOnly,
            cfg.tile,
        )?;
        initial_loss.get_or_insert(loss);
        if loss < best_loss {
            best_loss = loss;
            best_snap = work.al_snapshot();
        }
        adam_step(&mut work, &grads, &mut state, cfg.lr, &online_paths)?;
    }
    let (final_loss, _) = loss_and_grads(
        &work,
        deg_luma,
        deg_chroma,
        raw_chroma,
        GradScope::None,
        cfg.tile,
    )?;
    let initial_loss = initial_loss.unwrap_or(final_loss);
    if final_loss < best_loss {
        best_loss = final_loss;
        best_snap = work.al_snapshot();
    }
    Ok((
        best_snap,
        OnlineTrace {
            initial_loss,
            final_loss,
            returned_loss: best_loss.min(initial_loss),
        },
    ))
}

/// One record of the training manifest: a raw image and the QP to degrade
/// it at. Lines are `path,qp`; `#` starts a comment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub qp: u8,
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, TrainError> {
    let mut out = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (path, qp) = line.rsplit_once(',').ok_or_else(|| TrainError::Manifest {
            line: i + 1,
            reason: "expected `path,qp`".into(),
        })?;
        let qp: u8 = qp.trim().parse().map_err(|_| TrainError::Manifest {
            line: i + 1,
            reason: format!("bad qp {:?}", qp.trim()),
        })?;
        if qp > 51 {
            return Err(TrainError::Manifest {
                line: i + 1,
                reason: format!("qp {qp} out of range"),
            });
        }
        out.push(ManifestEntry {
            path: PathBuf::from(path.trim()),
            qp,
        });
    }
    Ok(out)
}

fn load_rgb_any(path: &std::path::Path) -> Result<RgbImage, SimError> {
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        let p = load_pgm(path)?;
        let mut img = RgbImage::filled(p.width(), p.height(), 0);
        for y in 0..p.height() {
            for x in 0..p.width() {
                let v = p.get(x, y);
                img.set_pixel(x, y, v, v, v);
            }
        }
        Ok(img)
    } else {
        load_ppm(path)
    }
}

/// Build a patch dataset from manifest entries: each image is converted to
/// 4:2:0, degraded at its QP, and sampled into co-located patch triples
/// (degraded luma, degraded chroma, raw chroma). The U component supplies
/// the chroma patches.
pub fn build_dataset(
    entries: &[ManifestEntry],
    patches_per_image: usize,
    chroma_patch: usize,
    seed: u64,
) -> Result<Vec<TrainSample<f32>>, TrainError> {
    let mut out = Vec::with_capacity(entries.len() * patches_per_image);
    for (k, entry) in entries.iter().enumerate() {
        let rgb = load_rgb_any(&entry.path)?;
        let raw = rgb_to_yuv420(&rgb)?;
        let qp = QpConfig::new(entry.qp)?;
        let deg_y = degrade_plane(&raw.y, qp);
        let deg_u = degrade_plane(&raw.u, qp);
        let origins = patch_origins(
            raw.u.width(),
            raw.u.height(),
            patches_per_image,
            seed.wrapping_add(k as u64),
            chroma_patch,
        )?;
        for (x, y) in origins {
            out.push(TrainSample {
                deg_luma: deg_y
                    .crop_at(2 * x, 2 * y, 2 * chroma_patch, 2 * chroma_patch)
                    .to_tensor_norm(),
                deg_chroma: deg_u.crop_at(x, y, chroma_patch, chroma_patch).to_tensor_norm(),
                raw_chroma: raw.u.crop_at(x, y, chroma_patch, chroma_patch).to_tensor_norm(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_check;

    fn toy_model() -> ModelConfig {
        ModelConfig::small(8)
    }

    fn rand_norm_tensor(dims: [usize; 4], seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(dims, |_, _, _, _| rng.gen_range(0.1..0.9))
    }

    fn toy_frame(seed: u64) -> (Tensor4<f64>, Tensor4<f64>, Tensor4<f64>) {
        (
            rand_norm_tensor([1, 1, 32, 32], seed),
            rand_norm_tensor([1, 1, 16, 16], seed + 1),
            rand_norm_tensor([1, 1, 16, 16], seed + 2),
        )
    }

    #[test]
    fn mse_examples() {
        let mut tape = Tape::new();
        let a = tape.leaf(rand_norm_tensor([1, 1, 4, 4], 1), false);
        let same = tape.mse_loss(a, a).unwrap();
        assert_eq!(tape.value(same).item(), 0.0);

        let b = tape.leaf(Tensor4::filled([1, 1, 4, 4], 0.5), false);
        let z = tape.leaf(Tensor4::zeros([1, 1, 4, 4]), false);
        let quarter = tape.mse_loss(b, z).unwrap();
        assert!((tape.value(quarter).item() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn mse_gradient_matches_fd() {
        let pred = rand_norm_tensor([1, 2, 3, 3], 2);
        let target = rand_norm_tensor([1, 2, 3, 3], 3);
        let err = finite_diff_check::<_, TensorError>(
            |tape, leaf| {
                let t = tape.leaf(target.clone(), false);
                tape.mse_loss(leaf, t)
            },
            &pred,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "mse fd error {err}");
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut params = build_oldn::<f64>(&toy_model(), 1).unwrap();
        let before = params.clone();
        let mut state = AdamState::new();
        let paths: Vec<String> = params.tensors().keys().cloned().collect();
        let grads: BTreeMap<String, Tensor4<f64>> = params
            .tensors()
            .iter()
            .map(|(p, t)| (p.clone(), Tensor4::zeros(t.dims())))
            .collect();
        adam_step(&mut params, &grads, &mut state, 0.1, &paths).unwrap();
        for (path, t) in params.tensors() {
            assert!(t.bit_eq(before.get(path).unwrap()), "{path} moved");
        }
    }

    #[test]
    fn adam_first_step_is_minus_lr() {
        // single scalar parameter, g = 1: bias-corrected update is
        // lr * 1 / (1 + eps)
        let mut params = build_oldn::<f64>(&toy_model(), 2).unwrap();
        let path = "recon.block0.al.weight".to_string();
        let before = params.get(&path).unwrap().clone();
        let mut grads = BTreeMap::new();
        grads.insert(path.clone(), Tensor4::ones(before.dims()));
        let mut state = AdamState::new();
        adam_step(&mut params, &grads, &mut state, 0.1, &[path.clone()]).unwrap();
        let delta = params.get(&path).unwrap().data()[0] - before.data()[0];
        assert!((delta + 0.1).abs() < 1e-7, "delta {delta}");
    }

    #[test]
    fn adam_missing_gradient_is_an_error() {
        let mut params = build_oldn::<f64>(&toy_model(), 3).unwrap();
        let mut state = AdamState::new();
        let err = adam_step(
            &mut params,
            &BTreeMap::new(),
            &mut state,
            0.1,
            &["recon.out.weight".to_string()],
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::MissingGradient { .. }));
    }

    #[test]
    fn patch_origins_stay_in_bounds() {
        let origins = patch_origins(40, 24, 1000, 9, 16).unwrap();
        assert_eq!(origins.len(), 1000);
        for (x, y) in origins {
            assert!(x + 16 <= 40 && y + 16 <= 24);
        }
        assert!(matches!(
            patch_origins(10, 40, 1, 0, 16).unwrap_err(),
            TrainError::PatchTooLarge { .. }
        ));
    }

    #[test]
    fn patches_are_co_located() {
        // luma is the chroma pattern upsampled 2x, so co-location means the
        // subsampled luma patch equals the chroma patch exactly
        let cw = 24;
        let ch = 16;
        let mut chroma = Plane::filled(cw, ch, 0);
        for y in 0..ch {
            for x in 0..cw {
                chroma.set(x, y, ((x * 7 + y * 13) % 251) as u8);
            }
        }
        let mut luma = Plane::filled(2 * cw, 2 * ch, 0);
        for y in 0..2 * ch {
            for x in 0..2 * cw {
                luma.set(x, y, chroma.get(x / 2, y / 2));
            }
        }
        let pairs = extract_patches(&luma, &chroma, 25, 4, 8).unwrap();
        assert_eq!(pairs.len(), 25);
        for pair in pairs {
            assert_eq!(pair.luma.width(), 16);
            assert_eq!(pair.chroma.width(), 8);
            for y in 0..8 {
                for x in 0..8 {
                    assert_eq!(pair.luma.get(2 * x, 2 * y), pair.chroma.get(x, y));
                }
            }
        }
    }

    #[test]
    fn extract_patches_rejects_non_420() {
        let luma = Plane::filled(30, 20, 0);
        let chroma = Plane::filled(16, 10, 0);
        assert!(matches!(
            extract_patches(&luma, &chroma, 1, 0, 8).unwrap_err(),
            TrainError::PlaneRatio { .. }
        ));
    }

    #[test]
    fn offline_training_reduces_single_sample_loss() {
        let (luma, chroma, target) = toy_frame(10);
        let sample = TrainSample {
            deg_luma: luma.clone(),
            deg_chroma: chroma.clone(),
            raw_chroma: target.clone(),
        };
        let cfg = OfflineConfig {
            batch_size: 1,
            lr: 1e-3,
            epochs: 8,
            seed: 5,
            chroma_patch: 16,
        };
        let model = toy_model();
        let init = build_oldn::<f64>(&model, cfg.seed).unwrap();
        let (init_loss, _) =
            loss_and_grads(&init, &luma, &chroma, &target, GradScope::None, None).unwrap();
        let (trained, losses) = train_offline(&[sample], &model, &cfg).unwrap();
        let (final_loss, _) =
            loss_and_grads(&trained, &luma, &chroma, &target, GradScope::None, None).unwrap();
        assert!(final_loss < init_loss, "{final_loss} !< {init_loss}");
        assert_eq!(losses.len(), 8);
        assert!(losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn offline_training_is_reproducible() {
        let (luma, chroma, target) = toy_frame(20);
        let sample = TrainSample {
            deg_luma: luma,
            deg_chroma: chroma,
            raw_chroma: target,
        };
        let cfg = OfflineConfig {
            batch_size: 1,
            lr: 1e-3,
            epochs: 2,
            seed: 6,
            chroma_patch: 16,
        };
        let (a, la) = train_offline(&[sample.clone()], &toy_model(), &cfg).unwrap();
        let (b, lb) = train_offline(&[sample], &toy_model(), &cfg).unwrap();
        assert_eq!(la, lb);
        for (path, t) in a.tensors() {
            assert!(t.bit_eq(b.get(path).unwrap()), "{path} differs");
        }
    }

    #[test]
    fn offline_training_rejects_empty_dataset() {
        let cfg = OfflineConfig::default();
        assert!(matches!(
            train_offline::<f32>(&[], &toy_model(), &cfg).unwrap_err(),
            TrainError::EmptyDataset
        ));
    }

    #[test]
    fn online_zero_steps_is_identity() {
        let baseline = build_oldn::<f64>(&toy_model(), 30).unwrap();
        let (luma, chroma, target) = toy_frame(31);
        let cfg = OnlineConfig {
            steps: 0,
            ..OnlineConfig::default()
        };
        let (snap, trace) = train_online(&baseline, &luma, &chroma, &target, &cfg).unwrap();
        assert!(snap.values().iter().all(|v| *v == 1.0));
        assert_eq!(trace.initial_loss, trace.final_loss);
    }

    #[test]
    fn online_training_never_worsens_the_frame() {
        let baseline = build_oldn::<f64>(&toy_model(), 40).unwrap();
        let (luma, chroma, target) = toy_frame(41);
        let cfg = OnlineConfig {
            steps: 30,
            lr: 1e-2,
            tile: None,
        };
        let (snap, trace) = train_online(&baseline, &luma, &chroma, &target, &cfg).unwrap();
        assert!(trace.returned_loss <= trace.initial_loss);

        // frozen parameters are untouched; applying the snapshot reproduces
        // the returned loss
        let mut updated = baseline.clone();
        updated.set_al_snapshot(&snap).unwrap();
        assert!(updated.frozen_bit_eq(&baseline));
        let (loss, _) =
            loss_and_grads(&updated, &luma, &chroma, &target, GradScope::None, None).unwrap();
        assert!((loss - trace.returned_loss).abs() < 1e-12);
    }

    #[test]
    fn tiled_loss_matches_full_frame() {
        let baseline = build_oldn::<f64>(&toy_model(), 50).unwrap();
        let (luma, chroma, target) = toy_frame(51);
        let (full, gfull) = loss_and_grads(
            &baseline,
            &luma,
            &chroma,
            &target,
            GradScope::OnlineOnly,
            None,
        )
        .unwrap();
        // a single tile spanning the frame is the same graph
        let (one_tile, gone) = loss_and_grads(
            &baseline,
            &luma,
            &chroma,
            &target,
            GradScope::OnlineOnly,
            Some(16),
        )
        .unwrap();
        assert!((full - one_tile).abs() < 1e-12);
        for (path, g) in &gfull {
            assert!(gone[path].max_abs_diff(g) < 1e-12, "{path} grad differs");
        }

        // multiple tiles cover the frame; every online weight still gets a
        // finite gradient
        let (tiled, gtiled) = loss_and_grads(
            &baseline,
            &luma,
            &chroma,
            &target,
            GradScope::OnlineOnly,
            Some(8),
        )
        .unwrap();
        assert!(tiled.is_finite());
        for path in baseline.online_paths() {
            assert!(gtiled[path].all_finite(), "{path} missing tiled gradient");
        }

        let err = loss_and_grads(
            &baseline,
            &luma,
            &chroma,
            &target,
            GradScope::OnlineOnly,
            Some(5),
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::TileGeometry { .. }));
    }

    #[test]
    fn manifest_parsing() {
        let text = "# training images\nimg/a.ppm,27\n\nimg/b.pgm, 32 # held out\n";
        let entries = parse_manifest(text).unwrap();
        assert_eq!(
            entries,
            vec![
                ManifestEntry {
                    path: "img/a.ppm".into(),
                    qp: 27
                },
                ManifestEntry {
                    path: "img/b.pgm".into(),
                    qp: 32
                },
            ]
        );
        assert!(parse_manifest("nope").is_err());
        assert!(parse_manifest("a.ppm,99").is_err());
    }

    #[test]
    fn dataset_builder_produces_patch_triples() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("x.ppm");
        crate::codec_sim::save_ppm(&img_path, &crate::codec_sim::synthetic_rgb(64, 48, 7)).unwrap();
        let entries = vec![ManifestEntry {
            path: img_path,
            qp: 27,
        }];
        let ds = build_dataset(&entries, 5, 8, 11).unwrap();
        assert_eq!(ds.len(), 5);
        for s in &ds {
            assert_eq!(s.deg_luma.dims(), [1, 1, 16, 16]);
            assert_eq!(s.deg_chroma.dims(), [1, 1, 8, 8]);
            assert_eq!(s.raw_chroma.dims(), [1, 1, 8, 8]);
        }
    }
}
