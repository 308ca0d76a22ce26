//! The enhancement network: dual-domain (pixel + block-DCT) feature
//! extraction with luma guidance, a reconstruction trunk of wide blocks, and
//! a frozen/online-trainable parameter split.
//!
//! Two input branches run in both domains. Luma features are aggregated
//! onto chroma features by element-wise addition in each domain, the two
//! domain features are concatenated channel-wise, and the reconstruction
//! trunk alternates online-learnable wide blocks (per-channel adaptive
//! scaling) with plain wide blocks (channel attention). The only
//! online-trainable parameters are the adaptive-layer weight vectors.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::freq::{dct_conv, DctKernelBank, FreqError, DCT_BLOCK};
use crate::tensor::{NodeId, Scalar, Tape, Tensor4, TensorError};

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("invalid model config: {reason}")]
    InvalidConfig { reason: String },
    #[error("missing parameter {path}")]
    MissingParam { path: String },
    #[error("chroma input must be (B,1,H,W) with H,W divisible by {DCT_BLOCK}, got {dims:?}")]
    ChromaShape { dims: [usize; 4] },
    #[error("luma {luma:?} must be exactly twice the chroma extent {chroma:?}")]
    LumaShape {
        luma: [usize; 4],
        chroma: [usize; 4],
    },
    #[error("adaptive-layer snapshot has {found} weights, model expects {expected}")]
    SnapshotLength { expected: usize, found: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Freq(#[from] FreqError),
}

/// Block kinds in the reconstruction trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Wide block gated by channel attention.
    Wb,
    /// Wide block gated by the online-trainable adaptive layer.
    OlWb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Trunk channel width.
    pub n: usize,
    /// Wide-activation expansion factor (inner conv width is `n * expand`).
    pub expand: usize,
    /// Hidden reduction ratio of the channel attention block.
    pub cab_reduction: usize,
    /// Wide blocks per input branch.
    pub n_wb_branch: usize,
    /// Block kinds in the reconstruction trunk; adaptive blocks are spaced
    /// between plain ones.
    pub recon_blocks: Vec<BlockKind>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n: 64,
            expand: 4,
            cab_reduction: 4,
            n_wb_branch: 2,
            recon_blocks: vec![BlockKind::OlWb, BlockKind::Wb, BlockKind::OlWb, BlockKind::Wb],
        }
    }
}

impl ModelConfig {
    /// Small config for tests and desk-scale experiments.
    pub fn small(n: usize) -> Self {
        Self {
            n,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let fail = |reason: String| Err(NetworkError::InvalidConfig { reason });
        if self.n == 0 || self.expand == 0 || self.cab_reduction == 0 {
            return fail("n, expand and cab_reduction must be >= 1".into());
        }
        if self.n % self.cab_reduction != 0 {
            return fail(format!(
                "n = {} must be divisible by cab_reduction = {}",
                self.n, self.cab_reduction
            ));
        }
        if self.recon_blocks.is_empty() {
            return fail("reconstruction trunk must not be empty".into());
        }
        if !self.recon_blocks.contains(&BlockKind::OlWb) {
            return fail("reconstruction trunk needs at least one adaptive block".into());
        }
        Ok(())
    }

    pub fn num_olwb(&self) -> usize {
        self.recon_blocks
            .iter()
            .filter(|b| **b == BlockKind::OlWb)
            .count()
    }

    /// Number of online-trainable scalars.
    pub fn online_count(&self) -> usize {
        self.n * self.num_olwb()
    }
}

/// Training partition of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Frozen,
    Online,
}

/// The online subset is exactly the adaptive-layer weight vectors; the tag
/// is derivable from the parameter path.
pub fn param_kind(path: &str) -> ParamKind {
    if path.ends_with(".al.weight") {
        ParamKind::Online
    } else {
        ParamKind::Frozen
    }
}

fn wb_spec(prefix: &str, n: usize, e: usize, r: usize, out: &mut Vec<(String, [usize; 4])>) {
    out.push((format!("{prefix}.conv1.weight"), [n * e, n, 3, 3]));
    out.push((format!("{prefix}.conv1.bias"), [1, n * e, 1, 1]));
    out.push((format!("{prefix}.conv2.weight"), [n, n * e, 3, 3]));
    out.push((format!("{prefix}.conv2.bias"), [1, n, 1, 1]));
    out.push((format!("{prefix}.cab.fc1.weight"), [n / r, n, 1, 1]));
    out.push((format!("{prefix}.cab.fc1.bias"), [1, n / r, 1, 1]));
    out.push((format!("{prefix}.cab.fc2.weight"), [n, n / r, 1, 1]));
    out.push((format!("{prefix}.cab.fc2.bias"), [1, n, 1, 1]));
}

fn olwb_spec(prefix: &str, n: usize, e: usize, out: &mut Vec<(String, [usize; 4])>) {
    out.push((format!("{prefix}.conv1.weight"), [n * e, n, 3, 3]));
    out.push((format!("{prefix}.conv1.bias"), [1, n * e, 1, 1]));
    out.push((format!("{prefix}.conv2.weight"), [n, n * e, 3, 3]));
    out.push((format!("{prefix}.conv2.bias"), [1, n, 1, 1]));
    out.push((format!("{prefix}.al.weight"), [1, n, 1, 1]));
}

fn branch_spec(prefix: &str, cin: usize, cfg: &ModelConfig, out: &mut Vec<(String, [usize; 4])>) {
    out.push((format!("{prefix}.entry.weight"), [cfg.n, cin, 3, 3]));
    out.push((format!("{prefix}.entry.bias"), [1, cfg.n, 1, 1]));
    for i in 0..cfg.n_wb_branch {
        wb_spec(
            &format!("{prefix}.wb{i}"),
            cfg.n,
            cfg.expand,
            cfg.cab_reduction,
            out,
        );
    }
}

/// Canonical parameter list (path, dims) in construction order. Random
/// draws during initialization follow this order, which is what makes
/// builds reproducible.
pub fn param_spec(cfg: &ModelConfig) -> Vec<(String, [usize; 4])> {
    let nch = DCT_BLOCK * DCT_BLOCK;
    let mut out = Vec::new();
    branch_spec("spatial.chroma", 4, cfg, &mut out);
    branch_spec("spatial.luma", 16, cfg, &mut out);
    branch_spec("freq.chroma", nch, cfg, &mut out);
    branch_spec("freq.luma", nch, cfg, &mut out);
    out.push(("freq.expand.weight".into(), [16 * cfg.n, cfg.n, 3, 3]));
    out.push(("freq.expand.bias".into(), [1, 16 * cfg.n, 1, 1]));
    out.push(("fuse.entry.weight".into(), [cfg.n, 2 * cfg.n, 3, 3]));
    out.push(("fuse.entry.bias".into(), [1, cfg.n, 1, 1]));
    for (i, kind) in cfg.recon_blocks.iter().enumerate() {
        let prefix = format!("recon.block{i}");
        match kind {
            BlockKind::Wb => wb_spec(&prefix, cfg.n, cfg.expand, cfg.cab_reduction, &mut out),
            BlockKind::OlWb => olwb_spec(&prefix, cfg.n, cfg.expand, &mut out),
        }
    }
    out.push(("recon.out.weight".into(), [4, cfg.n, 3, 3]));
    out.push(("recon.out.bias".into(), [1, 4, 1, 1]));
    out
}

/// Path-keyed tensor map in sorted order.
pub type Tensor4Map<F> = BTreeMap<String, Tensor4<F>>;

/// Named parameter store for the network, partitioned into frozen and
/// online-trainable subsets (see [`param_kind`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    config: ModelConfig,
    tensors: Tensor4Map<F>,
}

impl<F: Scalar> ModelParams<F> {
    /// Reassemble from a config and a full tensor map, validating that the
    /// map matches the config's parameter spec exactly.
    pub fn from_parts(
        config: ModelConfig,
        tensors: BTreeMap<String, Tensor4<F>>,
    ) -> Result<Self, NetworkError> {
        config.validate()?;
        let spec = param_spec(&config);
        if spec.len() != tensors.len() {
            return Err(NetworkError::InvalidConfig {
                reason: format!(
                    "expected {} parameters, got {}",
                    spec.len(),
                    tensors.len()
                ),
            });
        }
        for (path, dims) in &spec {
            match tensors.get(path) {
                None => return Err(NetworkError::MissingParam { path: path.clone() }),
                Some(t) if t.dims() != *dims => {
                    return Err(NetworkError::InvalidConfig {
                        reason: format!("{path}: dims {:?} do not match {dims:?}", t.dims()),
                    })
                }
                _ => {}
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor4<F>> {
        &self.tensors
    }

    pub fn get(&self, path: &str) -> Option<&Tensor4<F>> {
        self.tensors.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor4<F>> {
        self.tensors.get_mut(path)
    }

    /// Paths of online-trainable parameters, in deterministic sorted order.
    pub fn online_paths(&self) -> Vec<&str> {
        self.tensors
            .keys()
            .filter(|p| param_kind(p) == ParamKind::Online)
            .map(String::as_str)
            .collect()
    }

    pub fn online_count(&self) -> usize {
        self.online_paths()
            .iter()
            .map(|p| self.tensors[*p].numel())
            .sum()
    }

    /// Flat vector of all adaptive-layer weights in path order.
    pub fn al_snapshot(&self) -> AlSnapshot<F> {
        let mut values = Vec::with_capacity(self.online_count());
        for path in self.online_paths() {
            values.extend_from_slice(self.tensors[path].data());
        }
        AlSnapshot { values }
    }

    /// Overwrite the adaptive-layer weights from a flat snapshot.
    pub fn set_al_snapshot(&mut self, snap: &AlSnapshot<F>) -> Result<(), NetworkError> {
        let expected = self.online_count();
        if snap.values.len() != expected {
            return Err(NetworkError::SnapshotLength {
                expected,
                found: snap.values.len(),
            });
        }
        let paths: Vec<String> = self.online_paths().iter().map(|s| s.to_string()).collect();
        let mut offset = 0;
        for path in paths {
            let t = self.tensors.get_mut(&path).expect("online path exists");
            let n = t.numel();
            t.data_mut().copy_from_slice(&snap.values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Bitwise equality of the frozen subset.
    pub fn frozen_bit_eq(&self, other: &Self) -> bool {
        self.tensors.iter().all(|(path, t)| {
            param_kind(path) == ParamKind::Online
                || other.get(path).is_some_and(|o| t.bit_eq(o))
        })
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        ModelParams {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(p, t)| (p.clone(), t.cast()))
                .collect(),
        }
    }
}

/// Flat adaptive-layer weight vector in deterministic parameter-path order.
#[derive(Debug, Clone, PartialEq)]
pub struct AlSnapshot<F> {
    values: Vec<F>,
}

impl<F: Scalar> AlSnapshot<F> {
    pub fn new(values: Vec<F>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// He-uniform scale shrink for the output projection. The trunk stacks many
/// residual branches, so a full-scale output head makes the initial network
/// swamp the global skip with noise; a near-zero (but not zero) head starts
/// the model at near-identity while every weight still reaches the output.
const OUTPUT_HEAD_INIT_SCALE: f64 = 0.01;

/// Build a freshly initialized model: conv and dense weights He-uniform
/// from the seed (output head scaled down), biases zero, adaptive-layer
/// weights all 1.
pub fn build_oldn<F: Scalar>(config: &ModelConfig, seed: u64) -> Result<ModelParams<F>, NetworkError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for (path, dims) in param_spec(config) {
        let t = if path.ends_with(".al.weight") {
            Tensor4::ones(dims)
        } else if path.ends_with(".bias") {
            Tensor4::zeros(dims)
        } else {
            let fan_in = (dims[1] * dims[2] * dims[3]) as f64;
            let mut bound = (6.0 / fan_in).sqrt();
            if path == "recon.out.weight" {
                bound *= OUTPUT_HEAD_INIT_SCALE;
            }
            let data = (0..dims.iter().product::<usize>())
                .map(|_| F::from_f64((rng.gen::<f64>() * 2.0 - 1.0) * bound))
                .collect();
            Tensor4::new(dims, data).expect("spec dims are consistent")
        };
        tensors.insert(path, t);
    }
    Ok(ModelParams {
        config: config.clone(),
        tensors,
    })
}

/// Which parameters participate in gradient computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    /// Inference only.
    None,
    /// Online fine-tuning: only adaptive-layer weights.
    OnlineOnly,
    /// Offline training: everything.
    All,
}

/// Parameter leaves bound onto a tape for one forward/backward pass.
#[derive(Debug)]
pub struct GraphBinding {
    nodes: BTreeMap<String, NodeId>,
}

impl GraphBinding {
    pub fn node(&self, path: &str) -> Result<NodeId, NetworkError> {
        self.nodes
            .get(path)
            .copied()
            .ok_or_else(|| NetworkError::MissingParam { path: path.into() })
    }

    /// Iterate (path, node) pairs in path order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.nodes.iter().map(|(p, n)| (p.as_str(), *n))
    }
}

/// Enter every parameter as a tape leaf. Tracking follows `scope`.
pub fn bind_params<F: Scalar>(
    tape: &mut Tape<F>,
    params: &ModelParams<F>,
    scope: GradScope,
) -> GraphBinding {
    bind_params_override(tape, params, scope, &BTreeMap::new())
}

/// Like [`bind_params`], but paths in `overrides` use the provided node
/// instead of a fresh leaf. Lets a caller probe the graph's gradient with
/// respect to one chosen parameter.
pub fn bind_params_override<F: Scalar>(
    tape: &mut Tape<F>,
    params: &ModelParams<F>,
    scope: GradScope,
    overrides: &BTreeMap<String, NodeId>,
) -> GraphBinding {
    let mut nodes = BTreeMap::new();
    for (path, tensor) in params.tensors() {
        let node = match overrides.get(path) {
            Some(existing) => *existing,
            None => {
                let tracked = match scope {
                    GradScope::None => false,
                    GradScope::All => true,
                    GradScope::OnlineOnly => param_kind(path) == ParamKind::Online,
                };
                tape.leaf(tensor.clone(), tracked)
            }
        };
        nodes.insert(path.clone(), node);
    }
    GraphBinding { nodes }
}

/// Node handles for one channel attention block.
#[derive(Debug, Clone, Copy)]
pub struct CabNodes {
    pub fc1_w: NodeId,
    pub fc1_b: NodeId,
    pub fc2_w: NodeId,
    pub fc2_b: NodeId,
}

/// Node handles for a wide block (channel-attention gated).
#[derive(Debug, Clone, Copy)]
pub struct WbNodes {
    pub conv1_w: NodeId,
    pub conv1_b: NodeId,
    pub conv2_w: NodeId,
    pub conv2_b: NodeId,
    pub cab: CabNodes,
}

/// Node handles for an online-learnable wide block (adaptive-layer gated).
#[derive(Debug, Clone, Copy)]
pub struct OlwbNodes {
    pub conv1_w: NodeId,
    pub conv1_b: NodeId,
    pub conv2_w: NodeId,
    pub conv2_b: NodeId,
    pub al: NodeId,
}

impl GraphBinding {
    pub fn cab_nodes(&self, prefix: &str) -> Result<CabNodes, NetworkError> {
        Ok(CabNodes {
            fc1_w: self.node(&format!("{prefix}.fc1.weight"))?,
            fc1_b: self.node(&format!("{prefix}.fc1.bias"))?,
            fc2_w: self.node(&format!("{prefix}.fc2.weight"))?,
            fc2_b: self.node(&format!("{prefix}.fc2.bias"))?,
        })
    }

    pub fn wb_nodes(&self, prefix: &str) -> Result<WbNodes, NetworkError> {
        Ok(WbNodes {
            conv1_w: self.node(&format!("{prefix}.conv1.weight"))?,
            conv1_b: self.node(&format!("{prefix}.conv1.bias"))?,
            conv2_w: self.node(&format!("{prefix}.conv2.weight"))?,
            conv2_b: self.node(&format!("{prefix}.conv2.bias"))?,
            cab: self.cab_nodes(&format!("{prefix}.cab"))?,
        })
    }

    pub fn olwb_nodes(&self, prefix: &str) -> Result<OlwbNodes, NetworkError> {
        Ok(OlwbNodes {
            conv1_w: self.node(&format!("{prefix}.conv1.weight"))?,
            conv1_b: self.node(&format!("{prefix}.conv1.bias"))?,
            conv2_w: self.node(&format!("{prefix}.conv2.weight"))?,
            conv2_b: self.node(&format!("{prefix}.conv2.bias"))?,
            al: self.node(&format!("{prefix}.al.weight"))?,
        })
    }
}

/// Squeeze-excite channel attention: global average pool, two dense layers
/// with a ReLU between, sigmoid, then per-batch channel re-calibration.
pub fn cab_forward<F: Scalar>(
    tape: &mut Tape<F>,
    x: NodeId,
    cab: &CabNodes,
) -> Result<NodeId, NetworkError> {
    let pooled = tape.global_avg_pool(x);
    let hidden = tape.dense(pooled, cab.fc1_w, cab.fc1_b)?;
    let hidden = tape.relu(hidden);
    let gate = tape.dense(hidden, cab.fc2_w, cab.fc2_b)?;
    let gate = tape.sigmoid(gate);
    Ok(tape.channel_gate(x, gate)?)
}

/// Per-channel scaling by the online-trainable weight vector.
pub fn adaptive_layer_forward<F: Scalar>(
    tape: &mut Tape<F>,
    x: NodeId,
    weights: NodeId,
) -> Result<NodeId, NetworkError> {
    Ok(tape.channel_scale(x, weights)?)
}

fn wide_conv_branch<F: Scalar>(
    tape: &mut Tape<F>,
    x: NodeId,
    conv1_w: NodeId,
    conv1_b: NodeId,
    conv2_w: NodeId,
    conv2_b: NodeId,
) -> Result<NodeId, NetworkError> {
    let t = tape.conv2d(x, conv1_w, Some(conv1_b), 1, 1)?;
    let t = tape.relu(t);
    Ok(tape.conv2d(t, conv2_w, Some(conv2_b), 1, 1)?)
}

/// Wide block: `y = x + CAB(conv(ReLU(conv_wide(x))))`.
pub fn wide_block_forward<F: Scalar>(
    tape: &mut Tape<F>,
    x: NodeId,
    wb: &WbNodes,
) -> Result<NodeId, NetworkError> {
    let t = wide_conv_branch(tape, x, wb.conv1_w, wb.conv1_b, wb.conv2_w, wb.conv2_b)?;
    let gated = cab_forward(tape, t, &wb.cab)?;
    Ok(tape.add(x, gated)?)
}

/// Online-learnable wide block: the adaptive layer replaces channel
/// attention in the gate position.
pub fn olwb_forward<F: Scalar>(
    tape: &mut Tape<F>,
    x: NodeId,
    olwb: &OlwbNodes,
) -> Result<NodeId, NetworkError> {
    let t = wide_conv_branch(tape, x, olwb.conv1_w, olwb.conv1_b, olwb.conv2_w, olwb.conv2_b)?;
    let gated = adaptive_layer_forward(tape, t, olwb.al)?;
    Ok(tape.add(x, gated)?)
}

fn input_branch<F: Scalar>(
    tape: &mut Tape<F>,
    binding: &GraphBinding,
    prefix: &str,
    n_wb: usize,
    input: NodeId,
) -> Result<NodeId, NetworkError> {
    let entry_w = binding.node(&format!("{prefix}.entry.weight"))?;
    let entry_b = binding.node(&format!("{prefix}.entry.bias"))?;
    let mut feat = tape.conv2d(input, entry_w, Some(entry_b), 1, 1)?;
    for i in 0..n_wb {
        let wb = binding.wb_nodes(&format!("{prefix}.wb{i}"))?;
        feat = wide_block_forward(tape, feat, &wb)?;
    }
    Ok(feat)
}

/// Full forward pass on an existing tape.
///
/// `chroma` is `(B, 1, H, W)` with `H, W` divisible by 8; `luma` is the
/// co-sited `(B, 1, 2H, 2W)` plane. Output shape equals the chroma input
/// shape; the chroma input rides a global skip to the output.
pub fn oldn_forward_graph<F: Scalar>(
    tape: &mut Tape<F>,
    binding: &GraphBinding,
    config: &ModelConfig,
    luma: NodeId,
    chroma: NodeId,
) -> Result<NodeId, NetworkError> {
    let cdims = tape.value(chroma).dims();
    let ldims = tape.value(luma).dims();
    let [b, c, h, w] = cdims;
    if c != 1 || h % DCT_BLOCK != 0 || w % DCT_BLOCK != 0 {
        return Err(NetworkError::ChromaShape { dims: cdims });
    }
    if ldims != [b, 1, 2 * h, 2 * w] {
        return Err(NetworkError::LumaShape {
            luma: ldims,
            chroma: cdims,
        });
    }
    let bank = DctKernelBank::new(DCT_BLOCK)?;
    let nwb = config.n_wb_branch;

    // Pixel domain: both planes brought to (., H/2, W/2) by unshuffling.
    let c_sub = tape.pixel_unshuffle(chroma, 2)?;
    let spatial_c = input_branch(tape, binding, "spatial.chroma", nwb, c_sub)?;
    let l_sub = tape.pixel_unshuffle(luma, 4)?;
    let spatial_l = input_branch(tape, binding, "spatial.luma", nwb, l_sub)?;
    let spatial = tape.add(spatial_c, spatial_l)?;

    // Frequency domain: per-block DCT coefficients, one frequency per
    // channel, at (H/8, W/8); luma is mean-pooled to chroma resolution
    // first so both grids align.
    let c_freq = dct_conv(tape, chroma, &bank)?;
    let freq_c = input_branch(tape, binding, "freq.chroma", nwb, c_freq)?;
    let l_half = tape.avg_pool2(luma)?;
    let l_freq = dct_conv(tape, l_half, &bank)?;
    let freq_l = input_branch(tape, binding, "freq.luma", nwb, l_freq)?;
    let freq_sum = tape.add(freq_c, freq_l)?;
    let exp_w = binding.node("freq.expand.weight")?;
    let exp_b = binding.node("freq.expand.bias")?;
    let freq_wide = tape.conv2d(freq_sum, exp_w, Some(exp_b), 1, 1)?;
    let freq = tape.pixel_shuffle(freq_wide, 4)?;

    // Fusion and reconstruction at (H/2, W/2).
    let fused = tape.concat_channels(spatial, freq)?;
    let fuse_w = binding.node("fuse.entry.weight")?;
    let fuse_b = binding.node("fuse.entry.bias")?;
    let mut trunk = tape.conv2d(fused, fuse_w, Some(fuse_b), 1, 1)?;
    for (i, kind) in config.recon_blocks.iter().enumerate() {
        let prefix = format!("recon.block{i}");
        trunk = match kind {
            BlockKind::Wb => {
                let wb = binding.wb_nodes(&prefix)?;
                wide_block_forward(tape, trunk, &wb)?
            }
            BlockKind::OlWb => {
                let olwb = binding.olwb_nodes(&prefix)?;
                olwb_forward(tape, trunk, &olwb)?
            }
        };
    }
    let out_w = binding.node("recon.out.weight")?;
    let out_b = binding.node("recon.out.bias")?;
    let quad = tape.conv2d(trunk, out_w, Some(out_b), 1, 1)?;
    let residual = tape.pixel_shuffle(quad, 2)?;
    Ok(tape.add(residual, chroma)?)
}

/// Convenience inference entry point (no gradients, output cloned out).
pub fn oldn_forward<F: Scalar>(
    params: &ModelParams<F>,
    luma: &Tensor4<F>,
    chroma: &Tensor4<F>,
) -> Result<Tensor4<F>, NetworkError> {
    let mut tape = Tape::new();
    let l = tape.leaf(luma.clone(), false);
    let c = tape.leaf(chroma.clone(), false);
    let binding = bind_params(&mut tape, params, GradScope::None);
    let out = oldn_forward_graph(&mut tape, &binding, params.config(), l, c)?;
    Ok(tape.value(out).clone())
}
