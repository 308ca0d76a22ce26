//! Model checkpoint format.
//!
//! Layout: magic `OLDN`, version u32 LE, tensor count u32 LE, then per
//! tensor a u16 LE name length, the UTF-8 name, four u32 LE dims and the
//! data as 32-bit LE reals. Tensors appear in path-sorted order. The model
//! config is not stored; it is reconstructed from the parameter names and
//! shapes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::HarnessError;
use crate::network::{BlockKind, ModelConfig, ModelParams, Tensor4Map};
use crate::tensor::Tensor4;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"OLDN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn bad(reason: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint {
        reason: reason.into(),
    }
}

pub fn checkpoint_bytes(params: &ModelParams<f32>) -> Result<Vec<u8>, HarnessError> {
    let tensors = params.tensors();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        if name.len() > u16::MAX as usize {
            return Err(bad(format!("parameter name too long: {name}")));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for d in tensor.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(params: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    fs::write(path, checkpoint_bytes(params)?)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HarnessError> {
        if self.pos + n > self.bytes.len() {
            return Err(bad("checkpoint truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16_le(&mut self) -> Result<u16, HarnessError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32_le(&mut self) -> Result<u32, HarnessError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<ModelParams<f32>, HarnessError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = cur.u32_le()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = cur.u32_le()? as usize;
    let mut tensors: Tensor4Map<f32> = BTreeMap::new();
    for _ in 0..count {
        let name_len = cur.u16_le()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| bad("parameter name is not UTF-8"))?
            .to_string();
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            *d = cur.u32_le()? as usize;
        }
        let numel: usize = dims.iter().product();
        let raw = cur.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor4::new(dims, data).map_err(|e| bad(format!("{name}: {e}")))?;
        if tensors.insert(name.clone(), tensor).is_some() {
            return Err(bad(format!("duplicate parameter {name}")));
        }
    }
    let config = infer_config(&tensors)?;
    ModelParams::from_parts(config, tensors).map_err(|e| bad(e.to_string()))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams<f32>, HarnessError> {
    parse_checkpoint(&fs::read(path)?)
}

/// Reconstruct the model config from parameter names and shapes.
fn infer_config(tensors: &Tensor4Map<f32>) -> Result<ModelConfig, HarnessError> {
    let out_w = tensors
        .get("recon.out.weight")
        .ok_or_else(|| bad("missing recon.out.weight"))?;
    let n = out_w.dims()[1];
    let b0 = tensors
        .get("recon.block0.conv1.weight")
        .ok_or_else(|| bad("missing recon.block0.conv1.weight"))?;
    if n == 0 || b0.dims()[0] % n != 0 {
        return Err(bad("inconsistent trunk width"));
    }
    let expand = b0.dims()[0] / n;
    let mut recon_blocks = Vec::new();
    for i in 0.. {
        if tensors.contains_key(&format!("recon.block{i}.al.weight")) {
            recon_blocks.push(BlockKind::OlWb);
        } else if tensors.contains_key(&format!("recon.block{i}.cab.fc1.weight")) {
            recon_blocks.push(BlockKind::Wb);
        } else {
            break;
        }
    }
    let mut n_wb_branch = 0;
    while tensors.contains_key(&format!("spatial.chroma.wb{n_wb_branch}.conv1.weight")) {
        n_wb_branch += 1;
    }
    let cab_reduction = tensors
        .iter()
        .find(|(p, _)| p.ends_with(".cab.fc1.weight"))
        .map(|(_, t)| {
            let hidden = t.dims()[0];
            if hidden == 0 || n % hidden != 0 {
                0
            } else {
                n / hidden
            }
        })
        .unwrap_or(1);
    if cab_reduction == 0 {
        return Err(bad("inconsistent channel-attention reduction"));
    }
    Ok(ModelConfig {
        n,
        expand,
        cab_reduction,
        n_wb_branch,
        recon_blocks,
    })
}
