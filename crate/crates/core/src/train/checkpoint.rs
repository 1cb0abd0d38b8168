//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//! magic `STAINRCK`, format version `u32`, SHA-256 of the architecture's
//! canonical text (32 bytes), that text (`u32` length + UTF-8), training step
//! `u64`, tensor count `u32`, then per tensor its name (`u32` length + UTF-8),
//! rank `u32`, dims `u64 × rank` and `f32` values. An optional optimizer
//! section follows: flag byte, AdamW step `u64`, the four hyperparameters as
//! `f64`, then first and second moments of every tensor as `f32`.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::model_from_canonical;
use super::optim::{AdamWConfig, OptimState};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::srtransformer::ModelConfig;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"STAINRCK";
const VERSION: u32 = 1;

/// Hex SHA-256 of the canonical architecture text.
pub fn config_hash(config: &ModelConfig) -> String {
    hex(&Sha256::digest(config.canonical().as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub optim: Option<OptimState<f32>>,
}

pub fn encode_checkpoint(
    config: &ModelConfig,
    store: &ParamStore<f32>,
    optim: Option<&OptimState<f32>>,
    step: u64,
) -> Vec<u8> {
    let canonical = config.canonical();
    let mut out = Vec::with_capacity(64 + 4 * store.num_elements() * if optim.is_some() { 3 } else { 1 });
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&Sha256::digest(canonical.as_bytes()));
    put_str(&mut out, &canonical);
    out.extend_from_slice(&step.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        put_str(&mut out, &p.name);
        out.extend_from_slice(&(p.value.ndim() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        put_f32s(&mut out, p.value.data());
    }
    match optim {
        None => out.push(0),
        Some(st) => {
            out.push(1);
            out.extend_from_slice(&st.step.to_le_bytes());
            let c = st.config;
            for v in [c.beta1, c.beta2, c.eps, c.weight_decay] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for moments in [&st.m, &st.v] {
                for m in moments {
                    put_f32s(&mut out, m);
                }
            }
        }
    }
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!("file ends inside {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec()).map_err(|_| Error::Corrupt(format!("{what} is not UTF-8")))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Corrupt(format!("{what} too large")))?, what)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let r = &mut Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Corrupt("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Corrupt(format!("unsupported format version {version}")));
    }
    let stored_hash = hex(r.take(32, "config hash")?);
    let canonical = r.string("architecture")?;
    if hex(&Sha256::digest(canonical.as_bytes())) != stored_hash {
        return Err(Error::Corrupt("architecture text does not match its hash".into()));
    }
    let config = model_from_canonical(&canonical).map_err(|e| Error::Corrupt(e.to_string()))?;
    let step = r.u64("step")?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name = r.string("tensor name")?;
        let rank = r.u32("rank")? as usize;
        let shape = (0..rank)
            .map(|_| Ok(r.u64("dims")? as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Corrupt(format!("tensor `{name}` too large")))?;
        let data = r.f32s(numel, &format!("tensor `{name}`"))?;
        tensors.push((name, Tensor::new(&shape, data)?));
    }
    let optim = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let step = r.u64("optimizer step")?;
            let config = AdamWConfig {
                beta1: r.f64("beta1")?,
                beta2: r.f64("beta2")?,
                eps: r.f64("eps")?,
                weight_decay: r.f64("weight decay")?,
            };
            let mut moments = [Vec::new(), Vec::new()];
            for (k, slot) in moments.iter_mut().enumerate() {
                for (name, t) in &tensors {
                    slot.push(r.f32s(t.numel(), &format!("moment {} of `{name}`", k + 1))?);
                }
            }
            let [m, v] = moments;
            Some(OptimState { config, step, m, v })
        }
        f => return Err(Error::Corrupt(format!("bad optimizer flag {f}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        config,
        step,
        tensors,
        optim,
    })
}

pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    store: &ParamStore<f32>,
    optim: Option<&OptimState<f32>>,
    step: u64,
) -> Result<()> {
    fs::write(path, encode_checkpoint(config, store, optim, step)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

impl Checkpoint {
    /// Copies the stored tensors into `store`, which was built for `config`.
    ///
    /// Fails with a hash mismatch when the architectures differ, and with a
    /// shape error when a tensor does not fit its slot.
    pub fn load_into(&self, config: &ModelConfig, store: &mut ParamStore<f32>) -> Result<()> {
        let (expected, found) = (config_hash(config), config_hash(&self.config));
        if expected != found {
            return Err(Error::HashMismatch { expected, found });
        }
        if self.tensors.len() != store.len() {
            return Err(Error::Corrupt(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for (p, (name, t)) in store.iter().zip(&self.tensors) {
            if &p.name != name || p.value.shape() != t.shape() {
                return Err(Error::CheckpointShape {
                    name: name.clone(),
                    expected: p.value.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
        }
        for (p, (_, t)) in store.iter_mut().zip(&self.tensors) {
            p.value = t.clone();
        }
        Ok(())
    }
}
