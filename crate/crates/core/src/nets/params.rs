//! Trainable parameter storage, gradient buffers, Adam, and checkpoints.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;

use super::tensor::Tensor;
use crate::error::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// Uniform He-style initialization with the given fan-in.
    pub fn add_kaiming<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt();
        let mut t = Tensor::zeros(shape);
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-bound..bound));
        self.add(name, t)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Hash of names and shapes; identifies the architecture a checkpoint
    /// belongs to.
    pub fn layout_hash(&self) -> u64 {
        let mut text = String::new();
        for (n, t) in self.names.iter().zip(&self.tensors) {
            text.push_str(&format!("{n}{:?};", t.shape()));
        }
        stable_hash(text.as_bytes())
    }

    pub fn save(&self, path: &Path, config_hash: u64) -> Result<(), PipelineError> {
        let io = |source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        let mut write = || -> std::io::Result<()> {
            w.write_all(CKPT_MAGIC)?;
            w.write_u32::<LittleEndian>(CKPT_VERSION)?;
            w.write_u64::<LittleEndian>(config_hash)?;
            w.write_u64::<LittleEndian>(self.layout_hash())?;
            w.write_u32::<LittleEndian>(self.tensors.len() as u32)?;
            for (name, t) in self.names.iter().zip(&self.tensors) {
                w.write_u32::<LittleEndian>(name.len() as u32)?;
                w.write_all(name.as_bytes())?;
                w.write_u32::<LittleEndian>(t.shape().len() as u32)?;
                for &d in t.shape() {
                    w.write_u64::<LittleEndian>(d as u64)?;
                }
                for &v in t.data() {
                    w.write_f64::<LittleEndian>(v)?;
                }
            }
            w.flush()
        };
        write().map_err(io)
    }

    /// Loads values into this (already constructed) store. Names, shapes and
    /// the config hash must match.
    pub fn load_into(&mut self, path: &Path, config_hash: u64) -> Result<(), PipelineError> {
        let io = |source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        };
        let bad = |m: &str| PipelineError::Checkpoint(format!("{}: {m}", path.display()));
        let mut r = BufReader::new(File::open(path).map_err(io)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != CKPT_MAGIC {
            return Err(bad("bad magic"));
        }
        let read_err = |_| bad("truncated");
        let version = r.read_u32::<LittleEndian>().map_err(read_err)?;
        if version != CKPT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let stored_config = r.read_u64::<LittleEndian>().map_err(read_err)?;
        if stored_config != config_hash {
            return Err(bad("config hash mismatch"));
        }
        let stored_layout = r.read_u64::<LittleEndian>().map_err(read_err)?;
        let count = r.read_u32::<LittleEndian>().map_err(read_err)? as usize;
        if stored_layout != self.layout_hash() || count != self.tensors.len() {
            return Err(bad("architecture mismatch"));
        }
        for i in 0..count {
            let n = r.read_u32::<LittleEndian>().map_err(read_err)? as usize;
            let mut name = vec![0u8; n];
            r.read_exact(&mut name).map_err(read_err)?;
            if name != self.names[i].as_bytes() {
                return Err(bad("parameter name mismatch"));
            }
            let rank = r.read_u32::<LittleEndian>().map_err(read_err)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.read_u64::<LittleEndian>().map_err(read_err)? as usize);
            }
            if shape != self.tensors[i].shape() {
                return Err(bad("parameter shape mismatch"));
            }
            for v in self.tensors[i].data_mut() {
                *v = r.read_f64::<LittleEndian>().map_err(read_err)?;
            }
        }
        Ok(())
    }
}

/// First eight bytes of the SHA-256 digest, little-endian.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

const CKPT_MAGIC: &[u8; 4] = b"LHCK";
const CKPT_VERSION: u32 = 1;

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Gradients {
    tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            tensors: store
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        }
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) {
        self.tensors[id.0].add_assign(g);
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale(s));
    }

    pub fn zero(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(0.0));
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Cosine annealing from `base` at step 0 to `min` at `total`.
pub fn cosine_lr(base: f64, min: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let p = (step as f64 / total as f64).min(1.0);
    min + 0.5 * (base - min) * (1.0 + (std::f64::consts::PI * p).cos())
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || {
            store
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..store.tensors.len() {
            let g = grads.tensors[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.tensors[i].data_mut();
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
