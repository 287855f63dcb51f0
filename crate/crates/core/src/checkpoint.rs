//! Binary checkpoint: parameters, optimizer and RNG state.
//!
//! Layout (little-endian): `"FGMD"`, `u32` version, `u32`-prefixed JSON
//! config block, `u64` step, named tensors, Adam moments, RNG state.

use std::fs;
use std::io::Write;
use std::path::Path;

use fgmdm_tensor::{AdamConfig, AdamState, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::params::ParamSet;
use crate::skeleton::Skeleton;
use crate::training::{RunConfigBlock, Trainer};

pub const MAGIC: &[u8; 4] = b"FGMD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Serialize, Deserialize)]
struct ConfigBlock {
    run: RunConfigBlock,
    skeleton: Skeleton,
    adam: (f64, f64, f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfigBlock,
    pub skeleton: Skeleton,
    pub params: ParamSet<f32>,
    pub adam: AdamState<f32>,
    pub step: u64,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        Self {
            config: t.config.clone(),
            skeleton: t.skeleton().clone(),
            params: t.params.clone(),
            adam: t.adam.clone(),
            step: t.step,
            rng: RngState::capture(&t.rng),
        }
    }

    pub fn into_trainer(self) -> Result<Trainer> {
        Trainer::assemble(
            self.config,
            self.skeleton,
            self.params,
            self.adam,
            self.rng.restore(),
            self.step,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let a = self.adam.config;
        let block = ConfigBlock {
            run: self.config.clone(),
            skeleton: self.skeleton.clone(),
            adam: (a.lr, a.beta1, a.beta2, a.eps),
        };
        let json = serde_json::to_vec(&block).expect("config serializes");
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            write_tensor(&mut out, t);
        }
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        for t in self.adam.first.iter().chain(&self.adam.second) {
            write_tensor(&mut out, t);
        }
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version > VERSION || version == 0 {
            return Err(Error::Version {
                found: version,
                supported: VERSION,
            });
        }
        let len = r.u32()? as usize;
        let block: ConfigBlock = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::Format(format!("config block: {e}")))?;
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut names = Vec::with_capacity(count);
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name =
                String::from_utf8(r.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))?;
            names.push(name);
            tensors.push(r.tensor()?);
        }
        let adam_step = r.u64()?;
        let first = (0..count).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        let second = (0..count).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let (lr, beta1, beta2, eps) = block.adam;
        Ok(Self {
            config: block.run,
            skeleton: block.skeleton,
            params: ParamSet::from_parts(names, tensors)?,
            adam: AdamState {
                config: AdamConfig {
                    lr,
                    beta1,
                    beta2,
                    eps,
                },
                step: adam_step,
                first,
                second,
            },
            step,
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
        })
    }
}

fn write_tensor(out: &mut Vec<u8>, t: &Tensor<f32>) {
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn tensor(&mut self) -> Result<Tensor<f32>> {
        let nd = self.u32()? as usize;
        let shape = (0..nd)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = self.take(
            len.checked_mul(4)
                .ok_or_else(|| Error::Format("tensor too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Writes to a sibling temp file and renames it into place.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(&ck.to_bytes()).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Checkpoint::from_bytes(&bytes)
}
