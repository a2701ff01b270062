//! Versioned model checkpoint.
//!
//! ```text
//! b"WFCHKPNT" | version: u32 | manifest length: u64 | manifest (TOML)
//!   | tensors: f32 LE, in manifest order | SHA-256 of everything before
//! ```
//!
//! The manifest carries the architecture, the transform configuration, the
//! optimizer step and the name and shape of every tensor. Tensors are the
//! network parameters in layout order, then the normalization running
//! statistics, then (optionally) the optimizer velocity.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wavframe_core::directional::TransformConfig;
use wavframe_core::wavresnet::{ArchConfig, Layout, Network, TrainState};

use crate::error::{Error, Result};
use crate::format::Reader;
use crate::fsutil;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WFCHKPNT";
pub const CHECKPOINT_VERSION: u32 = 1;
const STATS_NAME: &str = "bn.running";
const VELOCITY_NAME: &str = "optimizer.velocity";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub step: u64,
    pub arch: ArchConfig,
    pub transform: TransformConfig,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: Network,
    pub transform: TransformConfig,
    /// Optimizer position; `None` for inference-only snapshots.
    pub state: Option<TrainState>,
}

fn f32_round(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

impl Checkpoint {
    /// Rounds everything stored to single precision, so that the in-memory
    /// state equals what [`Checkpoint::decode`] returns.
    pub fn quantize(&mut self) {
        self.net.quantize_f32();
        if let Some(s) = &mut self.state {
            f32_round(&mut s.velocity);
        }
    }

    fn manifest(&self) -> Manifest {
        let mut tensors = Self::expected_entries(self.net.layout());
        if let Some(s) = &self.state {
            tensors.push(TensorEntry {
                name: VELOCITY_NAME.into(),
                shape: vec![s.velocity.len()],
            });
        }
        Manifest {
            step: self.state.as_ref().map_or(0, |s| s.step),
            arch: self.net.arch().clone(),
            transform: self.transform.clone(),
            tensors,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let manifest =
            toml::to_string(&self.manifest()).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(manifest.as_bytes());
        let velocity = self.state.iter().flat_map(|s| s.velocity.iter());
        for &v in self
            .net
            .params()
            .iter()
            .chain(self.net.running_stats())
            .chain(velocity)
        {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 32 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!(
                "{} is not a checkpoint (bad magic)",
                origin.display()
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum(origin.to_path_buf()));
        }
        let mut r = Reader::new(body);
        r.take(8)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let len = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("manifest is not UTF-8".into()))?;
        let manifest: Manifest =
            toml::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        let layout = Layout::new(&manifest.arch)?;
        let expected = Self::expected_entries(&layout);
        let has_velocity = match manifest.tensors.len().checked_sub(expected.len()) {
            Some(0) => false,
            Some(1) => true,
            _ => {
                return Err(Error::Format(
                    "tensor list does not match the architecture".into(),
                ))
            }
        };
        for (got, want) in manifest.tensors.iter().zip(&expected) {
            if got != want {
                return Err(Error::Format(format!(
                    "tensor {:?} found where {:?} was expected",
                    got.name, want.name
                )));
            }
        }
        if has_velocity {
            let last = &manifest.tensors[expected.len()];
            if last.name != VELOCITY_NAME || last.shape != [layout.param_len()] {
                return Err(Error::Format("malformed optimizer velocity entry".into()));
            }
        }
        let mut read = |n: usize| {
            (0..n)
                .map(|_| r.f32().map(f64::from))
                .collect::<Result<Vec<f64>>>()
        };
        let params = read(layout.param_len())?;
        let stats = read(layout.stats_len())?;
        let velocity = if has_velocity {
            Some(read(layout.param_len())?)
        } else {
            None
        };
        if r.remaining() != 0 {
            return Err(Error::Format("trailing bytes after the tensors".into()));
        }
        let net = Network::from_parts(manifest.arch, params, stats)?;
        let state = velocity.map(|velocity| TrainState {
            step: manifest.step,
            velocity,
        });
        Ok(Self {
            net,
            transform: manifest.transform,
            state,
        })
    }

    fn expected_entries(layout: &Layout) -> Vec<TensorEntry> {
        let mut v: Vec<TensorEntry> = layout
            .entries()
            .iter()
            .map(|e| TensorEntry {
                name: e.name.clone(),
                shape: e.shape.clone(),
            })
            .collect();
        v.push(TensorEntry {
            name: STATS_NAME.into(),
            shape: vec![layout.stats_len()],
        });
        v
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fsutil::read(path)?, path)
    }
}
