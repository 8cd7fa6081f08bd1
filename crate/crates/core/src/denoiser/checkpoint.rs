//! Checkpoint files.
//!
//! Layout, little-endian: magic `MPCK`, version `u32`, header length `u32`,
//! JSON header (config, tensor table, free-form metadata, training-state
//! flag), then the parameters as `f32` in table order, followed by the two
//! optimizer moment vectors when training state is present.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{Denoiser, DenoiserConfig, DenoiserError, ParamEntry};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Optimizer state needed to resume training exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Denoiser<f32>,
    /// Owner-defined metadata (schedule, feature statistics, skeleton).
    pub meta: serde_json::Value,
    pub train: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: DenoiserConfig,
    tensors: Vec<ParamEntry>,
    meta: serde_json::Value,
    train_step: Option<u64>,
}

fn bad(msg: impl Into<String>) -> DenoiserError {
    DenoiserError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), DenoiserError> {
        let header = Header {
            config: self.model.config,
            tensors: self.model.layout.entries.clone(),
            meta: self.meta.clone(),
            train_step: self.train.as_ref().map(|t| t.step),
        };
        let json = serde_json::to_vec(&header).map_err(|e| bad(e.to_string()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        w.write_u32::<LittleEndian>(json.len() as u32)?;
        w.write_all(&json)?;
        let mut blob = |values: &[f32]| -> std::io::Result<()> {
            for v in values {
                w.write_f32::<LittleEndian>(*v)?;
            }
            Ok(())
        };
        blob(&self.model.params)?;
        if let Some(t) = &self.train {
            if t.m.len() != self.model.params.len() || t.v.len() != self.model.params.len() {
                return Err(bad("optimizer moments do not match the parameters"));
            }
            blob(&t.m)?;
            blob(&t.v)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, DenoiserError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| bad(e.to_string()))?;
        let mut model = Denoiser::init(header.config, 0)?;
        if model.layout.entries != header.tensors {
            return Err(bad("tensor table does not match the configured layout"));
        }
        let total = model.params.len();
        let mut blob = |n: usize| -> std::io::Result<Vec<f32>> {
            let mut v = vec![0f32; n];
            r.read_f32_into::<LittleEndian>(&mut v)?;
            Ok(v)
        };
        model.params = blob(total)?;
        let train = match header.train_step {
            Some(step) => Some(TrainState {
                step,
                m: blob(total)?,
                v: blob(total)?,
            }),
            None => None,
        };
        Ok(Checkpoint {
            model,
            meta: header.meta,
            train,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DenoiserError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DenoiserError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
