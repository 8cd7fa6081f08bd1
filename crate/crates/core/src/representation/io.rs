//! Binary feature files.
//!
//! Layout, little-endian: magic `MPFT`, version `u32`, skeleton hash `u64`,
//! frames `u32`, dim `u32`, frame rate `f32`, then `frames × dim` `f32`
//! values in row-major order.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use serde::Serialize;

use super::{MotionFeatures, RepresentationError};

pub const FEATURE_MAGIC: &[u8; 4] = b"MPFT";
pub const FEATURE_VERSION: u32 = 1;

pub fn write_features<W: Write>(mut w: W, features: &MotionFeatures) -> Result<(), RepresentationError> {
    w.write_all(FEATURE_MAGIC)?;
    w.write_u32::<LittleEndian>(FEATURE_VERSION)?;
    w.write_u64::<LittleEndian>(features.skeleton_hash)?;
    w.write_u32::<LittleEndian>(features.frames() as u32)?;
    w.write_u32::<LittleEndian>(features.dim() as u32)?;
    w.write_f32::<LittleEndian>(features.frame_rate as f32)?;
    for v in features.data.iter() {
        w.write_f32::<LittleEndian>(*v as f32)?;
    }
    Ok(())
}

pub fn read_features<R: Read>(mut r: R) -> Result<MotionFeatures, RepresentationError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(RepresentationError::Format(format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FEATURE_VERSION {
        return Err(RepresentationError::Format(format!("unsupported version {version}")));
    }
    let skeleton_hash = r.read_u64::<LittleEndian>()?;
    let n = r.read_u32::<LittleEndian>()? as usize;
    let d = r.read_u32::<LittleEndian>()? as usize;
    let frame_rate = r.read_f32::<LittleEndian>()? as f64;
    let mut values = vec![0f32; n * d];
    r.read_f32_into::<LittleEndian>(&mut values)?;
    let data = Array2::from_shape_vec((n, d), values.into_iter().map(f64::from).collect())
        .map_err(|e| RepresentationError::Format(e.to_string()))?;
    Ok(MotionFeatures {
        data,
        skeleton_hash,
        frame_rate,
    })
}

#[derive(Serialize)]
struct FeatureJson<'a> {
    skeleton_hash: String,
    frame_rate: f64,
    frames: usize,
    dim: usize,
    rows: Vec<&'a [f64]>,
}

impl MotionFeatures {
    pub fn save(&self, path: &std::path::Path) -> Result<(), RepresentationError> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_features(file, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, RepresentationError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        read_features(file)
    }

    /// Human-readable export for debugging.
    pub fn to_json(&self) -> String {
        let rows = self
            .data
            .rows()
            .into_iter()
            .map(|r| r.to_slice().expect("standard layout"))
            .collect();
        serde_json::to_string_pretty(&FeatureJson {
            skeleton_hash: format!("{:016x}", self.skeleton_hash),
            frame_rate: self.frame_rate,
            frames: self.frames(),
            dim: self.dim(),
            rows,
        })
        .expect("features serialize")
    }
}
