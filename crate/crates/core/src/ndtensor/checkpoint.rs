//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "HFT1" | u32 version | [u8; 32] sha256(meta) | u32 meta_len | meta (JSON)
//! u32 block_count
//! per block: u32 name_len | name (UTF-8) | u32 ndim | u64 dim × ndim | f64 × numel
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::Tensor;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"HFT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("config digest does not match header")]
    DigestMismatch,
    #[error("checkpoint metadata: {0}")]
    Meta(#[from] serde_json::Error),
    #[error("malformed block {0}")]
    Malformed(String),
    #[error("missing parameter block `{0}`")]
    MissingBlock(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamBlock {
    pub fn from_tensor<T: Scalar>(name: impl Into<String>, t: &Tensor<T>) -> Self {
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            values: t.values().iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>, CheckpointError> {
        Tensor::new(&self.shape, self.values.iter().map(|&v| T::lit(v)).collect())
            .map_err(|e| CheckpointError::Malformed(format!("{}: {e}", self.name)))
    }
}

/// JSON metadata plus named parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub blocks: Vec<ParamBlock>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            blocks: Vec::new(),
        }
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.blocks.push(ParamBlock::from_tensor(name, t));
    }

    pub fn block(&self, name: &str) -> Result<&ParamBlock, CheckpointError> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| CheckpointError::MissingBlock(name.to_string()))
    }

    /// SHA-256 of the serialized metadata.
    pub fn digest(&self) -> Result<[u8; 32], CheckpointError> {
        let bytes = serde_json::to_vec(&self.meta)?;
        Ok(Sha256::digest(&bytes).into())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        let meta = serde_json::to_vec(&self.meta)?;
        let digest: [u8; 32] = Sha256::digest(&meta).into();
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&digest)?;
        write_len(&mut w, meta.len())?;
        w.write_all(&meta)?;
        write_len(&mut w, self.blocks.len())?;
        for b in &self.blocks {
            write_len(&mut w, b.name.len())?;
            w.write_all(b.name.as_bytes())?;
            write_len(&mut w, b.shape.len())?;
            for &d in &b.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in &b.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let mut digest = [0u8; 32];
        r.read_exact(&mut digest)?;
        let meta_len = read_u32(&mut r)? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let check: [u8; 32] = Sha256::digest(&meta).into();
        if check != digest {
            return Err(CheckpointError::DigestMismatch);
        }
        let meta: serde_json::Value = serde_json::from_slice(&meta)?;
        let count = read_u32(&mut r)? as usize;
        let mut blocks = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| CheckpointError::Malformed("non-UTF-8 block name".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut values = Vec::with_capacity(numel);
            for _ in 0..numel {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                values.push(f64::from_le_bytes(b));
            }
            blocks.push(ParamBlock { name, shape, values });
        }
        Ok(Self { meta, blocks })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn write_len<W: Write>(w: &mut W, n: usize) -> Result<(), CheckpointError> {
    let n = u32::try_from(n).map_err(|_| CheckpointError::Malformed("length overflow".into()))?;
    w.write_all(&n.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
