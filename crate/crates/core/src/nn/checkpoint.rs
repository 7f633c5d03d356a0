//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `PRTCKPT1`, a little-endian `u64` header length,
//! a JSON header, then parameters, Adam first moments and Adam second
//! moments as little-endian floats, and finally the SHA-256 of everything
//! before it.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adam::AdamState;
use super::config::{ModelConfig, TrainConfig};
use super::params::ModelParams;
use super::real::Real;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PRTCKPT1";
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    precision: String,
    model: ModelConfig,
    train: Option<TrainConfig>,
    epoch: usize,
    step: u64,
    n_params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub params: ModelParams<F>,
    pub adam: AdamState<F>,
    pub train: Option<TrainConfig>,
    /// Completed epochs.
    pub epoch: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

impl<F: Real> Checkpoint<F> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            precision: F::NAME.to_string(),
            model: self.params.config().clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            step: self.adam.step,
            n_params: self.params.len(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(48 + json.len() + 3 * F::BYTES * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for block in [self.params.data(), &self.adam.m, &self.adam.v] {
            for &x in block {
                x.write_le(&mut out);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let hlen = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
        let rest = &body[16..];
        if hlen > rest.len() {
            return Err(corrupt("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&rest[..hlen]).map_err(|e| corrupt(format!("bad header: {e}")))?;
        if header.precision != F::NAME {
            return Err(corrupt(format!(
                "checkpoint stores {} values, {} requested",
                header.precision,
                F::NAME
            )));
        }
        let data = &rest[hlen..];
        let n = header.n_params;
        if data.len() != 3 * n * F::BYTES {
            return Err(corrupt(format!(
                "expected {} payload bytes, found {}",
                3 * n * F::BYTES,
                data.len()
            )));
        }
        let read = |k: usize| -> Vec<F> {
            data[k * n * F::BYTES..(k + 1) * n * F::BYTES]
                .chunks_exact(F::BYTES)
                .map(F::read_le)
                .collect()
        };
        let params =
            ModelParams::from_data(&header.model, read(0)).map_err(|e| corrupt(e.to_string()))?;
        Ok(Self {
            params,
            adam: AdamState {
                m: read(1),
                v: read(2),
                step: header.step,
            },
            train: header.train,
            epoch: header.epoch,
        })
    }

    /// Writes through a temporary sibling file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
