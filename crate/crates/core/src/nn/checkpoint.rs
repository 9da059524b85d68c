//! Binary checkpoint container.
//!
//! Layout (all integers little endian):
//!
//! ```text
//! magic       8 bytes   "HRFCKPT\0"
//! version     u32
//! header_len  u64
//! header      header_len bytes of JSON {config, seed, param_count, metadata}
//! params      param_count f64 values
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HRFCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: MlpConfig,
    seed: u64,
    param_count: usize,
    #[serde(default)]
    metadata: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub net: Mlp,
    /// Free-form model metadata (source distributions for HRF models).
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn new(net: Mlp, seed: u64, metadata: serde_json::Value) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            seed,
            net,
            metadata,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.net.config().clone(),
            seed: self.seed,
            param_count: self.net.param_count(),
            metadata: self.metadata.clone(),
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + 8 * self.net.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in self.net.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let take = |from: usize, len: usize| {
            bytes
                .get(from..from + len)
                .ok_or_else(|| "truncated checkpoint".to_string())
        };
        if take(0, 8)? != MAGIC {
            return Err("not an hrf checkpoint (bad magic)".into());
        }
        let version = u32::from_le_bytes(take(8, 4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let header_len = u64::from_le_bytes(take(12, 8)?.try_into().expect("8 bytes")) as usize;
        let header: Header = serde_json::from_slice(take(20, header_len)?).map_err(|e| format!("bad header: {e}"))?;
        let start = 20 + header_len;
        let body = take(start, 8 * header.param_count)?;
        if bytes.len() != start + body.len() {
            return Err("trailing bytes after parameters".into());
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let net = Mlp::from_params(header.config, params).map_err(|e| e.to_string())?;
        Ok(Checkpoint {
            version,
            seed: header.seed,
            net,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        })
    }
}
