//! Checkpoint files: a header line carrying the format version and a SHA-256
//! of the body, followed by a JSON body.

use std::path::Path;

use hcmarl_core::marl::TrainerState;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "hcmarl-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub seed: u64,
    /// Rendered run config the state was trained under.
    pub config: String,
    pub state: TrainerState,
}

impl Checkpoint {
    pub fn new(seed: u64, config: String, state: TrainerState) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            seed,
            config,
            state,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let body = serde_json::to_string(self).map_err(|e| HarnessError::Integrity {
            path: "<memory>".into(),
            msg: format!("cannot serialize: {e}"),
        })?;
        let digest = hex::encode(Sha256::digest(body.as_bytes()));
        Ok(
            format!("{MAGIC} format_version={CHECKPOINT_VERSION} sha256={digest}\n{body}\n")
                .into_bytes(),
        )
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let integrity = |msg: String| HarnessError::Integrity {
            path: path.to_string(),
            msg,
        };
        let text = std::str::from_utf8(bytes).map_err(|_| integrity("not UTF-8".into()))?;
        let (header, rest) = text
            .split_once('\n')
            .ok_or_else(|| integrity("missing header line".into()))?;
        let mut fields = header.split(' ');
        if fields.next() != Some(MAGIC) {
            return Err(integrity("not a checkpoint file".into()));
        }
        let version = fields
            .next()
            .and_then(|f| f.strip_prefix("format_version="))
            .ok_or_else(|| integrity("header lacks format_version".into()))?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(HarnessError::Version {
                path: path.to_string(),
                found: version.to_string(),
                expected: CHECKPOINT_VERSION,
            });
        }
        let digest = fields
            .next()
            .and_then(|f| f.strip_prefix("sha256="))
            .ok_or_else(|| integrity("header lacks sha256".into()))?;
        let body = rest
            .strip_suffix('\n')
            .ok_or_else(|| integrity("truncated body".into()))?;
        if hex::encode(Sha256::digest(body.as_bytes())) != digest {
            return Err(integrity("checksum mismatch".into()));
        }
        let ck: Checkpoint =
            serde_json::from_str(body).map_err(|e| integrity(format!("malformed body: {e}")))?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(HarnessError::Version {
                path: path.to_string(),
                found: ck.format_version.to_string(),
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(ck)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }

    /// Writes through a temporary file so an interrupted save never leaves a
    /// partial checkpoint in place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| HarnessError::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
    }
}

/// Loads, re-serializes and byte-compares a checkpoint file.
pub fn verify_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    let ck = Checkpoint::from_bytes(&bytes, &path.display().to_string())?;
    if ck.to_bytes()? != bytes {
        return Err(HarnessError::Integrity {
            path: path.display().to_string(),
            msg: "re-serialized checkpoint differs from the file".into(),
        });
    }
    Ok(ck)
}
