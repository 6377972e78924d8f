//! Model artifact container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "CETMODEL"
//! version  u32
//! length   u64      payload bytes
//! crc32    u32      of the payload
//! payload  JSON
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CetError, Result};
use crate::featurize::FEATURE_NAMES;
use crate::labeler::CetRuleConfig;
use crate::learners::{Family, TrainedModel};

pub const MAGIC: &[u8; 8] = b"CETMODEL";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub family: Family,
    /// Column order the model expects.
    pub feature_names: Vec<String>,
    pub rules: CetRuleConfig,
    pub trained: TrainedModel,
}

impl ModelArtifact {
    pub fn new(trained: TrainedModel, rules: CetRuleConfig) -> Self {
        ModelArtifact {
            family: trained.family(),
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            rules,
            trained,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload =
            serde_json::to_vec(self).map_err(|e| CetError::CorruptArtifact(format!("cannot encode: {e}")))?;
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(CetError::CorruptArtifact("truncated header".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(CetError::CorruptArtifact("not a model artifact".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let version = word(8);
        if version != FORMAT_VERSION {
            return Err(CetError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let crc = word(20);
        let payload = &bytes[HEADER_LEN..];
        if payload.len() as u64 != len {
            return Err(CetError::CorruptArtifact(format!(
                "payload is {} bytes, header says {len}",
                payload.len()
            )));
        }
        if crc32fast::hash(payload) != crc {
            return Err(CetError::CorruptArtifact("checksum mismatch".into()));
        }
        let art: ModelArtifact = serde_json::from_slice(payload)
            .map_err(|e| CetError::CorruptArtifact(format!("cannot decode: {e}")))?;
        if art
            .feature_names
            .iter()
            .map(String::as_str)
            .ne(FEATURE_NAMES.iter().copied())
        {
            return Err(CetError::CorruptArtifact(
                "feature manifest differs from this build".into(),
            ));
        }
        Ok(art)
    }
}

pub fn save_model(artifact: &ModelArtifact, path: &Path) -> Result<()> {
    fs::write(path, artifact.to_bytes()?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelArtifact> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CetError::MissingInput(path.display().to_string()),
        _ => CetError::Io(e),
    })?;
    ModelArtifact::from_bytes(&bytes)
}
