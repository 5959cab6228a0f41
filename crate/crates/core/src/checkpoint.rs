//! Checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then every array as little-endian `f64` in manifest order. The
//! header records the payload length and its SHA-256 digest.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scaling::FeatureScaler;

pub const MAGIC: &[u8; 8] = b"MELDIFF\0";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Diffusion,
    Vocoder,
}

impl CheckpointKind {
    fn name(self) -> &'static str {
        match self {
            CheckpointKind::Diffusion => "diffusion",
            CheckpointKind::Vocoder => "vocoder",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub step: u64,
    pub config: ExperimentConfig,
    pub scaler: FeatureScaler,
    /// Named parameter sets, such as the weights and their moving average.
    pub groups: Vec<(String, ParamStore)>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    group: String,
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: CheckpointKind,
    step: u64,
    config: ExperimentConfig,
    scaler: FeatureScaler,
    arrays: Vec<ArrayEntry>,
    payload_len: u64,
    payload_sha256: String,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

impl Checkpoint {
    pub fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Kind { expected: format!("{} checkpoint", kind.name()), found: self.kind.name().into() });
        }
        Ok(())
    }

    pub fn group(&self, name: &str) -> Result<&ParamStore> {
        self.groups
            .iter()
            .find(|(g, _)| g == name)
            .map(|(_, p)| p)
            .ok_or_else(|| corrupt(format!("missing parameter group `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut arrays = Vec::new();
        let mut payload = Vec::new();
        for (group, store) in &self.groups {
            for (name, a) in store.iter() {
                arrays.push(ArrayEntry { group: group.clone(), name: name.into(), shape: a.shape().to_vec() });
                payload.extend(a.iter().flat_map(|v| v.to_le_bytes()));
            }
        }
        let header = Header {
            kind: self.kind,
            step: self.step,
            config: self.config.clone(),
            scaler: self.scaler.clone(),
            arrays,
            payload_len: payload.len() as u64,
            payload_sha256: hex::encode(Sha256::digest(&payload)),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREAMBLE {
            return Err(corrupt("file is shorter than the checkpoint preamble"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion { found: version, supported: FORMAT_VERSION });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let header_end = (PREAMBLE as u64)
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len() as u64)
            .ok_or_else(|| corrupt("truncated header"))? as usize;
        let header: Header =
            serde_json::from_slice(&bytes[PREAMBLE..header_end]).map_err(|e| corrupt(format!("bad header: {e}")))?;
        let payload = &bytes[header_end..];
        if payload.len() as u64 != header.payload_len {
            return Err(corrupt(format!("payload is {} bytes, header says {}", payload.len(), header.payload_len)));
        }
        if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
            return Err(corrupt("payload digest mismatch"));
        }

        let mut groups: Vec<(String, ParamStore)> = Vec::new();
        let mut offset = 0usize;
        for entry in header.arrays {
            let n = entry
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| corrupt("array size overflows"))?;
            let chunk = payload
                .get(offset..offset + n)
                .ok_or_else(|| corrupt(format!("array `{}` runs past the payload", entry.name)))?;
            offset += n;
            let values = chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let array = ArrayD::from_shape_vec(IxDyn(&entry.shape), values).map_err(|e| corrupt(e.to_string()))?;
            match groups.iter_mut().find(|(g, _)| *g == entry.group) {
                Some((_, store)) => store.insert(entry.name, array),
                None => {
                    let mut store = ParamStore::new();
                    store.insert(entry.name, array);
                    groups.push((entry.group, store));
                }
            }
        }
        if offset != payload.len() {
            return Err(corrupt("payload has trailing bytes"));
        }
        Ok(Self { kind: header.kind, step: header.step, config: header.config, scaler: header.scaler, groups })
    }

    /// Writes to a sibling temporary file, then renames it into place.
    pub fn save(&self, path: impl AsRef<Path>, overwrite: bool) -> Result<()> {
        let path = path.as_ref();
        if path.exists() && !overwrite {
            return Err(Error::Exists(path.to_path_buf()));
        }
        let bytes = self.to_bytes()?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
