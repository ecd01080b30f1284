//! Binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    4 bytes  "MOEN"
//! version  u32      currently 1; readers reject anything else
//! man_len  u64      byte length of the manifest
//! manifest JSON     {"meta": <caller-defined>, "tensors": [{name, shape, offset}, ...]}
//! blobs             concatenated f64 little-endian payloads
//! ```
//!
//! `offset` is relative to the start of the blob section; blob length is
//! `product(shape) * 8`. The same container backs model checkpoints and
//! dataset split files — only `meta` differs.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

pub const MAGIC: [u8; 4] = *b"MOEN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest<M> {
    meta: M,
    tensors: Vec<TensorEntry>,
}

/// Serialize named tensors plus caller metadata into one byte blob.
pub fn write_archive<M: Serialize>(meta: &M, tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Vec<u8> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, shape, data) in tensors {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        entries.push(TensorEntry { name: name.clone(), shape: shape.clone(), offset });
        offset += (data.len() * 8) as u64;
    }
    let manifest = Manifest { meta, tensors: entries };
    let manifest_json = serde_json::to_vec(&manifest).expect("manifest serialization");

    let mut out = Vec::with_capacity(16 + manifest_json.len() + offset as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_json);
    for (_, _, data) in tensors {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Tensor entries paired with their decoded payloads.
pub type ArchiveTensors = Vec<(TensorEntry, Vec<f64>)>;

/// Parse an archive, returning the metadata and every tensor with its data.
pub fn read_archive<M: DeserializeOwned>(bytes: &[u8]) -> Result<(M, ArchiveTensors)> {
    if bytes.len() < 16 {
        return Err(ModelError::Truncated { context: "header".into() }.into());
    }
    if bytes[0..4] != MAGIC {
        return Err(ModelError::BadMagic.into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(ModelError::UnsupportedVersion { got: version }.into());
    }
    let man_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let man_end = 16usize.checked_add(man_len).ok_or(ModelError::Truncated { context: "manifest length".into() })?;
    if bytes.len() < man_end {
        return Err(ModelError::Truncated { context: "manifest".into() }.into());
    }
    let manifest: Manifest<M> = serde_json::from_slice(&bytes[16..man_end])
        .map_err(|e| ModelError::Manifest(e.to_string()))?;

    let blob = &bytes[man_end..];
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for entry in manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + n * 8;
        if end > blob.len() {
            return Err(ModelError::Truncated { context: format!("tensor {}", entry.name) }.into());
        }
        let data: Vec<f64> = blob[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((entry, data));
    }
    Ok((manifest.meta, out))
}
