//! Checkpoints: magic line, little-endian u64 manifest length, JSON
//! manifest, then the raw little-endian f64 payload in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"IBXCKPT\n";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements from the start of the payload.
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub tensors: Vec<ManifestEntry>,
}

pub fn encode_checkpoint(params: &ParamSet) -> Vec<u8> {
    let mut offset = 0;
    let tensors = params
        .iter()
        .map(|(name, t)| {
            let e = ManifestEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
                len: t.len(),
            };
            offset += t.len();
            e
        })
        .collect();
    let manifest = serde_json::to_vec(&Manifest {
        version: CHECKPOINT_VERSION,
        tensors,
    })
    .expect("manifest serializes");
    let mut out = Vec::with_capacity(16 + manifest.len() + 8 * offset);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for (_, t) in params.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamSet> {
    let corrupt = |m: &str| Error::CorruptManifest(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("missing checkpoint header"));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if mlen > body.len() {
        return Err(corrupt("manifest length exceeds file size"));
    }
    let (manifest_bytes, payload) = body.split_at(mlen);
    let raw: serde_json::Value = serde_json::from_slice(manifest_bytes)
        .map_err(|e| Error::CorruptManifest(e.to_string()))?;
    let found = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| corrupt("manifest has no version"))?;
    if found != CHECKPOINT_VERSION as u64 {
        return Err(Error::VersionMismatch {
            found: found.min(u32::MAX as u64) as u32,
            expected: CHECKPOINT_VERSION,
        });
    }
    let manifest: Manifest =
        serde_json::from_value(raw).map_err(|e| Error::CorruptManifest(e.to_string()))?;
    let mut expected_offset = 0usize;
    for e in &manifest.tensors {
        let numel: usize = e.shape.iter().product();
        if numel != e.len {
            return Err(Error::ShapeMismatch {
                name: e.name.clone(),
                detail: format!(
                    "shape {:?} holds {numel} values but the entry stores {}",
                    e.shape, e.len
                ),
            });
        }
        if e.offset != expected_offset {
            return Err(Error::CorruptManifest(format!(
                "tensor `{}` at offset {} (expected {expected_offset})",
                e.name, e.offset
            )));
        }
        expected_offset += e.len;
    }
    if payload.len() != expected_offset * 8 {
        return Err(Error::PayloadLength {
            expected: expected_offset * 8,
            found: payload.len(),
        });
    }
    let mut params = ParamSet::new();
    for e in &manifest.tensors {
        if params.contains(&e.name) {
            return Err(Error::CorruptManifest(format!(
                "duplicate tensor `{}`",
                e.name
            )));
        }
        let data = payload[e.offset * 8..(e.offset + e.len) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
    }
    Ok(params)
}

/// Writes via a temporary sibling and a rename so readers never see a
/// partial file.
pub fn checkpoint_save(params: &ParamSet, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode_checkpoint(params)).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_load(path: &Path) -> Result<ParamSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Checks `loaded` against the names and shapes of `template`.
pub fn conform(template: &ParamSet, loaded: &ParamSet) -> Result<ParamSet> {
    let mut out = ParamSet::new();
    for (name, t) in template.iter() {
        let got = loaded
            .get(name)
            .ok_or_else(|| Error::CorruptManifest(format!("checkpoint lacks tensor `{name}`")))?;
        if got.shape() != t.shape() {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                detail: format!(
                    "checkpoint has {:?}, model expects {:?}",
                    got.shape(),
                    t.shape()
                ),
            });
        }
        out.insert(name, got.clone());
    }
    if loaded.len() != template.len() {
        return Err(Error::CorruptManifest(format!(
            "checkpoint holds {} tensors, model expects {}",
            loaded.len(),
            template.len()
        )));
    }
    Ok(out)
}
