//! Binary model checkpoints.
//!
//! Layout: the magic bytes `DCKP`, a little-endian `u32` format version, a
//! little-endian `u64` manifest length, a JSON manifest (variant label,
//! dimensions, and the name/shape of every parameter in store order), then
//! one raw little-endian `f64` blob per parameter in the same order. Loading
//! rebuilds the model wiring from the manifest header and verifies that the
//! stored parameter list matches it name-for-name and shape-for-shape, so a
//! checkpoint from mismatched wiring is rejected rather than silently
//! misapplied.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::Variant;
use crate::error::{Error, Result};
use crate::model::Model;

pub const MAGIC: [u8; 4] = *b"DCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    variant: String,
    d_emb: usize,
    d_hidden: usize,
    vocab_size: usize,
    params: Vec<ParamEntry>,
}

/// Serialize a model to the checkpoint byte format.
pub fn to_bytes(model: &Model) -> Vec<u8> {
    let manifest = Manifest {
        variant: model.variant.label().to_string(),
        d_emb: model.d_emb,
        d_hidden: model.d_hidden,
        vocab_size: model.vocab_size,
        params: model
            .store
            .iter()
            .map(|p| ParamEntry { name: p.name.clone(), shape: p.shape.clone() })
            .collect(),
    };
    let manifest_json =
        serde_json::to_vec(&manifest).expect("manifest serialization cannot fail");
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_json);
    for p in model.store.iter() {
        for &x in &p.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Deserialize a model from checkpoint bytes.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let corrupt = |msg: String| Error::Corrupt(msg);
    let take = |off: &mut usize, n: usize| -> Result<std::ops::Range<usize>> {
        let start = *off;
        let end = start
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt(format!("truncated at byte {start}")))?;
        *off = end;
        Ok(start..end)
    };
    let mut off = 0usize;
    let magic = &bytes[take(&mut off, 4)?];
    if magic != MAGIC {
        return Err(corrupt(format!("bad magic {magic:?}")));
    }
    let version = u32::from_le_bytes(bytes[take(&mut off, 4)?].try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let manifest_len =
        u64::from_le_bytes(bytes[take(&mut off, 8)?].try_into().unwrap()) as usize;
    let manifest: Manifest = serde_json::from_slice(&bytes[take(&mut off, manifest_len)?])
        .map_err(|e| corrupt(format!("manifest is not valid JSON: {e}")))?;

    let variant = Variant::parse(&manifest.variant)
        .map_err(|_| corrupt(format!("unknown variant label `{}`", manifest.variant)))?;
    // Rebuild the wiring from the header, then require the stored parameter
    // list to match it exactly; the seed is irrelevant because every value
    // is overwritten below.
    let mut model =
        Model::new(variant, manifest.d_emb, manifest.d_hidden, manifest.vocab_size, 0)
            .map_err(|e| corrupt(format!("manifest dimensions rejected: {e}")))?;
    if manifest.params.len() != model.store.len() {
        return Err(corrupt(format!(
            "manifest lists {} parameters, wiring has {}",
            manifest.params.len(),
            model.store.len()
        )));
    }
    for (i, entry) in manifest.params.iter().enumerate() {
        let p = model.store.at_mut(i);
        if entry.name != p.name || entry.shape != p.shape {
            return Err(corrupt(format!(
                "parameter {i} is `{}` {:?} in the manifest but `{}` {:?} in the wiring",
                entry.name, entry.shape, p.name, p.shape
            )));
        }
        let count = p.data.len();
        let range = take(&mut off, count * 8)?;
        let blob = &bytes[range];
        for (j, chunk) in blob.chunks_exact(8).enumerate() {
            p.data[j] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if off != bytes.len() {
        return Err(corrupt(format!(
            "{} trailing bytes after the last parameter",
            bytes.len() - off
        )));
    }
    Ok(model)
}

/// Write a model checkpoint to disk.
pub fn save(path: &Path, model: &Model) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

/// Read a model checkpoint from disk.
pub fn load(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
