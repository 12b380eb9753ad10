//! Parameter checkpoints: a flat little-endian f32 blob plus a JSON index of
//! `(name, shape, offset)` records, offsets counted in elements.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::WtFormer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

fn index_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes `<path>` (values) and `<path>.json` with the extension replaced (index).
pub fn save_checkpoint(model: &WtFormer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut blob = Vec::new();
    let mut index = Vec::new();
    let mut offset = 0;
    model.visit(&mut |name, shape, data, _| {
        index.push(CheckpointEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset,
        });
        offset += data.len();
        for &v in data {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    });
    write_atomic(path, &blob)?;
    write_atomic(&index_path(path), serde_json::to_string_pretty(&index)?.as_bytes())
}

/// Loads values into `model`; names and shapes must match exactly.
pub fn load_checkpoint(model: &mut WtFormer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let malformed = |reason: String| Error::Malformed {
        what: "checkpoint",
        path: path.to_path_buf(),
        reason,
    };
    let blob = fs::read(path).map_err(|e| Error::io(path, e))?;
    let idx_path = index_path(path);
    let text = fs::read_to_string(&idx_path).map_err(|e| Error::io(&idx_path, e))?;
    let index: Vec<CheckpointEntry> = serde_json::from_str(&text)?;
    if blob.len() % 4 != 0 {
        return Err(malformed(format!("{} bytes is not a whole number of f32 values", blob.len())));
    }
    let values: Vec<f32> = blob.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let mut cursor = 0;
    let mut failure: Option<String> = None;
    model.visit_mut(&mut |name, shape, data, _| {
        if failure.is_some() {
            return;
        }
        let Some(entry) = index.get(cursor) else {
            failure = Some(format!("missing tensor {name}"));
            return;
        };
        cursor += 1;
        if entry.name != name || entry.shape != shape {
            failure = Some(format!("expected {name} {shape:?}, found {} {:?}", entry.name, entry.shape));
            return;
        }
        let Some(src) = values.get(entry.offset..entry.offset + data.len()) else {
            failure = Some(format!("{name} runs past the end of the blob"));
            return;
        };
        for (d, &s) in data.iter_mut().zip(src) {
            *d = f64::from(s);
        }
    });
    if let Some(reason) = failure {
        return Err(malformed(reason));
    }
    if cursor != index.len() {
        return Err(malformed(format!("{} extra tensors in index", index.len() - cursor)));
    }
    Ok(())
}
