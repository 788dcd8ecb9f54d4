//! Checkpoint format: one line of compact UTF-8 JSON (the header), a `\n`,
//! then every parameter and buffer as little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NnError, ParamStore};
use crate::fsutil::write_atomic;

const FORMAT: &str = "hrrp-lab-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// `param` or `buffer`.
    pub kind: String,
    pub shape: Vec<usize>,
    /// Offset into the data section, in `f64` units.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    /// Free-form model description (the model spec).
    pub model: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

fn layout(store: &ParamStore) -> Vec<TensorEntry> {
    let mut offset = 0;
    let mut out = Vec::new();
    for (name, t) in store.params() {
        out.push(TensorEntry {
            name: name.to_string(),
            kind: "param".into(),
            shape: t.shape().to_vec(),
            offset,
            len: t.len(),
        });
        offset += t.len();
    }
    for (name, b) in store.buffers() {
        out.push(TensorEntry {
            name: name.to_string(),
            kind: "buffer".into(),
            shape: vec![b.len()],
            offset,
            len: b.len(),
        });
        offset += b.len();
    }
    out
}

/// Serializes a checkpoint to bytes.
pub fn checkpoint_bytes(model: &serde_json::Value, store: &ParamStore) -> Vec<u8> {
    let header = CheckpointHeader {
        format: FORMAT.into(),
        version: VERSION,
        model: model.clone(),
        tensors: layout(store),
    };
    let mut bytes = serde_json::to_vec(&header).expect("header serializes");
    bytes.push(b'\n');
    for (_, t) in store.params() {
        for v in &t.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    for (_, b) in store.buffers() {
        for v in b {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub fn save_checkpoint(path: &Path, model: &serde_json::Value, store: &ParamStore) -> Result<(), NnError> {
    write_atomic(path, &checkpoint_bytes(model, store)).map_err(|source| NnError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses a checkpoint into its header and flat data section.
pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, Vec<f64>), NnError> {
    let bytes = fs::read(path).map_err(|source| NnError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_checkpoint(&bytes)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<f64>), NnError> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| NnError::Checkpoint("missing header terminator".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| NnError::Checkpoint(format!("bad header: {e}")))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    let body = &bytes[nl + 1..];
    if !body.len().is_multiple_of(8) {
        return Err(NnError::Checkpoint("data section is not a whole number of f64".into()));
    }
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let expected: usize = header.tensors.iter().map(|t| t.len).sum();
    if expected != data.len() {
        return Err(NnError::Checkpoint(format!(
            "header describes {expected} values, file holds {}",
            data.len()
        )));
    }
    Ok((header, data))
}

/// Copies checkpoint data into a store with the same layout (names, kinds,
/// shapes and order), returning the header.
pub fn load_checkpoint(path: &Path, store: &mut ParamStore) -> Result<CheckpointHeader, NnError> {
    let (header, data) = read_checkpoint(path)?;
    load_into(&header, &data, store)?;
    Ok(header)
}

pub fn load_into(header: &CheckpointHeader, data: &[f64], store: &mut ParamStore) -> Result<(), NnError> {
    let expected = layout(store);
    if expected.len() != header.tensors.len() {
        return Err(NnError::Checkpoint(format!(
            "model has {} tensors, checkpoint {}",
            expected.len(),
            header.tensors.len()
        )));
    }
    for (e, h) in expected.iter().zip(&header.tensors) {
        if e.name != h.name || e.kind != h.kind || e.shape != h.shape || e.len != h.len {
            return Err(NnError::Checkpoint(format!(
                "tensor mismatch: model {} {:?}, checkpoint {} {:?}",
                e.name, e.shape, h.name, h.shape
            )));
        }
        if h.offset + h.len > data.len() {
            return Err(NnError::Checkpoint(format!("tensor {} out of bounds", h.name)));
        }
    }
    let mut entries = header.tensors.iter();
    for t in store.params_mut() {
        let h = entries.next().expect("checked length");
        t.values.copy_from_slice(&data[h.offset..h.offset + h.len]);
    }
    for b in store.buffers_mut() {
        let h = entries.next().expect("checked length");
        b.copy_from_slice(&data[h.offset..h.offset + h.len]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BatchNorm, Linear};

    fn store() -> ParamStore {
        let mut rng = crate::rng::stream(4, "ckpt");
        let mut s = ParamStore::new();
        Linear::new(&mut s, "fc", 3, 2, true, &mut rng);
        let bn = BatchNorm::new(&mut s, "bn", 2, true);
        s.buffer_mut(bn.running_mean)[1] = 0.25;
        s
    }

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let src = store();
        let model = serde_json::json!({"family": "test"});
        save_checkpoint(&path, &model, &src).unwrap();
        let mut dst = ParamStore::new();
        Linear::zeros(&mut dst, "fc", 3, 2);
        BatchNorm::new(&mut dst, "bn", 2, true);
        let header = load_checkpoint(&path, &mut dst).unwrap();
        assert_eq!(header.model, model);
        assert_eq!(dst, src);
        assert_eq!(fs::read(&path).unwrap(), checkpoint_bytes(&model, &dst));
    }

    #[test]
    fn rejects_layout_mismatch_and_truncation() {
        let src = store();
        let bytes = checkpoint_bytes(&serde_json::Value::Null, &src);
        let (h, d) = parse_checkpoint(&bytes).unwrap();
        let mut other = ParamStore::new();
        Linear::zeros(&mut other, "fc", 3, 3);
        assert!(load_into(&h, &d, &mut other).is_err());
        assert!(parse_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        assert!(parse_checkpoint(&bytes[..bytes.len() - 8]).is_err());
        assert!(parse_checkpoint(b"{}").is_err());
    }
}
