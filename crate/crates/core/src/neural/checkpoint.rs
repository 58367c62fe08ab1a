//! Checkpoint container.
//!
//! ```text
//! "ADPTNET1" | u64 LE header length | UTF-8 JSON header | f32 LE payload
//! ```
//!
//! Tensor offsets in the header are byte offsets into the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NeuralError, ParamTree, Tensor};

const MAGIC: &[u8; 8] = b"ADPTNET1";

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<Entry>,
    #[serde(default)]
    frozen: Vec<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    manifest: serde_json::Value,
}

/// A loaded checkpoint: parameters plus the free-form manifest.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ParamTree,
    pub manifest: serde_json::Value,
}

pub fn encode(tree: &ParamTree, manifest: &serde_json::Value) -> Result<Vec<u8>, NeuralError> {
    let mut entries = Vec::with_capacity(tree.len());
    let mut payload = Vec::new();
    for (name, t) in tree.iter() {
        entries.push(Entry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: payload.len(),
        });
        for &x in t.data() {
            payload.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let header = Header {
        tensors: entries,
        frozen: tree.frozen().iter().cloned().collect(),
        manifest: manifest.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, NeuralError> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(NeuralError::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(NeuralError::Truncated("missing header length".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + hlen {
        return Err(NeuralError::Truncated(format!(
            "header needs {hlen} bytes, file has {}",
            bytes.len() - 16
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + hlen])?;
    let payload = &bytes[16 + hlen..];
    let mut tree = ParamTree::new();
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let nbytes = n * 4;
        if e.offset.checked_add(nbytes).is_none_or(|end| end > payload.len()) {
            return Err(NeuralError::OutOfBounds {
                name: e.name,
                offset: e.offset,
                bytes: nbytes,
                payload: payload.len(),
            });
        }
        let data = payload[e.offset..e.offset + nbytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        tree.insert(e.name, Tensor::new(e.shape, data)?);
    }
    for f in &header.frozen {
        tree.freeze(f);
    }
    Ok(Checkpoint {
        params: tree,
        manifest: header.manifest,
    })
}

pub fn save_checkpoint(
    tree: &ParamTree,
    manifest: &serde_json::Value,
    path: impl AsRef<Path>,
) -> Result<(), NeuralError> {
    let bytes = encode(tree, manifest)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, NeuralError> {
    decode(&fs::read(path)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamTree, NeuralError> {
    Ok(read_checkpoint(path)?.params)
}

/// Overwrite the entries of `target` from a checkpoint, requiring names and shapes to agree.
pub fn load_into(target: &mut ParamTree, path: impl AsRef<Path>) -> Result<(), NeuralError> {
    let src = load_checkpoint(path)?;
    let names: Vec<String> = target.names().cloned().collect();
    for name in names {
        let t = src.get(&name)?;
        let cur = target.get_mut(&name)?;
        if t.shape() != cur.shape() {
            return Err(NeuralError::LoadShape {
                name,
                expected: cur.shape().to_vec(),
                found: t.shape().to_vec(),
            });
        }
        *cur = t.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree() -> ParamTree {
        let mut t = ParamTree::new();
        t.insert("a", Tensor::matrix(2, 2, vec![1.0, -2.5, 3.25, 0.1]));
        t.insert("b", Tensor::new(vec![3], vec![7.0, 8.0, 9.0]).unwrap());
        t.freeze("a");
        t
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&tree(), &serde_json::Value::Null).unwrap();
        bytes[0] = b'X';
        assert_eq!(decode(&bytes).unwrap_err().to_string(), "bad magic");
    }

    #[test]
    fn truncated_payload_is_a_bounds_error() {
        let bytes = encode(&tree(), &serde_json::Value::Null).unwrap();
        let cut = &bytes[..bytes.len() - 4];
        assert!(matches!(
            decode(cut).unwrap_err(),
            NeuralError::OutOfBounds { .. }
        ));
    }

    #[test]
    fn frozen_set_and_manifest_survive() {
        let m = serde_json::json!({"kind": "base"});
        let c = decode(&encode(&tree(), &m).unwrap()).unwrap();
        assert!(c.params.is_frozen("a"));
        assert!(!c.params.is_frozen("b"));
        assert_eq!(c.manifest, m);
    }

    #[test]
    fn load_into_rejects_shape_change() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        save_checkpoint(&tree(), &serde_json::Value::Null, &p).unwrap();
        let mut target = ParamTree::new();
        target.insert("a", Tensor::zeros(&[4, 1]));
        assert!(matches!(
            load_into(&mut target, &p).unwrap_err(),
            NeuralError::LoadShape { .. }
        ));
        let mut missing = ParamTree::new();
        missing.insert("zzz", Tensor::zeros(&[1]));
        assert!(matches!(
            load_into(&mut missing, &p).unwrap_err(),
            NeuralError::MissingParam(_)
        ));
    }
}
