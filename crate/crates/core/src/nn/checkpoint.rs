//! Checkpoint container: one line of JSON header, then raw little-endian
//! `f32` blobs in manifest order. Offsets count from the first blob byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::fsio;

pub const FORMAT: &str = "fraglayer-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Architecture, dims, flags, seed and optimizer scalars.
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len() * 4;
        }
        let header = Header {
            format: FORMAT.to_string(),
            meta: self.meta.clone(),
            tensors: entries,
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        out.reserve(offset);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("missing header terminator".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..split])
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        if header.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format `{}` (expected `{FORMAT}`)",
                header.format
            )));
        }
        let blob = &bytes[split + 1..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut expected = 0;
        for e in header.tensors {
            let len: usize = e.shape.iter().product();
            if e.offset != expected {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` at offset {} (expected {expected})",
                    e.name, e.offset
                )));
            }
            let end = e.offset + len * 4;
            if end > blob.len() {
                return Err(Error::Checkpoint(format!("tensor `{}` truncated", e.name)));
            }
            let data = blob[e.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((e.name, Tensor::new(e.shape, data)?));
            expected = end;
        }
        if expected != blob.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last tensor",
                blob.len() - expected
            )));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}
