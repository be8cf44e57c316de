//! Versioned weight files.
//!
//! Layout: 4-byte magic, little-endian `u32` format version, `u32` header length, a JSON
//! header (descriptor, normalization, provenance, tensor table), then every parameter and
//! buffer tensor in table order as little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Descriptor, Layout, NetWeights, TensorInfo, TrainMeta};
use super::windows::FeatureStats;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RLNW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    descriptor: Descriptor,
    stats: FeatureStats,
    meta: TrainMeta,
    params: Vec<TensorInfo>,
    buffers: Vec<TensorInfo>,
}

pub fn weights_to_bytes(w: &NetWeights) -> Result<Vec<u8>> {
    let layout = w.layout();
    if w.params.len() != layout.param_len || w.buffers.len() != layout.buffer_len {
        return Err(Error::ShapeMismatch(format!(
            "weights hold {} + {} values, descriptor needs {} + {}",
            w.params.len(),
            w.buffers.len(),
            layout.param_len,
            layout.buffer_len
        )));
    }
    let header = serde_json::to_vec(&Header {
        descriptor: w.descriptor.clone(),
        stats: w.stats,
        meta: w.meta.clone(),
        params: layout.params,
        buffers: layout.buffers,
    })?;
    let mut out = Vec::with_capacity(12 + header.len() + 4 * (w.params.len() + w.buffers.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in w.params.iter().chain(&w.buffers) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("four bytes")))
        .ok_or_else(|| Error::CorruptWeights("truncated preamble".into()))
}

/// Parses a weight file. With `expected = Some(d)` the stored architecture must equal `d`.
pub fn weights_from_bytes(bytes: &[u8], expected: Option<&Descriptor>) -> Result<NetWeights> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::CorruptWeights("missing magic bytes".into()));
    }
    let version = u32_at(bytes, 4)?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let hlen = u32_at(bytes, 8)? as usize;
    let body = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| Error::CorruptWeights("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(body).map_err(|e| Error::CorruptWeights(format!("bad header: {e}")))?;
    if let Some(d) = expected {
        if *d != header.descriptor {
            return Err(Error::ArchitectureMismatch(format!(
                "file holds {:?}, expected {:?}",
                header.descriptor, d
            )));
        }
    }
    header
        .descriptor
        .validate()
        .map_err(|e| Error::CorruptWeights(format!("bad descriptor: {e}")))?;
    let layout = Layout::new(&header.descriptor);
    if layout.params != header.params || layout.buffers != header.buffers {
        return Err(Error::ArchitectureMismatch(
            "tensor table disagrees with the descriptor".into(),
        ));
    }
    let data = &bytes[12 + hlen..];
    let count = layout.param_len + layout.buffer_len;
    if data.len() != 4 * count {
        return Err(Error::CorruptWeights(format!(
            "expected {} tensor bytes, found {}",
            4 * count,
            data.len()
        )));
    }
    let values: Vec<f64> = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::CorruptWeights("non-finite tensor value".into()));
    }
    let (params, buffers) = values.split_at(layout.param_len);
    Ok(NetWeights {
        descriptor: header.descriptor,
        stats: header.stats,
        meta: header.meta,
        params: params.to_vec(),
        buffers: buffers.to_vec(),
    })
}

pub fn save_weights(path: &Path, w: &NetWeights) -> Result<()> {
    fs::write(path, weights_to_bytes(w)?).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path, expected: Option<&Descriptor>) -> Result<NetWeights> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    weights_from_bytes(&bytes, expected)
}
