//! EMB1 binary matrix format (little-endian):
//! magic "EMB1" · u32 rows · u32 cols · u32 meta_len · meta_len bytes of
//! UTF-8 JSON ("ids", "model", "reduction") · rows x cols binary32, row-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingError, EmbeddingMatrix, ReductionSpec};

const MAGIC: &[u8; 4] = b"EMB1";

#[derive(Serialize, Deserialize)]
struct Meta {
    ids: Vec<String>,
    model: String,
    reduction: ReductionSpec,
}

/// Serializes a matrix to EMB1 bytes; deterministic for identical inputs.
pub fn matrix_to_bytes(m: &EmbeddingMatrix) -> Result<Vec<u8>, EmbeddingError> {
    if m.ids().is_empty() {
        return Err(EmbeddingError::EmptyMatrix);
    }
    let meta = Meta {
        ids: m.ids().to_vec(),
        model: m.spec.model.clone(),
        reduction: m.reduction.clone(),
    };
    let meta_bytes = serde_json::to_vec(&meta).map_err(|e| EmbeddingError::MetaParse(e.to_string()))?;
    let rows = m.rows();
    let cols = m.dim();
    let mut out = Vec::with_capacity(16 + meta_bytes.len() + rows * cols * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out.extend_from_slice(&(meta_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_bytes);
    for (i, v) in m.data().iter().enumerate() {
        if !v.is_finite() || v.abs() > f32::MAX as f64 {
            return Err(EmbeddingError::OutOfRange { row: i / cols, col: i % cols });
        }
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn write_matrix(m: &EmbeddingMatrix, path: &Path) -> Result<(), EmbeddingError> {
    let bytes = matrix_to_bytes(m)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn matrix_from_bytes(bytes: &[u8]) -> Result<EmbeddingMatrix, EmbeddingError> {
    if bytes.len() < 16 {
        return Err(EmbeddingError::Truncated { expected: 16, got: bytes.len() });
    }
    if &bytes[0..4] != MAGIC {
        return Err(EmbeddingError::BadMagic);
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let meta_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let header_end = 16 + meta_len;
    let expected = header_end + rows * cols * 4;
    if bytes.len() < expected {
        return Err(EmbeddingError::Truncated { expected, got: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(EmbeddingError::TrailingBytes(bytes.len() - expected));
    }
    let meta: Meta = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| EmbeddingError::MetaParse(e.to_string()))?;
    if meta.ids.len() != rows {
        return Err(EmbeddingError::IdRowsMismatch { ids: meta.ids.len(), rows });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (i, w) in bytes[header_end..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(w.try_into().unwrap());
        if !v.is_finite() {
            return Err(EmbeddingError::NonFinite { row: i / cols, col: i % cols });
        }
        data.push(v as f64);
    }
    EmbeddingMatrix::new(meta.ids, cols, data, meta.model, meta.reduction)
}

pub fn read_matrix(path: &Path) -> Result<EmbeddingMatrix, EmbeddingError> {
    let bytes = fs::read(path)?;
    matrix_from_bytes(&bytes)
}
