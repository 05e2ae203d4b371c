//! Dense embedding matrices: id-aligned vectors with model and reduction
//! provenance, EMB1 file IO, a deterministic PCA reduction, and a client for
//! remote embedding services.

mod io;
mod pca;
mod remote;

pub use io::{read_matrix, write_matrix};
pub use pca::reduce_pca;
pub use remote::{embed_remote, RemoteEmbedOptions};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("bad magic: expected EMB1")]
    BadMagic,
    #[error("truncated file: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(usize),
    #[error("non-finite value at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },
    #[error("value at row {row}, col {col} does not fit 32-bit storage")]
    OutOfRange { row: usize, col: usize },
    #[error("metadata lists {ids} ids but header says {rows} rows")]
    IdRowsMismatch { ids: usize, rows: usize },
    #[error("duplicate id in matrix: {0:?}")]
    DuplicateId(String),
    #[error("unknown id requested: {0:?}")]
    UnknownId(String),
    #[error("matrix has no rows")]
    EmptyMatrix,
    #[error("dimension must be at least 2, got {0}")]
    DimTooSmall(usize),
    #[error("data length {len} does not match {rows} rows x {dim} dims")]
    ShapeMismatch { len: usize, rows: usize, dim: usize },
    #[error("invalid reduction spec: {0}")]
    InvalidReduction(String),
    #[error("metadata is not valid JSON: {0}")]
    MetaParse(String),
    #[error("out_dim {out_dim} exceeds input dimension {dim}")]
    OutDimTooLarge { out_dim: usize, dim: usize },
    #[error("out_dim must be at least 2, got {0}")]
    OutDimTooSmall(usize),
    #[error("need at least {out_dim} rows for PCA, got {rows}")]
    TooFewRows { rows: usize, out_dim: usize },
    #[error("input rank {attained} is below the requested {requested} components")]
    RankDeficient { attained: usize, requested: usize },
    #[error("embedding dimension drifted: expected {expected}, got {got}")]
    DimensionDrift { expected: usize, got: usize },
    #[error("endpoint returned HTTP {status}: {detail}")]
    Http { status: u16, detail: String },
    #[error("retries exhausted after {attempts} attempts: {detail}")]
    RetriesExhausted { attempts: u32, detail: String },
    #[error("malformed service response: {0}")]
    BadResponse(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which embedding model produced the vectors and their dimension
/// (post-reduction dimension once reduced).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub model: String,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReductionMethod {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "pca")]
    Pca,
    #[serde(rename = "external-umap")]
    ExternalUmap,
}

/// How (and whether) the vectors were reduced. UMAP parameters are recorded
/// for externally reduced matrices so experiment grids stay labeled, but no
/// UMAP runs here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionSpec {
    pub method: ReductionMethod,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub out_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_neighbors: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub min_dist: Option<f64>,
}

impl ReductionSpec {
    pub fn none() -> Self {
        ReductionSpec { method: ReductionMethod::None, out_dim: None, n_neighbors: None, min_dist: None }
    }

    pub fn pca(out_dim: usize) -> Self {
        ReductionSpec {
            method: ReductionMethod::Pca,
            out_dim: Some(out_dim),
            n_neighbors: None,
            min_dist: None,
        }
    }

    pub fn external_umap(out_dim: usize, n_neighbors: u32, min_dist: f64) -> Self {
        ReductionSpec {
            method: ReductionMethod::ExternalUmap,
            out_dim: Some(out_dim),
            n_neighbors: Some(n_neighbors),
            min_dist: Some(min_dist),
        }
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        match self.method {
            ReductionMethod::None => {
                if self.out_dim.is_some() || self.n_neighbors.is_some() || self.min_dist.is_some() {
                    return Err(EmbeddingError::InvalidReduction(
                        "method 'none' takes no parameters".into(),
                    ));
                }
            }
            ReductionMethod::Pca => {
                match self.out_dim {
                    Some(d) if d >= 2 => {}
                    _ => {
                        return Err(EmbeddingError::InvalidReduction(
                            "pca requires out_dim >= 2".into(),
                        ))
                    }
                }
                if self.n_neighbors.is_some() || self.min_dist.is_some() {
                    return Err(EmbeddingError::InvalidReduction(
                        "pca takes no UMAP parameters".into(),
                    ));
                }
            }
            ReductionMethod::ExternalUmap => {
                match self.out_dim {
                    Some(d) if d >= 2 => {}
                    _ => {
                        return Err(EmbeddingError::InvalidReduction(
                            "external-umap requires out_dim >= 2".into(),
                        ))
                    }
                }
                if self.n_neighbors.is_none() || self.min_dist.is_none() {
                    return Err(EmbeddingError::InvalidReduction(
                        "external-umap requires n_neighbors and min_dist".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Short label used in case ids and report columns; external UMAP uses
    /// the dN-nM notation.
    pub fn label(&self) -> String {
        match self.method {
            ReductionMethod::None => "none".into(),
            ReductionMethod::Pca => format!("pca{}", self.out_dim.unwrap_or(0)),
            ReductionMethod::ExternalUmap => {
                format!("d{}-n{}", self.out_dim.unwrap_or(0), self.n_neighbors.unwrap_or(0))
            }
        }
    }
}

/// Id-aligned dense matrix, one row per document. Values are held as f64 in
/// memory; the EMB1 file format stores them as binary32.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    data: Vec<f64>,
    pub spec: EmbeddingSpec,
    pub reduction: ReductionSpec,
}

impl EmbeddingMatrix {
    pub fn new(
        ids: Vec<String>,
        dim: usize,
        data: Vec<f64>,
        model: impl Into<String>,
        reduction: ReductionSpec,
    ) -> Result<Self, EmbeddingError> {
        if ids.is_empty() {
            return Err(EmbeddingError::EmptyMatrix);
        }
        if dim < 2 {
            return Err(EmbeddingError::DimTooSmall(dim));
        }
        if data.len() != ids.len() * dim {
            return Err(EmbeddingError::ShapeMismatch { len: data.len(), rows: ids.len(), dim });
        }
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(EmbeddingError::NonFinite { row: i / dim, col: i % dim });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(EmbeddingError::DuplicateId(id.clone()));
            }
        }
        reduction.validate()?;
        let spec = EmbeddingSpec { model: model.into(), dim };
        Ok(EmbeddingMatrix { ids, data, spec, reduction })
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.spec.dim;
        &self.data[i * d..(i + 1) * d]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Rows for the given ids, in the given order.
    pub fn select_by_ids(&self, ids: &[String]) -> Result<EmbeddingMatrix, EmbeddingError> {
        let index: std::collections::HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let d = self.spec.dim;
        let mut data = Vec::with_capacity(ids.len() * d);
        for id in ids {
            let &i = index.get(id.as_str()).ok_or_else(|| EmbeddingError::UnknownId(id.clone()))?;
            data.extend_from_slice(self.row(i));
        }
        EmbeddingMatrix::new(ids.to_vec(), d, data, self.spec.model.clone(), self.reduction.clone())
    }
}

/// Resolves a matrix path relative to a config file location.
pub fn resolve_path(base: Option<&std::path::Path>, p: &std::path::Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        match base {
            Some(b) => b.join(p),
            None => p.to_path_buf(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_rejects_empty_and_bad_shape() {
        assert!(matches!(
            EmbeddingMatrix::new(vec![], 2, vec![], "m", ReductionSpec::none()),
            Err(EmbeddingError::EmptyMatrix)
        ));
        assert!(matches!(
            EmbeddingMatrix::new(vec!["a".into()], 2, vec![1.0], "m", ReductionSpec::none()),
            Err(EmbeddingError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            EmbeddingMatrix::new(
                vec!["a".into(), "a".into()],
                2,
                vec![1.0, 2.0, 3.0, 4.0],
                "m",
                ReductionSpec::none()
            ),
            Err(EmbeddingError::DuplicateId(_))
        ));
    }

    #[test]
    fn matrix_rejects_non_finite() {
        let err = EmbeddingMatrix::new(
            vec!["a".into()],
            2,
            vec![1.0, f64::NAN],
            "m",
            ReductionSpec::none(),
        )
        .unwrap_err();
        assert!(matches!(err, EmbeddingError::NonFinite { row: 0, col: 1 }));
    }

    #[test]
    fn reduction_spec_validation() {
        assert!(ReductionSpec::none().validate().is_ok());
        assert!(ReductionSpec::pca(20).validate().is_ok());
        assert!(ReductionSpec::pca(1).validate().is_err());
        assert!(ReductionSpec::external_umap(20, 10, 0.0).validate().is_ok());
        let bad = ReductionSpec {
            method: ReductionMethod::ExternalUmap,
            out_dim: Some(20),
            n_neighbors: None,
            min_dist: None,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn reduction_labels() {
        assert_eq!(ReductionSpec::none().label(), "none");
        assert_eq!(ReductionSpec::pca(20).label(), "pca20");
        assert_eq!(ReductionSpec::external_umap(10, 30, 0.0).label(), "d10-n30");
    }

    #[test]
    fn select_by_ids_reorders_rows() {
        let m = EmbeddingMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            2,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            "m",
            ReductionSpec::none(),
        )
        .unwrap();
        let s = m.select_by_ids(&["c".into(), "a".into()]).unwrap();
        assert_eq!(s.row(0), &[5.0, 6.0]);
        assert_eq!(s.row(1), &[1.0, 2.0]);
        assert!(matches!(
            m.select_by_ids(&["zz".into()]),
            Err(EmbeddingError::UnknownId(_))
        ));
    }
}
