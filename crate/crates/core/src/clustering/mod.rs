//! Cluster assignments for a reduced embedding matrix: native KMeans (Lloyd)
//! and Ward agglomerative clustering, ingestion of external assignments, and
//! the validity filter applied before any statistics.

mod kmeans;
mod ward;

pub use kmeans::{kmeans, kmeans_run, kmeans_run_observed, KMeansRun};
pub use ward::{ward, ward_naive, ward_run, WardRun};

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings::{EmbeddingMatrix, EmbeddingSpec, ReductionSpec};

#[derive(Debug, Error)]
pub enum ClusteringError {
    #[error("k = {k} out of range for {rows} rows")]
    KOutOfRange { k: usize, rows: usize },
    #[error("labels length {labels} does not match {rows} matrix rows")]
    RowsMismatch { labels: usize, rows: usize },
    #[error("assignment file missing id {0:?}")]
    MissingId(String),
    #[error("assignment file has unknown id {0:?}")]
    UnknownId(String),
    #[error("assignment file lists id {0:?} more than once")]
    DuplicateAssignment(String),
    #[error("line {line}: label {value:?} is not an integer")]
    NonIntegerLabel { line: usize, value: String },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

/// Clustering algorithm identity; external results keep their source label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Algorithm {
    KMeans,
    Ward,
    External(String),
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::KMeans => write!(f, "kmeans"),
            Algorithm::Ward => write!(f, "ward"),
            Algorithm::External(label) => write!(f, "external:{label}"),
        }
    }
}

impl From<Algorithm> for String {
    fn from(a: Algorithm) -> String {
        a.to_string()
    }
}

impl TryFrom<String> for Algorithm {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        match s.as_str() {
            "kmeans" => Ok(Algorithm::KMeans),
            "ward" => Ok(Algorithm::Ward),
            other => match other.strip_prefix("external:") {
                Some(label) if !label.is_empty() => Ok(Algorithm::External(label.to_string())),
                _ => Err(format!("unknown algorithm {s:?}")),
            },
        }
    }
}

/// One clustering outcome together with its full experiment coordinates.
/// Labels are dense 0..n_clusters-1 in row-first-appearance order; -1 marks
/// noise points from external algorithms.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterCase {
    pub dataset: String,
    pub corpus_size: usize,
    pub embedding: EmbeddingSpec,
    pub reduction: ReductionSpec,
    pub algorithm: Algorithm,
    pub target_k: usize,
    pub seed: Option<u64>,
    pub labels: Vec<i64>,
    pub n_clusters: usize,
}

impl ClusterCase {
    /// Fills in the corpus coordinates the clustering ops cannot know.
    pub fn with_corpus(mut self, dataset: impl Into<String>, size: usize) -> Self {
        self.dataset = dataset.into();
        self.corpus_size = size;
        self
    }

    pub fn memberships(&self) -> Vec<ClusterMembership> {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); self.n_clusters];
        for (row, &label) in self.labels.iter().enumerate() {
            if label >= 0 {
                members[label as usize].push(row);
            }
        }
        members
            .into_iter()
            .enumerate()
            .map(|(cluster_id, member_rows)| ClusterMembership {
                cluster_id,
                size: member_rows.len(),
                member_rows,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterMembership {
    pub cluster_id: usize,
    pub member_rows: Vec<usize>,
    pub size: usize,
}

/// Renumbers labels densely (0..k-1) by first appearance in row order,
/// passing noise (-1) through. Returns (labels, n_clusters).
pub fn renumber_labels(raw: &[i64]) -> (Vec<i64>, usize) {
    let mut mapping: HashMap<i64, i64> = HashMap::new();
    let mut next = 0i64;
    let labels = raw
        .iter()
        .map(|&l| {
            if l < 0 {
                -1
            } else {
                *mapping.entry(l).or_insert_with(|| {
                    let v = next;
                    next += 1;
                    v
                })
            }
        })
        .collect();
    (labels, next as usize)
}

pub const MIN_VALID_CLUSTERS: usize = 20;
pub const MAX_VALID_CLUSTERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooFew,
    TooMany,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::TooFew => "too_few",
            RejectReason::TooMany => "too_many",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseValidity {
    Valid,
    Rejected(RejectReason),
}

impl CaseValidity {
    pub fn is_valid(self) -> bool {
        matches!(self, CaseValidity::Valid)
    }
}

/// Only cases producing 20 to 100 non-noise clusters enter the statistics.
pub fn validate_case(case: &ClusterCase) -> CaseValidity {
    if case.n_clusters < MIN_VALID_CLUSTERS {
        CaseValidity::Rejected(RejectReason::TooFew)
    } else if case.n_clusters > MAX_VALID_CLUSTERS {
        CaseValidity::Rejected(RejectReason::TooMany)
    } else {
        CaseValidity::Valid
    }
}

/// Loads external assignments (CSV "id,label") aligned to matrix rows.
/// Labels are renumbered densely preserving first-appearance order; -1 stays
/// noise. Every matrix id must be covered exactly once.
pub fn load_assignments(
    path: &Path,
    m: &EmbeddingMatrix,
    source_label: &str,
) -> Result<ClusterCase, ClusteringError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut by_id: HashMap<String, i64> = HashMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2; // header is line 1
        let id = row.get(0).unwrap_or("").to_string();
        let raw = row.get(1).unwrap_or("");
        let label: i64 = raw.trim().parse().map_err(|_| ClusteringError::NonIntegerLabel {
            line,
            value: raw.to_string(),
        })?;
        if by_id.insert(id.clone(), label).is_some() {
            return Err(ClusteringError::DuplicateAssignment(id));
        }
    }
    let mut raw_labels = Vec::with_capacity(m.rows());
    for id in m.ids() {
        match by_id.remove(id) {
            Some(l) => raw_labels.push(l),
            None => return Err(ClusteringError::MissingId(id.clone())),
        }
    }
    if let Some((id, _)) = by_id.into_iter().next() {
        return Err(ClusteringError::UnknownId(id));
    }
    let (labels, n_clusters) = renumber_labels(&raw_labels);
    Ok(ClusterCase {
        dataset: String::new(),
        corpus_size: m.rows(),
        embedding: m.spec.clone(),
        reduction: m.reduction.clone(),
        algorithm: Algorithm::External(source_label.to_string()),
        target_k: n_clusters,
        seed: None,
        labels,
        n_clusters,
    })
}

/// Sidecar manifest carrying every case field except the labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseManifest {
    pub dataset: String,
    pub corpus_size: usize,
    pub embedding: EmbeddingSpec,
    pub reduction: ReductionSpec,
    pub algorithm: Algorithm,
    pub target_k: usize,
    pub seed: Option<u64>,
    pub n_clusters: usize,
    pub validity: String,
}

impl CaseManifest {
    pub fn of(case: &ClusterCase) -> Self {
        let validity = match validate_case(case) {
            CaseValidity::Valid => "valid".to_string(),
            CaseValidity::Rejected(r) => format!("rejected:{}", r.code()),
        };
        CaseManifest {
            dataset: case.dataset.clone(),
            corpus_size: case.corpus_size,
            embedding: case.embedding.clone(),
            reduction: case.reduction.clone(),
            algorithm: case.algorithm.clone(),
            target_k: case.target_k,
            seed: case.seed,
            n_clusters: case.n_clusters,
            validity,
        }
    }
}

/// Writes a case as assignment CSV plus JSON sidecar.
pub fn write_case(
    case: &ClusterCase,
    ids: &[String],
    csv_path: &Path,
    manifest_path: &Path,
) -> Result<(), ClusteringError> {
    if ids.len() != case.labels.len() {
        return Err(ClusteringError::RowsMismatch { labels: case.labels.len(), rows: ids.len() });
    }
    if let Some(parent) = csv_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(["id", "label"])?;
    for (id, label) in ids.iter().zip(&case.labels) {
        w.write_record([id.as_str(), &label.to_string()])?;
    }
    w.flush()?;
    let manifest = CaseManifest::of(case);
    serde_json::to_writer_pretty(File::create(manifest_path)?, &manifest)?;
    Ok(())
}

/// Rebuilds a case from its cached CSV and sidecar, aligned to the matrix.
pub fn read_case(
    csv_path: &Path,
    manifest_path: &Path,
    m: &EmbeddingMatrix,
) -> Result<ClusterCase, ClusteringError> {
    let manifest: CaseManifest = serde_json::from_reader(File::open(manifest_path)?)?;
    let loaded = load_assignments(csv_path, m, "cache")?;
    Ok(ClusterCase {
        dataset: manifest.dataset,
        corpus_size: manifest.corpus_size,
        embedding: manifest.embedding,
        reduction: manifest.reduction,
        algorithm: manifest.algorithm,
        target_k: manifest.target_k,
        seed: manifest.seed,
        labels: loaded.labels,
        n_clusters: loaded.n_clusters,
    })
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}
