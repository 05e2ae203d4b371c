//! Per-document IUN scores: LLM chat scoring with the fixed prompt, NLI
//! urgency classification, precomputed score files, the content-addressed
//! cache, and aggregation of document scores to cluster level.

mod cache;
mod llm;
mod nli;

pub use cache::{load_scores, score_corpus, ScoreCache, ScoreOptions, ScoreSummary};
pub use llm::{llm_score, LlmClient, SYSTEM_PROMPT, USER_PROMPT};
pub use nli::{nli_score, NliClient, NLI_LABELS};

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::ClusterCase;

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("scorer of kind {0:?} cannot fetch scores")]
    InvalidKind(String),
    #[error("scorer spec invalid: {0}")]
    InvalidSpec(String),
    #[error("authentication failed (HTTP {0})")]
    AuthFailed(u16),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("line {line}: malformed score record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("conflicting scores for doc {doc_id:?} ({a} vs {b})")]
    ConflictingScores { doc_id: String, a: f64, b: f64 },
    #[error("invalid score for doc {doc_id:?}: {reason}")]
    InvalidScore { doc_id: String, reason: String },
    #[error("score for doc {doc_id:?} refers to a different chunk (sha {stored} vs {expected})")]
    StaleScore { doc_id: String, stored: String, expected: String },
    #[error("only {got} common scored documents, need at least {need}")]
    InsufficientOverlap { need: usize, got: usize },
    #[error("correlation undefined: {0}")]
    Degenerate(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Llm,
    Nli,
    File,
}

impl ScorerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScorerKind::Llm => "llm",
            ScorerKind::Nli => "nli",
            ScorerKind::File => "file",
        }
    }
}

/// Which of the two documented prompts the LLM scorer sends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptVariant {
    /// Single user message: scoring guide followed by the article.
    User,
    /// Scoring guide as the system message, article as the user message.
    System,
}

/// Parse-failure retry schedule. The default is the single zero-temperature
/// attempt; escalation re-asks at gradually higher temperatures and keeps the
/// first parseable answer.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub temperatures: Vec<f64>,
    pub transport_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            temperatures: vec![0.0],
            transport_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn with_escalation() -> Self {
        RetryPolicy { temperatures: vec![0.0, 0.3, 0.7], ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerSpec {
    pub kind: ScorerKind,
    pub model: String,
    pub endpoint: Option<String>,
    pub prompt_variant: PromptVariant,
    pub retry: RetryPolicy,
}

impl ScorerSpec {
    pub fn file(model: impl Into<String>) -> Self {
        ScorerSpec {
            kind: ScorerKind::File,
            model: model.into(),
            endpoint: None,
            prompt_variant: PromptVariant::User,
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        match self.kind {
            ScorerKind::File => {
                if self.endpoint.is_some() {
                    return Err(ScoringError::InvalidSpec(
                        "file scorer takes no endpoint".into(),
                    ));
                }
            }
            _ => {
                if self.endpoint.is_none() {
                    return Err(ScoringError::InvalidSpec(format!(
                        "{} scorer requires an endpoint",
                        self.kind.as_str()
                    )));
                }
            }
        }
        if self.model.is_empty() {
            return Err(ScoringError::InvalidSpec("model label is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreStatus {
    Ok,
    Failed,
}

/// One scorer's verdict on one chunk, cacheable and content-addressed by
/// (doc_id, scorer, model, chunk_sha256).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub doc_id: String,
    pub scorer: String,
    pub model: String,
    pub chunk_sha256: String,
    pub score: Option<f64>,
    pub status: ScoreStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
}

impl ScoreRecord {
    pub fn ok(
        doc_id: impl Into<String>,
        kind: ScorerKind,
        model: impl Into<String>,
        sha: impl Into<String>,
        score: f64,
    ) -> Self {
        ScoreRecord {
            doc_id: doc_id.into(),
            scorer: kind.as_str().to_string(),
            model: model.into(),
            chunk_sha256: sha.into(),
            score: Some(score),
            status: ScoreStatus::Ok,
            reason: None,
        }
    }

    pub fn failed(
        doc_id: impl Into<String>,
        kind: ScorerKind,
        model: impl Into<String>,
        sha: impl Into<String>,
        reason: impl Into<String>,
    ) -> Self {
        ScoreRecord {
            doc_id: doc_id.into(),
            scorer: kind.as_str().to_string(),
            model: model.into(),
            chunk_sha256: sha.into(),
            score: None,
            status: ScoreStatus::Failed,
            reason: Some(reason.into()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ScoreStatus::Ok
    }

    /// LLM ok-records carry an integer Likert score in [1, 5]; failed records
    /// carry no score.
    pub fn validate(&self) -> Result<(), ScoringError> {
        match self.status {
            ScoreStatus::Ok => {
                let s = self.score.ok_or_else(|| ScoringError::InvalidScore {
                    doc_id: self.doc_id.clone(),
                    reason: "ok record without score".into(),
                })?;
                if !s.is_finite() {
                    return Err(ScoringError::InvalidScore {
                        doc_id: self.doc_id.clone(),
                        reason: "non-finite score".into(),
                    });
                }
                if self.scorer == "llm" && (s.fract() != 0.0 || !(1.0..=5.0).contains(&s)) {
                    return Err(ScoringError::InvalidScore {
                        doc_id: self.doc_id.clone(),
                        reason: format!("LLM score {s} is not an integer in [1, 5]"),
                    });
                }
            }
            ScoreStatus::Failed => {
                if self.score.is_some() {
                    return Err(ScoringError::InvalidScore {
                        doc_id: self.doc_id.clone(),
                        reason: "failed record carries a score".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Mean and population stdev of a cluster's ok member scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterScore {
    pub cluster_id: usize,
    pub mean: f64,
    pub stdev: f64,
    pub n_scored: usize,
}

pub const MIN_SCORED_MEMBERS: usize = 3;

/// Per-cluster score aggregation over ok records; clusters with fewer than
/// three scored members drop out (they never enter correlations).
pub fn cluster_scores(records: &[ScoreRecord], case: &ClusterCase, ids: &[String]) -> Vec<ClusterScore> {
    let by_doc: HashMap<&str, f64> = records
        .iter()
        .filter(|r| r.is_ok())
        .filter_map(|r| r.score.map(|s| (r.doc_id.as_str(), s)))
        .collect();
    let mut out = Vec::new();
    for membership in case.memberships() {
        let scores: Vec<f64> = membership
            .member_rows
            .iter()
            .filter_map(|&row| by_doc.get(ids[row].as_str()).copied())
            .collect();
        if scores.len() < MIN_SCORED_MEMBERS {
            continue;
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        out.push(ClusterScore {
            cluster_id: membership.cluster_id,
            mean,
            stdev: var.sqrt(),
            n_scored: scores.len(),
        });
    }
    out
}

/// Document-level Kendall tau-b between two scorers over their common ok
/// documents (the Table-1-style comparison).
pub fn cross_scorer_correlation(
    records_a: &[ScoreRecord],
    records_b: &[ScoreRecord],
) -> Result<(f64, usize), ScoringError> {
    let map_a: HashMap<&str, f64> = records_a
        .iter()
        .filter(|r| r.is_ok())
        .filter_map(|r| r.score.map(|s| (r.doc_id.as_str(), s)))
        .collect();
    let mut pairs: Vec<(&str, f64, f64)> = records_b
        .iter()
        .filter(|r| r.is_ok())
        .filter_map(|r| {
            let b = r.score?;
            map_a.get(r.doc_id.as_str()).map(|&a| (r.doc_id.as_str(), a, b))
        })
        .collect();
    if pairs.len() < 2 {
        return Err(ScoringError::InsufficientOverlap { need: 2, got: pairs.len() });
    }
    pairs.sort_by(|x, y| x.0.cmp(y.0));
    let xs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    crate::stats::kendall_tau_b(&xs, &ys)
        .map(|tau| (tau, pairs.len()))
        .map_err(|e| ScoringError::Degenerate(e.to_string()))
}
