//! Ranking news clusters by importance and urgency from cluster geometry.
//!
//! The pipeline: ingest a JSONL corpus, take each article's leading
//! sentence-bounded chunk, embed the chunks (precomputed files or a remote
//! service), reduce dimensionality, cluster, and score every cluster by the
//! gap between the 90th-percentile and median distances from its center to
//! the other cluster centers. That geometric feature is then correlated
//! against per-document importance/urgency scores (LLM, classifier, or
//! precomputed file) across a full experiment grid, with aggregation tables,
//! histograms and rank-gap curves emitted as a report bundle.

pub mod clustering;
pub mod corpus;
pub mod embeddings;
pub mod features;
mod http;
pub mod runner;
pub mod scoring;
pub mod stats;

pub use http::{api_base_from_env, api_key_from_env, API_BASE_ENV, API_KEY_ENV};
