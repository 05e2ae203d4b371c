//! Client for an embeddings HTTP service. Batches requests, retries
//! transient failures with exponential backoff, and checkpoints partial
//! progress so an interrupted run resumes instead of re-embedding.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::http::{backoff_delay, is_retryable_status, make_agent, post_json, HttpError};

use super::{EmbeddingError, EmbeddingMatrix, ReductionSpec};

#[derive(Debug, Clone)]
pub struct RemoteEmbedOptions {
    pub batch_size: usize,
    /// Transient-failure retries per batch (HTTP 429/5xx).
    pub max_retries: u32,
    pub base_delay: Duration,
    pub timeout: Duration,
    /// JSONL file recording completed embeddings for resume.
    pub checkpoint: Option<PathBuf>,
    pub api_key: Option<String>,
}

impl Default for RemoteEmbedOptions {
    fn default() -> Self {
        RemoteEmbedOptions {
            batch_size: 64,
            max_retries: 5,
            base_delay: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
            checkpoint: None,
            api_key: crate::http::api_key_from_env(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointLine {
    id: String,
    sha256: String,
    embedding: Vec<f64>,
}

fn load_checkpoint(path: &PathBuf) -> Result<HashMap<String, CheckpointLine>, EmbeddingError> {
    let mut map = HashMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(map),
        Err(e) => return Err(e.into()),
    };
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CheckpointLine = serde_json::from_str(&line)
            .map_err(|e| EmbeddingError::Checkpoint(format!("line {}: {e}", i + 1)))?;
        map.insert(rec.id.clone(), rec);
    }
    Ok(map)
}

#[derive(Deserialize)]
struct EmbeddingItem {
    index: usize,
    embedding: Vec<f64>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

/// Embeds chunks through the wire protocol
/// POST {"model", "input": [...]} -> {"data": [{"index", "embedding"}]}.
/// Rows come back aligned to chunk order.
pub fn embed_remote(
    chunks: &[Chunk],
    endpoint: &str,
    model: &str,
    opts: &RemoteEmbedOptions,
) -> Result<EmbeddingMatrix, EmbeddingError> {
    if chunks.is_empty() {
        return Err(EmbeddingError::EmptyMatrix);
    }
    if opts.batch_size < 1 {
        return Err(EmbeddingError::BadResponse("batch_size must be >= 1".into()));
    }

    let mut done: HashMap<String, CheckpointLine> = match &opts.checkpoint {
        Some(p) => {
            let map = load_checkpoint(p)?;
            for c in chunks {
                if let Some(rec) = map.get(&c.doc_id) {
                    if rec.sha256 != c.sha256 {
                        return Err(EmbeddingError::Checkpoint(format!(
                            "chunk {} changed since checkpoint (sha {} vs {})",
                            c.doc_id, c.sha256, rec.sha256
                        )));
                    }
                }
            }
            map
        }
        None => HashMap::new(),
    };

    let mut ckpt_writer: Option<BufWriter<File>> = match &opts.checkpoint {
        Some(p) => {
            if let Some(parent) = p.parent() {
                std::fs::create_dir_all(parent)?;
            }
            Some(BufWriter::new(OpenOptions::new().create(true).append(true).open(p)?))
        }
        None => None,
    };

    let mut expected_dim: Option<usize> =
        done.values().next().map(|rec| rec.embedding.len());
    let agent = make_agent(opts.timeout);

    let pending: Vec<&Chunk> = chunks.iter().filter(|c| !done.contains_key(&c.doc_id)).collect();
    for batch in pending.chunks(opts.batch_size) {
        let inputs: Vec<&str> = batch.iter().map(|c| c.text.as_str()).collect();
        let body = serde_json::json!({ "model": model, "input": inputs });

        let mut attempt = 0u32;
        let resp = loop {
            match post_json(&agent, endpoint, opts.api_key.as_deref(), &body) {
                Ok(r) if r.status == 200 => break r,
                Ok(r) if is_retryable_status(r.status) => {
                    if attempt >= opts.max_retries {
                        return Err(EmbeddingError::RetriesExhausted {
                            attempts: attempt + 1,
                            detail: format!("HTTP {}", r.status),
                        });
                    }
                    std::thread::sleep(backoff_delay(opts.base_delay, attempt));
                    attempt += 1;
                }
                Ok(r) => {
                    return Err(EmbeddingError::Http {
                        status: r.status,
                        detail: r.body.to_string(),
                    })
                }
                Err(HttpError::Transport(e)) => {
                    if attempt >= opts.max_retries {
                        return Err(EmbeddingError::RetriesExhausted {
                            attempts: attempt + 1,
                            detail: e,
                        });
                    }
                    std::thread::sleep(backoff_delay(opts.base_delay, attempt));
                    attempt += 1;
                }
                Err(HttpError::BadBody(e)) => return Err(EmbeddingError::BadResponse(e)),
            }
        };

        let parsed: EmbeddingResponse = serde_json::from_value(resp.body)
            .map_err(|e| EmbeddingError::BadResponse(e.to_string()))?;
        if parsed.data.len() != batch.len() {
            return Err(EmbeddingError::BadResponse(format!(
                "expected {} embeddings, got {}",
                batch.len(),
                parsed.data.len()
            )));
        }
        let mut rows: Vec<Option<Vec<f64>>> = vec![None; batch.len()];
        for item in parsed.data {
            if item.index >= batch.len() || rows[item.index].is_some() {
                return Err(EmbeddingError::BadResponse(format!(
                    "bad or duplicate index {}",
                    item.index
                )));
            }
            match expected_dim {
                Some(d) if d != item.embedding.len() => {
                    return Err(EmbeddingError::DimensionDrift {
                        expected: d,
                        got: item.embedding.len(),
                    })
                }
                None => expected_dim = Some(item.embedding.len()),
                _ => {}
            }
            rows[item.index] = Some(item.embedding);
        }
        for (chunk, row) in batch.iter().zip(rows) {
            let rec = CheckpointLine {
                id: chunk.doc_id.clone(),
                sha256: chunk.sha256.clone(),
                embedding: row.expect("all indexes covered"),
            };
            if let Some(w) = ckpt_writer.as_mut() {
                serde_json::to_writer(&mut *w, &rec)
                    .map_err(|e| EmbeddingError::Checkpoint(e.to_string()))?;
                w.write_all(b"\n")?;
                w.flush()?;
            }
            done.insert(rec.id.clone(), rec);
        }
    }

    let dim = expected_dim.ok_or_else(|| EmbeddingError::BadResponse("no embeddings".into()))?;
    let ids: Vec<String> = chunks.iter().map(|c| c.doc_id.clone()).collect();
    let mut data = Vec::with_capacity(ids.len() * dim);
    for c in chunks {
        let rec = &done[&c.doc_id];
        if rec.embedding.len() != dim {
            return Err(EmbeddingError::DimensionDrift { expected: dim, got: rec.embedding.len() });
        }
        data.extend_from_slice(&rec.embedding);
    }
    EmbeddingMatrix::new(ids, dim, data, model, ReductionSpec::none())
}
