//! Zero-shot classification scoring: the IUN score is the value the endpoint
//! returns for the class "urgent" out of the ("urgent", "not urgent") pair.
//! Whether those are logits or probabilities does not matter downstream, all
//! consumers are rank statistics.

use std::time::Duration;

use crate::corpus::Chunk;
use crate::http::{backoff_delay, is_retryable_status, make_agent, post_json, HttpError};

use super::{ScoreRecord, ScorerKind, ScorerSpec, ScoringError};

pub const NLI_LABELS: [&str; 2] = ["urgent", "not urgent"];

pub struct NliClient {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
}

impl NliClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        NliClient { agent: make_agent(timeout), endpoint: endpoint.into(), api_key }
    }
}

pub fn nli_score(
    client: &NliClient,
    chunk: &Chunk,
    spec: &ScorerSpec,
) -> Result<ScoreRecord, ScoringError> {
    if spec.kind != ScorerKind::Nli {
        return Err(ScoringError::InvalidKind(spec.kind.as_str().into()));
    }
    let body = serde_json::json!({
        "text": chunk.text,
        "labels": NLI_LABELS,
    });

    let mut attempt = 0u32;
    let response = loop {
        match post_json(&client.agent, &client.endpoint, client.api_key.as_deref(), &body) {
            Ok(r) if r.status == 200 => break r.body,
            Ok(r) if r.status == 401 || r.status == 403 => {
                return Err(ScoringError::AuthFailed(r.status));
            }
            Ok(r) if is_retryable_status(r.status) => {
                if attempt >= spec.retry.transport_retries {
                    return Ok(ScoreRecord::failed(
                        chunk.doc_id.clone(),
                        ScorerKind::Nli,
                        spec.model.clone(),
                        chunk.sha256.clone(),
                        format!("HTTP {} after retries", r.status),
                    ));
                }
                std::thread::sleep(backoff_delay(spec.retry.base_delay, attempt));
                attempt += 1;
            }
            Ok(r) => {
                return Ok(ScoreRecord::failed(
                    chunk.doc_id.clone(),
                    ScorerKind::Nli,
                    spec.model.clone(),
                    chunk.sha256.clone(),
                    format!("HTTP {}", r.status),
                ))
            }
            Err(HttpError::Transport(e)) => {
                if attempt >= spec.retry.transport_retries {
                    return Ok(ScoreRecord::failed(
                        chunk.doc_id.clone(),
                        ScorerKind::Nli,
                        spec.model.clone(),
                        chunk.sha256.clone(),
                        format!("transport: {e}"),
                    ));
                }
                std::thread::sleep(backoff_delay(spec.retry.base_delay, attempt));
                attempt += 1;
            }
            Err(HttpError::BadBody(e)) => return Err(ScoringError::MalformedResponse(e)),
        }
    };

    let value = response
        .pointer("/scores/urgent")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| ScoringError::MalformedResponse("missing class \"urgent\"".into()))?;
    if !value.is_finite() {
        return Err(ScoringError::MalformedResponse(format!(
            "non-finite score {value} for class \"urgent\""
        )));
    }
    Ok(ScoreRecord::ok(
        chunk.doc_id.clone(),
        ScorerKind::Nli,
        spec.model.clone(),
        chunk.sha256.clone(),
        value,
    ))
}
