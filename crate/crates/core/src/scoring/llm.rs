//! LLM scoring over a chat-completions-compatible endpoint: temperature 0,
//! one output token, and a response accepted only when it is exactly one of
//! "1".."5". Unparseable answers optionally re-ask at escalating temperatures
//! and take the first parseable result; exhausted attempts record a failure,
//! never a guessed score.

use std::time::Duration;

use crate::corpus::Chunk;
use crate::http::{backoff_delay, is_retryable_status, make_agent, post_json, HttpError};

use super::{PromptVariant, ScoreRecord, ScorerKind, ScorerSpec, ScoringError};

/// Scoring guide sent ahead of the article text (single-user-message variant).
pub const USER_PROMPT: &str = "Assign a score in Likert scale (1 to 5) to rate the importance and urgency of a news article.\n\nYour answer should contain only one digit: 1, 2, 3, 4 or 5.\n\nHere is a simple guide for assigning the score to the text:\n\n1: The text is not a news article.\n\n2: The news in the text can be perceived as not important and not urgent.\n\n3: The news in the text can be perceived as having low importance and low urgency.\n\n4: The news in the text can be perceived as important and urgent.\n\n5: The news in the text can be perceived as highly important and urgent.\n\nThis is the text:\n";

/// Scoring guide for the system-message variant.
pub const SYSTEM_PROMPT: &str = "You are a labeler, skilled in rating the importance and urgency of news.\n\nYou are using Likert scale (1 to 5):\n\n1: The text does not have news.\n\n2: The news in the text can be perceived as not important and not urgent.\n\n3: The news in the text can be perceived as having low importance and low urgency.\n\n4: The news in the text can be perceived as important and urgent.\n\n5: The news in the text can be perceived as highly important and urgent.\n\nRate the provided text. Respond with one digit: 1, 2, 3, 4 or 5.";

pub struct LlmClient {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
}

impl LlmClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        LlmClient { agent: make_agent(timeout), endpoint: endpoint.into(), api_key }
    }
}

pub(crate) fn messages_for(variant: PromptVariant, article: &str) -> serde_json::Value {
    match variant {
        PromptVariant::User => serde_json::json!([
            { "role": "user", "content": format!("{USER_PROMPT}{article}") }
        ]),
        PromptVariant::System => serde_json::json!([
            { "role": "system", "content": SYSTEM_PROMPT },
            { "role": "user", "content": article }
        ]),
    }
}

/// Accepts exactly the five single-character answers after trimming.
pub(crate) fn parse_likert(raw: &str) -> Option<u8> {
    match raw.trim() {
        "1" => Some(1),
        "2" => Some(2),
        "3" => Some(3),
        "4" => Some(4),
        "5" => Some(5),
        _ => None,
    }
}

pub fn llm_score(
    client: &LlmClient,
    chunk: &Chunk,
    spec: &ScorerSpec,
) -> Result<ScoreRecord, ScoringError> {
    if spec.kind != ScorerKind::Llm {
        return Err(ScoringError::InvalidKind(spec.kind.as_str().into()));
    }
    let mut last_reason = String::from("no attempts configured");

    for &temperature in &spec.retry.temperatures {
        let body = serde_json::json!({
            "model": spec.model,
            "temperature": temperature,
            "max_tokens": 1,
            "messages": messages_for(spec.prompt_variant, &chunk.text),
        });

        let mut transport_attempt = 0u32;
        let outcome = loop {
            match post_json(&client.agent, &client.endpoint, client.api_key.as_deref(), &body) {
                Ok(r) if r.status == 200 => break Ok(r.body),
                Ok(r) if r.status == 401 || r.status == 403 => {
                    return Err(ScoringError::AuthFailed(r.status));
                }
                Ok(r) if is_retryable_status(r.status) => {
                    if transport_attempt >= spec.retry.transport_retries {
                        break Err(format!("HTTP {} after retries", r.status));
                    }
                    std::thread::sleep(backoff_delay(spec.retry.base_delay, transport_attempt));
                    transport_attempt += 1;
                }
                Ok(r) => break Err(format!("HTTP {}", r.status)),
                Err(HttpError::Transport(e)) => {
                    if transport_attempt >= spec.retry.transport_retries {
                        break Err(format!("transport: {e}"));
                    }
                    std::thread::sleep(backoff_delay(spec.retry.base_delay, transport_attempt));
                    transport_attempt += 1;
                }
                Err(HttpError::BadBody(e)) => break Err(format!("bad body: {e}")),
            }
        };

        match outcome {
            Ok(body) => {
                let content = body
                    .pointer("/choices/0/message/content")
                    .and_then(|v| v.as_str())
                    .unwrap_or("");
                match parse_likert(content) {
                    Some(score) => {
                        return Ok(ScoreRecord::ok(
                            chunk.doc_id.clone(),
                            ScorerKind::Llm,
                            spec.model.clone(),
                            chunk.sha256.clone(),
                            score as f64,
                        ))
                    }
                    None => {
                        last_reason = format!("unparseable answer {content:?} at temperature {temperature}");
                    }
                }
            }
            Err(reason) => {
                last_reason = reason;
            }
        }
    }

    Ok(ScoreRecord::failed(
        chunk.doc_id.clone(),
        ScorerKind::Llm,
        spec.model.clone(),
        chunk.sha256.clone(),
        last_reason,
    ))
}
