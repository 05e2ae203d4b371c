//! Small shared HTTP plumbing for the embedding and scoring clients.

use std::time::Duration;

/// Outcome of one POST, status and parsed JSON body.
pub(crate) struct JsonResponse {
    pub status: u16,
    pub body: serde_json::Value,
}

#[derive(Debug)]
pub(crate) enum HttpError {
    Transport(String),
    BadBody(String),
}

pub(crate) fn make_agent(timeout: Duration) -> ureq::Agent {
    let config = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(timeout))
        .build();
    ureq::Agent::new_with_config(config)
}

pub(crate) fn post_json(
    agent: &ureq::Agent,
    url: &str,
    bearer: Option<&str>,
    body: &serde_json::Value,
) -> Result<JsonResponse, HttpError> {
    let mut req = agent.post(url);
    if let Some(token) = bearer {
        req = req.header("Authorization", &format!("Bearer {token}"));
    }
    let mut resp = req
        .header("Content-Type", "application/json")
        .send_json(body)
        .map_err(|e| HttpError::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    let parsed: serde_json::Value = resp
        .body_mut()
        .read_json()
        .map_err(|e| HttpError::BadBody(format!("HTTP {status}: {e}")))?;
    Ok(JsonResponse { status, body: parsed })
}

/// Exponential backoff delay for the given zero-based attempt.
pub(crate) fn backoff_delay(base: Duration, attempt: u32) -> Duration {
    base.saturating_mul(1u32 << attempt.min(16))
}

pub(crate) fn is_retryable_status(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

/// Environment variable carrying the bearer token for remote services.
pub const API_KEY_ENV: &str = "IUN_API_KEY";
/// Environment variable carrying the default base URL for remote services.
pub const API_BASE_ENV: &str = "IUN_API_BASE";

pub fn api_key_from_env() -> Option<String> {
    std::env::var(API_KEY_ENV).ok().filter(|s| !s.is_empty())
}

pub fn api_base_from_env() -> Option<String> {
    std::env::var(API_BASE_ENV).ok().filter(|s| !s.is_empty())
}
