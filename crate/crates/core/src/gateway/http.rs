use super::{ChatBackend, ChatRequest, GatewayError};
use serde_json::{json, Value};
use std::time::Duration;
use tracing::warn;

pub const API_KEY_ENV: &str = "COMPOSE_LLM_API_KEY";
pub const ENDPOINT_ENV: &str = "COMPOSE_LLM_ENDPOINT";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, initial_backoff: Duration::from_secs(1) }
    }
}

/// Backoff before attempt `n` (1-based, so attempt 2 waits the initial backoff).
pub fn backoff_before(policy: &RetryPolicy, attempt: u32) -> Duration {
    if attempt <= 1 {
        Duration::ZERO
    } else {
        policy.initial_backoff * 2u32.saturating_pow(attempt - 2)
    }
}

/// Chat-completions client: single user message, bearer auth.
pub struct HttpChatBackend {
    endpoint: String,
    api_key: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl HttpChatBackend {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Network(e.to_string()))?;
        Ok(HttpChatBackend { endpoint: endpoint.into(), api_key: api_key.into(), client, retry: RetryPolicy::default() })
    }

    /// Reads the key (required) and endpoint (optional) from the environment.
    pub fn from_env(timeout: Duration) -> Result<Self, GatewayError> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| GatewayError::MissingCredentials(API_KEY_ENV.into()))?;
        let endpoint = std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| DEFAULT_ENDPOINT.to_string());
        Self::new(endpoint, key, timeout)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn body(req: &ChatRequest) -> Value {
        let mut body = json!({
            "model": req.model_id,
            "messages": [{"role": "user", "content": req.prompt}],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        });
        if !req.stop.is_empty() {
            body["stop"] = json!(req.stop);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<String, GatewayError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| GatewayError::Network(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(GatewayError::Auth(format!("endpoint answered {status}")));
        }
        if status.as_u16() == 429 {
            return Err(GatewayError::RateLimited);
        }
        if !status.is_success() {
            return Err(GatewayError::Network(format!("endpoint answered {status}")));
        }
        let v: Value = resp.json().map_err(|e| GatewayError::Network(format!("malformed response: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Network("response has no choices[0].message.content".into()))
    }
}

impl ChatBackend for HttpChatBackend {
    fn send(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let body = Self::body(req);
        let mut last = GatewayError::Network("no attempt made".into());
        for attempt in 1..=self.retry.attempts.max(1) {
            std::thread::sleep(backoff_before(&self.retry, attempt));
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e @ GatewayError::Auth(_)) => return Err(e),
                Err(e) => {
                    warn!(attempt, error = %e, "chat completion attempt failed");
                    last = e;
                }
            }
        }
        Err(last)
    }
}
