//! Chat-completion and tool-call gateway with live, record and replay modes.
//!
//! Every exchange is keyed by a digest of its canonical request encoding, so a
//! recorded cassette replays byte-identical responses.

mod cassette;
mod http;

pub use cassette::{Cassette, CassetteMetadata, CassetteRecord};
pub use http::{backoff_before, HttpChatBackend, RetryPolicy, API_KEY_ENV, DEFAULT_ENDPOINT, ENDPOINT_ENV};

use crate::text::sha256_hex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("network error: {0}")]
    Network(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after retries")]
    RateLimited,
    #[error("no cassette record for digest {0}")]
    ReplayMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cassette: {0}")]
    Cassette(String),
    #[error("missing credentials: set {0}")]
    MissingCredentials(String),
    #[error("{0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        ChatRequest { model_id: model_id.into(), prompt: prompt.into(), max_tokens: 512, temperature: 0.0, stop: Vec::new() }
    }

    pub fn with_max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_stop<I, S>(mut self, stop: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.stop = stop.into_iter().map(Into::into).collect();
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!("temperature {} is not a non-negative number", self.temperature)));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        digest(self)
    }
}

/// Hashes `fields` after a domain tag, each length-prefixed (u64 big-endian).
fn encode_digest(tag: &str, fields: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for f in std::iter::once(tag.as_bytes()).chain(fields.iter().copied()) {
        h.update((f.len() as u64).to_be_bytes());
        h.update(f);
    }
    hex::encode(h.finalize())
}

/// Canonical digest of a chat request. Field order: model, prompt, max_tokens,
/// temperature, stop count, stops.
pub fn digest(req: &ChatRequest) -> String {
    let max_tokens = req.max_tokens.to_string();
    let temperature = req.temperature.to_string();
    let stop_count = req.stop.len().to_string();
    let mut fields: Vec<&[u8]> = vec![
        req.model_id.as_bytes(),
        req.prompt.as_bytes(),
        max_tokens.as_bytes(),
        temperature.as_bytes(),
        stop_count.as_bytes(),
    ];
    fields.extend(req.stop.iter().map(|s| s.as_bytes()));
    encode_digest("chat/v1", &fields)
}

/// A non-LLM external call (vision, search) routed through the cassette.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolCall {
    pub adapter: String,
    pub route: String,
    pub params: serde_json::Value,
    pub payload: Vec<u8>,
}

impl ToolCall {
    pub fn digest(&self) -> String {
        let params = serde_json::to_string(&self.params).expect("json value serializes");
        let payload_sha = sha256_hex(&self.payload);
        encode_digest(
            "tool/v1",
            &[self.adapter.as_bytes(), self.route.as_bytes(), params.as_bytes(), payload_sha.as_bytes()],
        )
    }

    fn prompt_sha(&self) -> String {
        let params = serde_json::to_string(&self.params).expect("json value serializes");
        sha256_hex(format!("{}\n{}\n{}", self.route, params, sha256_hex(&self.payload)).as_bytes())
    }
}

/// Transport for live chat completions.
pub trait ChatBackend: Send + Sync {
    fn send(&self, req: &ChatRequest) -> Result<String, GatewayError>;
}

impl<F> ChatBackend for F
where
    F: Fn(&ChatRequest) -> Result<String, GatewayError> + Send + Sync,
{
    fn send(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        self(req)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Mode {
    Live,
    Record { cassette: PathBuf },
    Replay { cassette: PathBuf, strict: bool },
}

impl Mode {
    pub fn is_replay(&self) -> bool {
        matches!(self, Mode::Replay { .. })
    }

    pub fn needs_backend(&self) -> bool {
        !self.is_replay()
    }
}

/// Result of one gateway exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub text: String,
    pub digest: String,
    /// Lenient replay found no record; `text` is empty.
    pub replay_miss: bool,
}

enum Route {
    Live,
    Record,
    Replay { strict: bool },
}

pub struct Gateway {
    route: Route,
    backend: Option<Arc<dyn ChatBackend>>,
    cassette: Option<Cassette>,
    chat_calls: AtomicUsize,
    tool_calls: AtomicUsize,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mode = match self.route {
            Route::Live => "live",
            Route::Record => "record",
            Route::Replay { strict: true } => "replay(strict)",
            Route::Replay { strict: false } => "replay",
        };
        f.debug_struct("Gateway").field("mode", &mode).field("chat_calls", &self.chat_calls()).finish()
    }
}

impl Gateway {
    pub fn live(backend: Arc<dyn ChatBackend>) -> Self {
        Self::build(Route::Live, Some(backend), None)
    }

    pub fn record(backend: Arc<dyn ChatBackend>, cassette: Cassette) -> Self {
        Self::build(Route::Record, Some(backend), Some(cassette))
    }

    pub fn replay(cassette: Cassette, strict: bool) -> Self {
        Self::build(Route::Replay { strict }, None, Some(cassette))
    }

    /// Builds a gateway for `mode`; live and record modes need a backend.
    pub fn from_mode(mode: &Mode, backend: Option<Arc<dyn ChatBackend>>) -> Result<Self, GatewayError> {
        match mode {
            Mode::Replay { cassette, strict } => Ok(Self::replay(Cassette::open(cassette)?, *strict)),
            Mode::Live => {
                let b = backend.ok_or_else(|| GatewayError::MissingCredentials(API_KEY_ENV.into()))?;
                Ok(Self::live(b))
            }
            Mode::Record { cassette } => {
                let b = backend.ok_or_else(|| GatewayError::MissingCredentials(API_KEY_ENV.into()))?;
                Ok(Self::record(b, Cassette::open_for_append(cassette)?))
            }
        }
    }

    fn build(route: Route, backend: Option<Arc<dyn ChatBackend>>, cassette: Option<Cassette>) -> Self {
        Gateway { route, backend, cassette, chat_calls: AtomicUsize::new(0), tool_calls: AtomicUsize::new(0) }
    }

    pub fn is_replay(&self) -> bool {
        matches!(self.route, Route::Replay { .. })
    }

    pub fn cassette(&self) -> Option<&Cassette> {
        self.cassette.as_ref()
    }

    /// Number of chat completions requested so far (hits and misses alike).
    pub fn chat_calls(&self) -> usize {
        self.chat_calls.load(Ordering::SeqCst)
    }

    pub fn tool_calls(&self) -> usize {
        self.tool_calls.load(Ordering::SeqCst)
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<Exchange, GatewayError> {
        req.validate()?;
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        let digest = digest(req);
        let prompt_sha = sha256_hex(req.prompt.as_bytes());
        self.run(digest, &req.model_id, prompt_sha, || self.live_backend()?.send(req))
    }

    /// Routes a tool call through the cassette; `live` performs the real request.
    pub fn exchange<F>(&self, call: &ToolCall, live: F) -> Result<Exchange, GatewayError>
    where
        F: FnOnce() -> Result<String, GatewayError>,
    {
        self.tool_calls.fetch_add(1, Ordering::SeqCst);
        self.run(call.digest(), &call.adapter, call.prompt_sha(), live)
    }

    fn live_backend(&self) -> Result<&Arc<dyn ChatBackend>, GatewayError> {
        self.backend.as_ref().ok_or_else(|| GatewayError::MissingCredentials(API_KEY_ENV.into()))
    }

    fn run<F>(&self, digest: String, model_id: &str, prompt_sha: String, live: F) -> Result<Exchange, GatewayError>
    where
        F: FnOnce() -> Result<String, GatewayError>,
    {
        match self.route {
            Route::Live => Ok(Exchange { text: live()?, digest, replay_miss: false }),
            Route::Record => {
                let cassette = self.cassette.as_ref().expect("record mode has a cassette");
                if let Some(text) = cassette.get(&digest) {
                    return Ok(Exchange { text, digest, replay_miss: false });
                }
                let text = live()?;
                cassette.append(CassetteRecord {
                    digest: digest.clone(),
                    model_id: model_id.to_string(),
                    prompt_sha,
                    response: text.clone(),
                })?;
                Ok(Exchange { text, digest, replay_miss: false })
            }
            Route::Replay { strict } => {
                let cassette = self.cassette.as_ref().expect("replay mode has a cassette");
                match cassette.get(&digest) {
                    Some(text) => Ok(Exchange { text, digest, replay_miss: false }),
                    None if strict => Err(GatewayError::ReplayMiss(digest)),
                    None => Ok(Exchange { text: String::new(), digest, replay_miss: true }),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn req() -> ChatRequest {
        ChatRequest::new("gpt-4", "Question: why?\n\nSolution:")
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(digest(&req()), digest(&req()));
        assert_eq!(digest(&req()).len(), 64);
    }

    #[test]
    fn temperature_changes_digest() {
        assert_ne!(digest(&req()), digest(&req().with_temperature(0.5)));
    }

    #[test]
    fn length_prefix_prevents_field_shifting() {
        let a = ChatRequest::new("ab", "c");
        let b = ChatRequest::new("a", "bc");
        assert_ne!(digest(&a), digest(&b));
        let a = req().with_stop(["x", "y"]);
        let b = req().with_stop(["xy"]);
        assert_ne!(digest(&a), digest(&b));
    }

    #[test]
    fn thousand_random_requests_have_distinct_digests() {
        let mut seen = HashSet::new();
        for i in 0..1000u32 {
            let r = ChatRequest::new(format!("m{}", i % 3), format!("prompt {}", i * 7919 % 1009))
                .with_max_tokens(1 + i % 5)
                .with_temperature((i % 4) as f64 / 4.0);
            seen.insert(digest(&r));
        }
        // Prompts repeat with period 1009 but the (model, tokens, temperature) tuple differs.
        assert_eq!(seen.len(), 1000);
    }

    #[test]
    fn replay_hit_and_strict_miss() {
        let r = req();
        let cassette = Cassette::from_records([CassetteRecord {
            digest: digest(&r),
            model_id: "gpt-4".into(),
            prompt_sha: sha256_hex(r.prompt.as_bytes()),
            response: "hello".into(),
        }]);
        let gw = Gateway::replay(cassette, true);
        assert_eq!(gw.complete(&r).unwrap().text, "hello");
        assert!(matches!(gw.complete(&r.clone().with_max_tokens(7)), Err(GatewayError::ReplayMiss(_))));
        assert_eq!(gw.chat_calls(), 2);
    }

    #[test]
    fn lenient_miss_returns_empty_text() {
        let gw = Gateway::replay(Cassette::in_memory(), false);
        let ex = gw.complete(&req()).unwrap();
        assert_eq!(ex.text, "");
        assert!(ex.replay_miss);
    }

    #[test]
    fn invalid_requests_are_rejected() {
        let gw = Gateway::replay(Cassette::in_memory(), false);
        assert!(matches!(gw.complete(&ChatRequest::new("m", "")), Err(GatewayError::InvalidRequest(_))));
        assert!(gw.complete(&req().with_max_tokens(0)).is_err());
        assert!(gw.complete(&req().with_temperature(-1.0)).is_err());
    }

    #[test]
    fn record_then_replay_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ndjson");
        let backend: Arc<dyn ChatBackend> =
            Arc::new(|r: &ChatRequest| Ok::<_, GatewayError>(format!("echo:{}\u{1F600}", r.prompt.len())));
        let recorded = {
            let gw = Gateway::record(backend, Cassette::open_for_append(&path).unwrap());
            gw.complete(&req()).unwrap().text
        };
        let gw = Gateway::from_mode(&Mode::Replay { cassette: path, strict: true }, None).unwrap();
        assert_eq!(gw.complete(&req()).unwrap().text, recorded);
    }

    #[test]
    fn record_mode_reuses_existing_records() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c2 = calls.clone();
        let backend: Arc<dyn ChatBackend> = Arc::new(move |_: &ChatRequest| {
            c2.fetch_add(1, Ordering::SeqCst);
            Ok::<_, GatewayError>("x".to_string())
        });
        let gw = Gateway::record(backend, Cassette::in_memory());
        gw.complete(&req()).unwrap();
        gw.complete(&req()).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(gw.cassette().unwrap().len(), 1);
    }

    #[test]
    fn tool_calls_replay_through_cassette() {
        let call = ToolCall {
            adapter: "vision.caption".into(),
            route: "/caption".into(),
            params: serde_json::json!({"num_beams": 4}),
            payload: b"png".to_vec(),
        };
        let rec = Gateway::record(Arc::new(|_: &ChatRequest| Ok::<_, GatewayError>(String::new())), Cassette::in_memory());
        rec.exchange(&call, || Ok("{\"caption\":\"a cat\"}".into())).unwrap();
        let gw = Gateway::replay(Cassette::from_records(rec.cassette().unwrap().records()), true);
        let ex = gw.exchange(&call, || panic!("replay must not go live")).unwrap();
        assert_eq!(ex.text, "{\"caption\":\"a cat\"}");
        let other = ToolCall { payload: b"jpg".to_vec(), ..call };
        assert!(gw.exchange(&other, || unreachable!()).is_err());
    }

    #[test]
    fn live_mode_without_backend_is_configuration_error() {
        assert!(matches!(Gateway::from_mode(&Mode::Live, None), Err(GatewayError::MissingCredentials(_))));
    }

    proptest! {
        #[test]
        fn any_single_field_change_alters_digest(
            prompt in ".{1,40}", other in ".{1,40}", tokens in 1u32..2000, t in 0.0f64..2.0
        ) {
            let base = ChatRequest::new("gpt-4", prompt.clone()).with_max_tokens(tokens).with_temperature(t);
            if other != prompt {
                prop_assert_ne!(digest(&base), digest(&ChatRequest { prompt: other.clone(), ..base.clone() }));
            }
            prop_assert_ne!(digest(&base), digest(&ChatRequest { max_tokens: tokens + 1, ..base.clone() }));
            prop_assert_ne!(digest(&base), digest(&ChatRequest { model_id: "gpt-3.5-turbo".into(), ..base.clone() }));
            prop_assert_ne!(digest(&base), digest(&base.clone().with_stop(["\n\n"])));
        }
    }
}
