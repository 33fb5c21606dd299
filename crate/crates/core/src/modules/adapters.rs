//! HTTP clients for the external vision and search services. Every call goes
//! through the gateway so recorded responses replay without the service.

use crate::gateway::{Exchange, Gateway, GatewayError, ToolCall};
use crate::types::{FailureReason, TextBox};
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::time::Duration;
use thiserror::Error;

pub const SEARCH_API_KEY_ENV: &str = "COMPOSE_SEARCH_API_KEY";
pub const CAPTION_ADAPTER: &str = "vision.caption";
pub const OCR_ADAPTER: &str = "vision.ocr";
pub const SEARCH_ADAPTER: &str = "search.web";
pub const SEARCH_TOP_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdapterError {
    #[error("adapter unavailable: {0}")]
    Unavailable(String),
    #[error("image unreadable: {0}")]
    ImageUnreadable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("search quota exceeded")]
    QuotaExceeded,
}

impl From<AdapterError> for FailureReason {
    fn from(e: AdapterError) -> Self {
        match e {
            AdapterError::Unavailable(s) => FailureReason::AdapterUnavailable(s),
            AdapterError::ImageUnreadable(s) => FailureReason::ImageUnreadable(s),
            AdapterError::Protocol(s) => FailureReason::AdapterProtocol(s),
            AdapterError::QuotaExceeded => FailureReason::QuotaExceeded,
        }
    }
}

fn gateway_err(e: GatewayError) -> AdapterError {
    match e {
        GatewayError::RateLimited => AdapterError::QuotaExceeded,
        other => AdapterError::Unavailable(other.to_string()),
    }
}

/// Response of an adapter call plus the exchange bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterReply<T> {
    pub value: T,
    pub digest: String,
    pub replay_miss: bool,
}

#[derive(Debug, Clone, Default)]
pub struct AdapterEndpoints {
    /// Base URL of the vision service (`/caption`, `/ocr` are appended).
    pub vision: Option<String>,
    /// Full URL of the search endpoint.
    pub search: Option<String>,
    pub timeout: Option<Duration>,
}

pub struct Adapters {
    endpoints: AdapterEndpoints,
    client: reqwest::blocking::Client,
    search_key: Option<String>,
    image_root: Option<PathBuf>,
}

impl std::fmt::Debug for Adapters {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Adapters").field("endpoints", &self.endpoints).field("image_root", &self.image_root).finish()
    }
}

impl Default for Adapters {
    fn default() -> Self {
        Self::new(AdapterEndpoints::default())
    }
}

impl Adapters {
    pub fn new(endpoints: AdapterEndpoints) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(endpoints.timeout.unwrap_or(Duration::from_secs(60)))
            .build()
            .expect("http client builds");
        Adapters {
            endpoints,
            client,
            search_key: std::env::var(SEARCH_API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            image_root: None,
        }
    }

    pub fn with_image_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.image_root = Some(root.into());
        self
    }

    pub fn with_search_key(mut self, key: Option<String>) -> Self {
        self.search_key = key;
        self
    }

    pub fn image_path(&self, image_ref: &str) -> PathBuf {
        let p = Path::new(image_ref);
        match &self.image_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn read_image(&self, image_ref: &str) -> Result<(PathBuf, Vec<u8>), AdapterError> {
        let path = self.image_path(image_ref);
        let bytes = std::fs::read(&path).map_err(|e| AdapterError::ImageUnreadable(format!("{}: {e}", path.display())))?;
        if bytes.is_empty() {
            return Err(AdapterError::ImageUnreadable(format!("{} is empty", path.display())));
        }
        Ok((path, bytes))
    }

    fn post_image(&self, route: &str, path: &Path, bytes: &[u8], params: &Value) -> Result<String, GatewayError> {
        let base = self
            .endpoints
            .vision
            .as_deref()
            .ok_or_else(|| GatewayError::Backend("no vision endpoint configured".into()))?;
        let url = format!("{}{}", base.trim_end_matches('/'), route);
        let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
        let form = reqwest::blocking::multipart::Form::new()
            .part("image", reqwest::blocking::multipart::Part::bytes(bytes.to_vec()).file_name(file_name))
            .text("params", params.to_string());
        let resp = self.client.post(url).multipart(form).send().map_err(|e| GatewayError::Network(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(GatewayError::Network(format!("vision service answered {}", resp.status())));
        }
        resp.text().map_err(|e| GatewayError::Network(e.to_string()))
    }

    fn image_call(&self, gw: &Gateway, adapter: &str, route: &str, image_ref: &str, params: Value) -> Result<Exchange, AdapterError> {
        let (path, bytes) = self.read_image(image_ref)?;
        let call = ToolCall { adapter: adapter.into(), route: route.into(), params: params.clone(), payload: bytes };
        gw.exchange(&call, || self.post_image(route, &path, &call.payload, &params)).map_err(gateway_err)
    }

    /// Caption with the published decoding settings (16 tokens, 4 beams).
    pub fn caption(&self, gw: &Gateway, image_ref: &str) -> Result<AdapterReply<String>, AdapterError> {
        let ex = self.image_call(gw, CAPTION_ADAPTER, "/caption", image_ref, json!({"max_caption_length": 16, "num_beams": 4}))?;
        if ex.replay_miss {
            return Err(AdapterError::Unavailable(format!("no recorded caption for digest {}", ex.digest)));
        }
        let caption = parse_caption(&ex.text)?;
        Ok(AdapterReply { value: caption, digest: ex.digest, replay_miss: false })
    }

    pub fn detect_text(&self, gw: &Gateway, image_ref: &str) -> Result<AdapterReply<Vec<TextBox>>, AdapterError> {
        let ex = self.image_call(gw, OCR_ADAPTER, "/ocr", image_ref, json!({}))?;
        if ex.replay_miss {
            return Err(AdapterError::Unavailable(format!("no recorded text detection for digest {}", ex.digest)));
        }
        let items = parse_ocr(&ex.text)?;
        Ok(AdapterReply { value: items, digest: ex.digest, replay_miss: false })
    }

    fn get_search(&self, query: &str) -> Result<String, GatewayError> {
        let url = self
            .endpoints
            .search
            .as_deref()
            .ok_or_else(|| GatewayError::Backend("no search endpoint configured".into()))?;
        let mut req = self.client.get(url).query(&[("q", query), ("count", &SEARCH_TOP_K.to_string())]);
        if let Some(key) = &self.search_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| GatewayError::Network(e.to_string()))?;
        match resp.status().as_u16() {
            429 | 403 => Err(GatewayError::RateLimited),
            s if !(200..300).contains(&s) => Err(GatewayError::Network(format!("search service answered {s}"))),
            _ => resp.text().map_err(|e| GatewayError::Network(e.to_string())),
        }
    }

    /// Top snippets for `query`, at most three.
    pub fn search(&self, gw: &Gateway, query: &str) -> Result<AdapterReply<Vec<String>>, AdapterError> {
        let call = ToolCall {
            adapter: SEARCH_ADAPTER.into(),
            route: "/search".into(),
            params: json!({"q": query, "count": SEARCH_TOP_K}),
            payload: Vec::new(),
        };
        let ex = gw.exchange(&call, || self.get_search(query)).map_err(gateway_err)?;
        if ex.replay_miss {
            return Err(AdapterError::Unavailable(format!("no recorded search response for digest {}", ex.digest)));
        }
        let mut snippets = parse_search(&ex.text)?;
        snippets.truncate(SEARCH_TOP_K);
        Ok(AdapterReply { value: snippets, digest: ex.digest, replay_miss: false })
    }
}

fn parse_json(text: &str) -> Result<Value, AdapterError> {
    serde_json::from_str(text).map_err(|e| AdapterError::Protocol(format!("response is not JSON: {e}")))
}

pub fn parse_caption(text: &str) -> Result<String, AdapterError> {
    parse_json(text)?
        .get("caption")
        .and_then(Value::as_str)
        .map(|s| s.trim().to_string())
        .ok_or_else(|| AdapterError::Protocol("missing string field `caption`".into()))
}

pub fn parse_ocr(text: &str) -> Result<Vec<TextBox>, AdapterError> {
    let v = parse_json(text)?;
    let items = v
        .get("items")
        .and_then(Value::as_array)
        .ok_or_else(|| AdapterError::Protocol("missing array field `items`".into()))?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let bad = |what: &str| AdapterError::Protocol(format!("item {i}: {what}"));
            let text = item.get("text").and_then(Value::as_str).ok_or_else(|| bad("missing text"))?;
            let pts = item.get("box").and_then(Value::as_array).ok_or_else(|| bad("missing box"))?;
            if pts.len() != 4 {
                return Err(bad("box must have four points"));
            }
            let mut quad = [[0i64; 2]; 4];
            for (j, p) in pts.iter().enumerate() {
                let xy = p.as_array().filter(|a| a.len() == 2).ok_or_else(|| bad("point must be [x, y]"))?;
                for (k, c) in xy.iter().enumerate() {
                    quad[j][k] = c.as_i64().ok_or_else(|| bad("coordinates must be integers"))?;
                }
            }
            Ok(TextBox { quad, text: text.to_string() })
        })
        .collect()
}

pub fn parse_search(text: &str) -> Result<Vec<String>, AdapterError> {
    let v = parse_json(text)?;
    let results = v
        .get("results")
        .and_then(Value::as_array)
        .ok_or_else(|| AdapterError::Protocol("missing array field `results`".into()))?;
    Ok(results
        .iter()
        .filter_map(|r| r.get("snippet").and_then(Value::as_str))
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_ocr_items() {
        let items = parse_ocr(r#"{"items":[{"box":[[41,183],[131,183],[131,199],[41,199]],"text":"rubber gloves"}]}"#).unwrap();
        assert_eq!(items[0].text, "rubber gloves");
        assert_eq!(items[0].quad[2], [131, 199]);
        assert!(parse_ocr(r#"{"items":[]}"#).unwrap().is_empty());
    }

    #[test]
    fn malformed_geometry_is_protocol_error() {
        for bad in [
            r#"{"items":[{"box":[[1,2],[3,4],[5,6]],"text":"x"}]}"#,
            r#"{"items":[{"box":[[1,2],[3,4],[5,6],[7]],"text":"x"}]}"#,
            r#"{"items":[{"box":[[1.5,2],[3,4],[5,6],[7,8]],"text":"x"}]}"#,
            r#"{"items":[{"text":"x"}]}"#,
            r#"{"boxes":[]}"#,
        ] {
            assert!(matches!(parse_ocr(bad), Err(AdapterError::Protocol(_))), "{bad}");
        }
    }

    #[test]
    fn search_snippets() {
        let s = parse_search(r#"{"results":[{"snippet":" a "},{"title":"no snippet"},{"snippet":"b"}]}"#).unwrap();
        assert_eq!(s, ["a", "b"]);
    }

    #[test]
    fn caption_field_required() {
        assert_eq!(parse_caption(r#"{"caption":"A cat."}"#).unwrap(), "A cat.");
        assert!(parse_caption(r#"{"text":"A cat."}"#).is_err());
    }
}
