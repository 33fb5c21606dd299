//! Deterministic local stand-in for the vision, search and chat services.
//! Used by tests, fixture authoring and the `stub-server` command.

use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use tiny_http::{Header, Method, Response, Server};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChatRule {
    /// Substring the prompt must contain.
    pub contains: String,
    pub response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StubConfig {
    /// Image file name → caption.
    #[serde(default)]
    pub captions: BTreeMap<String, String>,
    /// Image file name → detected items (`{box, text}` objects).
    #[serde(default)]
    pub ocr: BTreeMap<String, serde_json::Value>,
    /// Search query → snippets.
    #[serde(default)]
    pub search: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub default_caption: Option<String>,
    #[serde(default)]
    pub chat: Vec<ChatRule>,
    /// The first N requests on any route answer this status instead.
    #[serde(default)]
    pub fail_first: usize,
    #[serde(default = "default_fail_status")]
    pub fail_status: u16,
}

fn default_fail_status() -> u16 {
    503
}

pub struct StubServer {
    addr: SocketAddr,
    server: Arc<Server>,
    handle: Option<JoinHandle<()>>,
    requests: Arc<AtomicUsize>,
}

impl StubServer {
    /// Binds an ephemeral local port and serves until dropped.
    pub fn start(config: StubConfig) -> std::io::Result<Self> {
        Self::bind("127.0.0.1:0", config)
    }

    pub fn bind(addr: &str, config: StubConfig) -> std::io::Result<Self> {
        let server = Arc::new(Server::http(addr).map_err(|e| std::io::Error::other(e.to_string()))?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("stub server has no IP address"))?;
        let requests = Arc::new(AtomicUsize::new(0));
        let (srv, count) = (server.clone(), requests.clone());
        let handle = std::thread::spawn(move || {
            for mut request in srv.incoming_requests() {
                let n = count.fetch_add(1, Ordering::SeqCst);
                let (status, body) = if n < config.fail_first {
                    (config.fail_status, json!({"error": "injected failure"}).to_string())
                } else {
                    handle(&config, &mut request)
                };
                let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
                let _ = request.respond(Response::from_string(body).with_status_code(status).with_header(header));
            }
        });
        Ok(StubServer { addr, server, handle: Some(handle), requests })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Blocks the calling thread while the server runs.
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn uploaded_file_name(body: &[u8]) -> Option<String> {
    let text = String::from_utf8_lossy(body);
    let re = regex::Regex::new(r#"filename="([^"]+)""#).expect("static regex");
    re.captures(&text).map(|c| c[1].to_string())
}

fn handle(config: &StubConfig, request: &mut tiny_http::Request) -> (u16, String) {
    let mut body = Vec::new();
    let _ = request.as_reader().read_to_end(&mut body);
    let url = match reqwest::Url::parse(&format!("http://stub{}", request.url())) {
        Ok(u) => u,
        Err(_) => return (400, json!({"error": "bad url"}).to_string()),
    };
    match (request.method(), url.path()) {
        (Method::Post, "/caption") => {
            let name = uploaded_file_name(&body).unwrap_or_default();
            match config.captions.get(&name).or(config.default_caption.as_ref()) {
                Some(c) => (200, json!({"caption": c}).to_string()),
                None => (404, json!({"error": format!("no caption for {name}")}).to_string()),
            }
        }
        (Method::Post, "/ocr") => {
            let name = uploaded_file_name(&body).unwrap_or_default();
            let items = config.ocr.get(&name).cloned().unwrap_or_else(|| json!([]));
            (200, json!({"items": items}).to_string())
        }
        (Method::Get, "/search") => {
            let q = url.query_pairs().find(|(k, _)| k == "q").map(|(_, v)| v.into_owned()).unwrap_or_default();
            let results: Vec<_> = config
                .search
                .get(&q)
                .map(|s| s.iter().map(|snippet| json!({"snippet": snippet})).collect())
                .unwrap_or_default();
            (200, json!({"results": results}).to_string())
        }
        (Method::Post, path) if path.ends_with("/chat/completions") => {
            let req: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
            let prompt = req.pointer("/messages/0/content").and_then(|v| v.as_str()).unwrap_or_default();
            let reply = config.chat.iter().find(|r| prompt.contains(&r.contains)).map(|r| r.response.clone()).unwrap_or_default();
            (200, json!({"choices": [{"message": {"role": "assistant", "content": reply}}]}).to_string())
        }
        _ => (404, json!({"error": "no such route"}).to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serves_search_and_unknown_routes() {
        let mut cfg = StubConfig::default();
        cfg.search.insert("death valley".into(), vec!["a".into(), "b".into()]);
        let stub = StubServer::start(cfg).unwrap();
        let client = reqwest::blocking::Client::new();
        let body = client.get(format!("{}/search", stub.base_url())).query(&[("q", "death valley")]).send().unwrap().text().unwrap();
        assert_eq!(body, r#"{"results":[{"snippet":"a"},{"snippet":"b"}]}"#);
        assert_eq!(client.get(format!("{}/nope", stub.base_url())).send().unwrap().status().as_u16(), 404);
        assert_eq!(stub.requests(), 2);
    }
}
