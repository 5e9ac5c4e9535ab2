//! HTTP gateway to external model servers.
//!
//! One wire protocol covers every model kind:
//!
//! * `POST {base}/v1/embed` with `{kind, items: [{image_path?|image_b64?, text?}]}`
//!   answers `{dim, vectors}`.
//! * `POST {base}/v1/generate` with `{turns, temperature, max_tokens}` answers
//!   `{text}`.
//!
//! Transport failures and 5xx responses are retried with exponential backoff;
//! 4xx responses are returned immediately.

use std::io;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::prompts::Prompts;

pub const ENV_URL: &str = "MRAG_GATEWAY_URL";
pub const ENV_TIMEOUT_MS: &str = "MRAG_GATEWAY_TIMEOUT_MS";

pub mod wire {
    //! Request and response bodies shared by the client and the mock server.
    use serde::{Deserialize, Serialize};

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct Item {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub image_path: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub image_b64: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub text: Option<String>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct EmbedRequest {
        pub kind: super::EmbedKind,
        pub items: Vec<Item>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct EmbedResponse {
        pub dim: usize,
        pub vectors: Vec<Vec<f32>>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct Part {
        pub kind: PartKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub text: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub image_path: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub image_b64: Option<String>,
    }

    #[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
    #[serde(rename_all = "lowercase")]
    pub enum PartKind {
        Text,
        Image,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct Turn {
        pub role: super::Role,
        pub parts: Vec<Part>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct GenerateRequest {
        pub turns: Vec<Turn>,
        pub temperature: f64,
        pub max_tokens: u32,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct GenerateResponse {
        pub text: String,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedKind {
    Visual,
    Textual,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbedRequestItem {
    pub image_ref: Option<String>,
    pub text: Option<String>,
}

impl EmbedRequestItem {
    pub fn image(path: impl Into<String>) -> Self {
        Self {
            image_ref: Some(path.into()),
            text: None,
        }
    }

    pub fn text(text: impl Into<String>) -> Self {
        Self {
            image_ref: None,
            text: Some(text.into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Part {
    Text(String),
    /// Image file path; sent by reference or inlined per config.
    Image(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatTurn {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl ChatTurn {
    pub fn new(role: Role, parts: Vec<Part>) -> Self {
        Self { role, parts }
    }

    pub fn text_chars(&self) -> usize {
        self.parts
            .iter()
            .map(|p| match p {
                Part::Text(t) => t.chars().count(),
                Part::Image(_) => 0,
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionSide {
    Query,
    Kb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub base_url: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Maximum concurrent in-flight requests per gateway handle.
    pub parallelism: usize,
    /// Send images as base64 instead of file paths.
    pub inline_images: bool,
    /// First retry delay; doubles per attempt.
    pub backoff_ms: u64,
    pub bearer: Option<String>,
    /// Reuse pooled connections. Off by default: tiny_http 0.12 can park a
    /// fresh connection behind an idle keep-alive one until it closes.
    pub keep_alive: bool,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8700".into(),
            timeout_ms: 60_000,
            max_retries: 3,
            temperature: 0.0,
            max_tokens: 512,
            parallelism: 8,
            inline_images: false,
            backoff_ms: 250,
            bearer: None,
            keep_alive: false,
        }
    }
}

impl GatewayConfig {
    /// Defaults overridden by `MRAG_GATEWAY_URL` and `MRAG_GATEWAY_TIMEOUT_MS`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let mut cfg = Self::default();
        if let Ok(url) = std::env::var(ENV_URL) {
            cfg.base_url = url;
        }
        if let Ok(ms) = std::env::var(ENV_TIMEOUT_MS) {
            cfg.timeout_ms = ms
                .parse()
                .map_err(|_| GatewayError::InvalidConfig(format!("{ENV_TIMEOUT_MS}={ms:?}")))?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.timeout_ms == 0 {
            return Err(GatewayError::InvalidConfig("timeout must be positive".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidConfig("temperature must be >= 0".into()));
        }
        if self.parallelism == 0 {
            return Err(GatewayError::InvalidConfig("parallelism must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("server returned HTTP {status}: {body}")]
    ServerError { status: u16, body: String },
    #[error("embedding dimensions disagree: {0}")]
    DimensionMismatch(String),
    #[error("empty embedding batch")]
    EmptyBatch,
    #[error("model returned an empty caption")]
    EmptyCaption,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid gateway configuration: {0}")]
    InvalidConfig(String),
    #[error("undecodable response: {0}")]
    Decode(String),
    #[error("reading image {path}: {source}")]
    Image { path: String, source: io::Error },
}

impl GatewayError {
    fn retryable(&self) -> bool {
        match self {
            Self::Transport(_) | Self::Timeout => true,
            Self::ServerError { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Shareable handle to a model server.
pub struct Gateway {
    cfg: GatewayConfig,
    agent: ureq::Agent,
    permits: Permits,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("cfg", &self.cfg).finish()
    }
}

fn is_timeout(e: &ureq::Transport) -> bool {
    let mut src: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(e);
    while let Some(s) = src {
        if let Some(io) = s.downcast_ref::<io::Error>() {
            return matches!(io.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock);
        }
        src = s.source();
    }
    e.to_string().contains("timed out")
}

impl Gateway {
    pub fn new(cfg: GatewayConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let idle = if cfg.keep_alive { cfg.parallelism.max(4) } else { 0 };
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .max_idle_connections(idle)
            .max_idle_connections_per_host(idle)
            .build();
        Ok(Self {
            permits: Permits::new(cfg.parallelism),
            cfg,
            agent,
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, GatewayError> {
        let url = format!("{}{}", self.cfg.base_url.trim_end_matches('/'), path);
        let body = serde_json::to_string(body).map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let _permit = self.permits.acquire();
        let mut delay = Duration::from_millis(self.cfg.backoff_ms);
        let mut attempt = 0;
        loop {
            let err = match self.send(&url, &body) {
                Ok(text) => {
                    return serde_json::from_str(&text).map_err(|e| GatewayError::Decode(e.to_string()));
                }
                Err(e) => e,
            };
            if !err.retryable() || attempt >= self.cfg.max_retries {
                return Err(err);
            }
            tracing::debug!(%url, attempt, error = %err, "retrying");
            thread::sleep(delay);
            delay *= 2;
            attempt += 1;
        }
    }

    fn send(&self, url: &str, body: &str) -> Result<String, GatewayError> {
        let mut req = self.agent.post(url).set("Content-Type", "application/json");
        if !self.cfg.keep_alive {
            req = req.set("Connection", "close");
        }
        if let Some(token) = &self.cfg.bearer {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        match req.send_string(body) {
            Ok(resp) => resp.into_string().map_err(|e| GatewayError::Transport(e.to_string())),
            Err(ureq::Error::Status(status, resp)) => Err(GatewayError::ServerError {
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) if is_timeout(&t) => Err(GatewayError::Timeout),
            Err(ureq::Error::Transport(t)) => Err(GatewayError::Transport(t.to_string())),
        }
    }

    fn image_fields(&self, path: &str) -> Result<(Option<String>, Option<String>), GatewayError> {
        if self.cfg.inline_images {
            let bytes = std::fs::read(Path::new(path)).map_err(|source| GatewayError::Image {
                path: path.into(),
                source,
            })?;
            Ok((None, Some(base64::engine::general_purpose::STANDARD.encode(bytes))))
        } else {
            Ok((Some(path.into()), None))
        }
    }

    /// Embed a batch with the visual or textual encoder. Output order
    /// matches `items`.
    pub fn embed_batch(&self, kind: EmbedKind, items: &[EmbedRequestItem]) -> Result<Vec<Vec<f32>>, GatewayError> {
        if items.is_empty() {
            return Err(GatewayError::EmptyBatch);
        }
        let mut wire_items = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            let mut w = wire::Item {
                image_path: None,
                image_b64: None,
                text: item.text.clone(),
            };
            match kind {
                EmbedKind::Visual => {
                    let path = item
                        .image_ref
                        .as_deref()
                        .ok_or_else(|| GatewayError::InvalidRequest(format!("item {i} has no image")))?;
                    (w.image_path, w.image_b64) = self.image_fields(path)?;
                }
                EmbedKind::Textual if item.text.is_none() => {
                    return Err(GatewayError::InvalidRequest(format!("item {i} has no text")));
                }
                EmbedKind::Textual => {}
            }
            wire_items.push(w);
        }
        let resp: wire::EmbedResponse = self.post(
            "/v1/embed",
            &wire::EmbedRequest {
                kind,
                items: wire_items,
            },
        )?;
        if resp.vectors.len() != items.len() {
            return Err(GatewayError::Decode(format!(
                "{} vectors for {} items",
                resp.vectors.len(),
                items.len()
            )));
        }
        if let Some(v) = resp.vectors.iter().find(|v| v.len() != resp.dim) {
            return Err(GatewayError::DimensionMismatch(format!(
                "server reported dim {} but sent a vector of {}",
                resp.dim,
                v.len()
            )));
        }
        Ok(resp.vectors)
    }

    /// Run a chat completion and return the text with trailing whitespace
    /// removed.
    pub fn chat(&self, turns: &[ChatTurn]) -> Result<String, GatewayError> {
        if turns.is_empty() {
            return Err(GatewayError::InvalidRequest("no turns".into()));
        }
        let mut wire_turns = Vec::with_capacity(turns.len());
        for t in turns {
            if t.parts.is_empty() {
                return Err(GatewayError::InvalidRequest("turn without parts".into()));
            }
            let mut parts = Vec::with_capacity(t.parts.len());
            for p in &t.parts {
                parts.push(match p {
                    Part::Text(s) => wire::Part {
                        kind: wire::PartKind::Text,
                        text: Some(s.clone()),
                        image_path: None,
                        image_b64: None,
                    },
                    Part::Image(path) => {
                        let (image_path, image_b64) = self.image_fields(path)?;
                        wire::Part {
                            kind: wire::PartKind::Image,
                            text: None,
                            image_path,
                            image_b64,
                        }
                    }
                });
            }
            wire_turns.push(wire::Turn { role: t.role, parts });
        }
        let resp: wire::GenerateResponse = self.post(
            "/v1/generate",
            &wire::GenerateRequest {
                turns: wire_turns,
                temperature: self.cfg.temperature,
                max_tokens: self.cfg.max_tokens,
            },
        )?;
        Ok(resp.text.trim_end().to_string())
    }

    /// Caption an image. Query-side captions are conditioned on the question;
    /// knowledge-base captions must not be.
    pub fn caption_image(
        &self,
        prompts: &Prompts,
        image_ref: &str,
        side: CaptionSide,
        question: Option<&str>,
    ) -> Result<String, GatewayError> {
        match (side, question) {
            (CaptionSide::Query, None) => {
                return Err(GatewayError::InvalidRequest("query-side caption needs the question".into()))
            }
            (CaptionSide::Kb, Some(_)) => {
                return Err(GatewayError::InvalidRequest("knowledge-base caption takes no question".into()))
            }
            _ => {}
        }
        let caption = self.chat(&prompts.caption(image_ref, side, question))?;
        if caption.trim().is_empty() {
            return Err(GatewayError::EmptyCaption);
        }
        Ok(caption)
    }
}
