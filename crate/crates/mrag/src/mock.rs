//! Deterministic model server speaking the gateway protocol.
//!
//! # Script file
//!
//! JSON object:
//!
//! ```json
//! {
//!   "embed_seed": 7,
//!   "embed_dim": 32,
//!   "rules": [{"match": "substring", "respond": "text"},
//!             {"pattern": "regex", "respond": "text with {qid} / {aid}"}],
//!   "relevance": {"q1": {"a1": true}},
//!   "quality": {"a1": 0.9},
//!   "answers": {"a1": "robin"},
//!   "fail_first": 0
//! }
//! ```
//!
//! Rules are tried first, in order, against the concatenated prompt text.
//! Otherwise the `@@ TASK=` marker selects an oracle:
//!
//! * `relevance`: `YES` iff `relevance[qid][aid]`.
//! * `reflect`: `YES` iff `answers[aid]` exists and the tentative answer
//!   contains it.
//! * `generate`: `answers[aid]` of the first context document.
//! * `listwise` / `pairwise`: candidates sorted by (relevance to the query,
//!   quality) descending, presentation order breaking ties.
//! * `judge`: `CORRECT` iff the answer's token set equals a reference's.
//! * `caption`: `CAPTION(q:<hash>)` or `CAPTION(kb:<hash>)`.
//!
//! Anything else gets [`FALLBACK`]. `fail_first` makes the first N requests
//! answer HTTP 500, for retry tests.
//!
//! # Embeddings
//!
//! The canonical bytes of an item are `"visual\0" + image key` or
//! `"textual\0" + text`, where the image key is the image path, or the base64
//! string for inlined images. A 64-bit FNV-1a hash of
//! `seed (u64 LE) ++ canonical bytes` seeds counter mode: component `i` is
//! `FNV-1a(h (u64 LE) ++ i (u64 LE))`, whose top 53 bits map to `[-1, 1)`. The
//! vector is then L2-normalized in `f64` and stored as `f32`.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::Hasher;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use fnv::FnvHasher;
use mrag_core::text::alnum_tokens;
use regex::Regex;
use serde::{Deserialize, Serialize};
use tiny_http::{Header, Method, Response, Server};

use crate::gateway::wire;
use crate::gateway::EmbedKind;
use crate::prompts::MARKER;

pub const FALLBACK: &str = "UNMATCHED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub substring: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    pub respond: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub embed_seed: u64,
    #[serde(default = "default_dim")]
    pub embed_dim: usize,
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub relevance: BTreeMap<String, BTreeMap<String, bool>>,
    #[serde(default)]
    pub quality: BTreeMap<String, f64>,
    #[serde(default)]
    pub answers: BTreeMap<String, String>,
    #[serde(default)]
    pub fail_first: usize,
}

fn default_dim() -> usize {
    32
}

impl Default for MockScript {
    fn default() -> Self {
        Self {
            embed_seed: 0,
            embed_dim: default_dim(),
            rules: Vec::new(),
            relevance: BTreeMap::new(),
            quality: BTreeMap::new(),
            answers: BTreeMap::new(),
            fail_first: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MockError {
    #[error("bad rule pattern: {0}")]
    Pattern(#[from] regex::Error),
    #[error("embed_dim must be at least 2")]
    Dim,
    #[error("reading script: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing script: {0}")]
    Json(#[from] serde_json::Error),
    #[error("rule needs exactly one of `match` or `pattern`")]
    Rule,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, MockError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn is_relevant(&self, qid: &str, aid: &str) -> bool {
        self.relevance
            .get(qid)
            .and_then(|m| m.get(aid))
            .copied()
            .unwrap_or(false)
    }
}

fn fnv(parts: &[&[u8]]) -> u64 {
    let mut h = FnvHasher::default();
    for p in parts {
        h.write(p);
    }
    h.finish()
}

/// Deterministic unit vector for an embedding item. See the module docs.
pub fn mock_embed(seed: u64, kind: EmbedKind, item: &wire::Item, dim: usize) -> Vec<f32> {
    assert!(dim >= 2, "dim must be at least 2");
    let (tag, content): (&[u8], &str) = match kind {
        EmbedKind::Visual => (
            b"visual\0",
            item.image_path
                .as_deref()
                .or(item.image_b64.as_deref())
                .unwrap_or_default(),
        ),
        EmbedKind::Textual => (b"textual\0", item.text.as_deref().unwrap_or_default()),
    };
    let h = fnv(&[&seed.to_le_bytes(), tag, content.as_bytes()]);
    let raw: Vec<f64> = (0..dim as u64)
        .map(|i| {
            let r = fnv(&[&h.to_le_bytes(), &i.to_le_bytes()]);
            (r >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    raw.iter().map(|x| (x / norm) as f32).collect()
}

/// Markers and text extracted from a generate request.
#[derive(Debug, Default)]
struct Parsed {
    text: String,
    task: Option<String>,
    qid: Option<String>,
    side: Option<String>,
    aids: Vec<String>,
    tentative: Option<String>,
    answer: Option<String>,
    references: Vec<String>,
    question: Option<String>,
    images: Vec<String>,
}

fn parse_request(turns: &[wire::Turn]) -> Parsed {
    let mut p = Parsed::default();
    let mut texts = Vec::new();
    for part in turns.iter().flat_map(|t| &t.parts) {
        if let Some(t) = &part.text {
            texts.push(t.as_str());
        }
        if let Some(img) = part.image_path.as_ref().or(part.image_b64.as_ref()) {
            p.images.push(img.clone());
        }
    }
    p.text = texts.join("\n");
    for line in p.text.lines() {
        let Some(rest) = line.strip_prefix(MARKER) else { continue };
        let free_text = ["TENTATIVE", "ANSWER", "REFERENCE", "QUESTION"]
            .iter()
            .find_map(|k| rest.strip_prefix(&format!("{k}=")).map(|v| (*k, v.to_string())));
        match free_text {
            Some(("TENTATIVE", v)) => p.tentative = Some(v),
            Some(("ANSWER", v)) => p.answer = Some(v),
            Some(("REFERENCE", v)) => p.references.push(v),
            Some((_, v)) => p.question = Some(v),
            None => {
                for field in rest.split_whitespace() {
                    let Some((k, v)) = field.split_once('=') else { continue };
                    match k {
                        "TASK" => p.task = Some(v.into()),
                        "QID" => p.qid = Some(v.into()),
                        "SIDE" => p.side = Some(v.into()),
                        "AID" => p.aids.push(v.into()),
                        _ => {}
                    }
                }
            }
        }
    }
    p
}

/// A script with its rule patterns compiled.
#[derive(Debug, Clone)]
pub struct Mock {
    script: MockScript,
    patterns: Vec<Option<Regex>>,
}

impl Mock {
    pub fn new(script: MockScript) -> Result<Self, MockError> {
        if script.embed_dim < 2 {
            return Err(MockError::Dim);
        }
        let patterns = script
            .rules
            .iter()
            .map(|r| match (&r.substring, &r.pattern) {
                (Some(_), None) => Ok(None),
                (None, Some(p)) => Ok(Some(Regex::new(p)?)),
                _ => Err(MockError::Rule),
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { script, patterns })
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    pub fn embed(&self, req: &wire::EmbedRequest) -> wire::EmbedResponse {
        let dim = self.script.embed_dim;
        wire::EmbedResponse {
            dim,
            vectors: req
                .items
                .iter()
                .map(|it| mock_embed(self.script.embed_seed, req.kind, it, dim))
                .collect(),
        }
    }

    /// Candidate order by (relevance, quality) descending, position ascending.
    fn oracle_order(&self, qid: &str, aids: &[String]) -> Vec<usize> {
        let key = |a: &String| {
            (
                self.script.is_relevant(qid, a),
                self.script.quality.get(a).copied().unwrap_or(0.0),
            )
        };
        let mut order: Vec<usize> = (0..aids.len()).collect();
        order.sort_by(|&x, &y| {
            let (rx, qx) = key(&aids[x]);
            let (ry, qy) = key(&aids[y]);
            ry.cmp(&rx).then(qy.total_cmp(&qx)).then(x.cmp(&y))
        });
        order
    }

    pub fn generate(&self, turns: &[wire::Turn]) -> String {
        let p = parse_request(turns);
        let qid = p.qid.clone().unwrap_or_default();
        for (rule, re) in self.script.rules.iter().zip(&self.patterns) {
            let hit = match (re, &rule.substring) {
                (Some(re), _) => re.is_match(&p.text),
                (None, Some(s)) => p.text.contains(s.as_str()),
                (None, None) => false,
            };
            if hit {
                return rule
                    .respond
                    .replace("{qid}", &qid)
                    .replace("{aid}", p.aids.first().map_or("", String::as_str));
            }
        }
        let yes_no = |b: bool| if b { "YES" } else { "NO" }.to_string();
        let planted = |aid: Option<&String>| aid.and_then(|a| self.script.answers.get(a));
        match p.task.as_deref() {
            Some("relevance") => match p.aids.first() {
                Some(a) => yes_no(self.script.is_relevant(&qid, a)),
                None => FALLBACK.into(),
            },
            Some("reflect") => {
                let tentative = p.tentative.unwrap_or_default();
                yes_no(planted(p.aids.first()).is_some_and(|ans| tentative.contains(ans.as_str())))
            }
            Some("generate") => planted(p.aids.first()).cloned().unwrap_or_else(|| FALLBACK.into()),
            Some("listwise") if !p.aids.is_empty() => self
                .oracle_order(&qid, &p.aids)
                .iter()
                .map(|i| format!("[{}]", i + 1))
                .collect::<Vec<_>>()
                .join(" > "),
            Some("pairwise") if p.aids.len() == 2 => {
                if self.oracle_order(&qid, &p.aids)[0] == 0 { "A" } else { "B" }.into()
            }
            Some("judge") => {
                let answer: BTreeSet<String> = alnum_tokens(&p.answer.unwrap_or_default()).into_iter().collect();
                let ok = !answer.is_empty()
                    && p.references
                        .iter()
                        .any(|r| alnum_tokens(r).into_iter().collect::<BTreeSet<_>>() == answer);
                if ok { "CORRECT" } else { "INCORRECT" }.into()
            }
            Some("caption") => {
                let image = p.images.first().map_or("", String::as_str);
                let seed = self.script.embed_seed.to_le_bytes();
                match p.side.as_deref() {
                    Some("query") => {
                        let q = p.question.unwrap_or_default();
                        format!("CAPTION(q:{:016x})", fnv(&[&seed, image.as_bytes(), b"\0", q.as_bytes()]))
                    }
                    _ => format!("CAPTION(kb:{:016x})", fnv(&[&seed, image.as_bytes()])),
                }
            }
            _ => FALLBACK.into(),
        }
    }
}

/// Pure function form of [`Mock::generate`].
pub fn mock_generate(script: &MockScript, turns: &[wire::Turn]) -> Result<String, MockError> {
    Ok(Mock::new(script.clone())?.generate(turns))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub endpoint: String,
    pub status: u16,
    #[serde(default)]
    pub task: Option<String>,
    #[serde(default)]
    pub qid: Option<String>,
    #[serde(default)]
    pub aids: Vec<String>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub prompt: Option<String>,
}

struct Shared {
    mock: Mock,
    log: Mutex<Vec<LogEntry>>,
    requests: AtomicUsize,
}

/// A running mock server. Dropping it stops the worker threads.
pub struct MockServer {
    server: Arc<Server>,
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
    addr: SocketAddr,
}

const WORKERS: usize = 8;

fn json_response(status: u16, body: String) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_string(body)
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").unwrap())
}

fn handle(shared: &Shared, mut req: tiny_http::Request) {
    let n = shared.requests.fetch_add(1, Ordering::SeqCst);
    let mut body = String::new();
    let read = req.as_reader().read_to_string(&mut body);
    let path = req.url().to_string();
    let mut entry = LogEntry {
        endpoint: path.clone(),
        status: 200,
        task: None,
        qid: None,
        aids: vec![],
        temperature: None,
        prompt: None,
    };
    let (status, out) = if read.is_err() {
        (400, r#"{"error":"unreadable body"}"#.to_string())
    } else if n < shared.mock.script.fail_first {
        (500, r#"{"error":"injected failure"}"#.to_string())
    } else {
        match (req.method(), path.as_str()) {
            (Method::Get, "/health") => (200, r#"{"status":"ok"}"#.to_string()),
            (Method::Get, "/v1/log") => {
                let log = shared.log.lock().unwrap();
                let _ = req.respond(json_response(200, serde_json::to_string(&*log).unwrap()));
                return;
            }
            (Method::Post, "/v1/embed") => match serde_json::from_str::<wire::EmbedRequest>(&body) {
                Ok(r) => (200, serde_json::to_string(&shared.mock.embed(&r)).unwrap()),
                Err(e) => (400, serde_json::json!({ "error": e.to_string() }).to_string()),
            },
            (Method::Post, "/v1/generate") => match serde_json::from_str::<wire::GenerateRequest>(&body) {
                Ok(r) => {
                    let p = parse_request(&r.turns);
                    entry.task = p.task;
                    entry.qid = p.qid;
                    entry.aids = p.aids;
                    entry.temperature = Some(r.temperature);
                    entry.prompt = Some(p.text);
                    let text = shared.mock.generate(&r.turns);
                    (200, serde_json::to_string(&wire::GenerateResponse { text }).unwrap())
                }
                Err(e) => (400, serde_json::json!({ "error": e.to_string() }).to_string()),
            },
            _ => (404, r#"{"error":"not found"}"#.to_string()),
        }
    };
    entry.status = status;
    if path != "/health" {
        shared.log.lock().unwrap().push(entry);
    }
    let _ = req.respond(json_response(status, out));
}

impl MockServer {
    /// Bind `addr` (use port 0 for an ephemeral port) and start serving.
    pub fn start(script: MockScript, addr: &str) -> Result<Self, MockError> {
        let mock = Mock::new(script)?;
        let server = Arc::new(Server::http(addr).map_err(|e| MockError::Io(std::io::Error::other(e)))?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| MockError::Io(std::io::Error::other("not an IP listener")))?;
        let shared = Arc::new(Shared {
            mock,
            log: Mutex::new(Vec::new()),
            requests: AtomicUsize::new(0),
        });
        let workers = (0..WORKERS)
            .map(|_| {
                let (server, shared) = (server.clone(), shared.clone());
                std::thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        handle(&shared, req);
                    }
                })
            })
            .collect();
        Ok(Self {
            server,
            shared,
            workers,
            addr,
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Every request received so far, in arrival order.
    pub fn log(&self) -> Vec<LogEntry> {
        self.shared.log.lock().unwrap().clone()
    }

    pub fn clear_log(&self) {
        self.shared.log.lock().unwrap().clear();
    }

    /// Number of HTTP requests received, including injected failures.
    pub fn request_count(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    /// Count of logged generate requests per task marker.
    pub fn task_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for e in self.shared.log.lock().unwrap().iter() {
            if let Some(t) = &e.task {
                *out.entry(t.clone()).or_insert(0) += 1;
            }
        }
        out
    }

    /// Block the calling thread until the process is killed.
    pub fn wait(mut self) {
        for w in std::mem::take(&mut self.workers) {
            let _ = w.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}
