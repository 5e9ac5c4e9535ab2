//! Read-only HTTP service over a loaded [`Engine`].
//!
//! * `GET /health` → `{"status":"ok","index_rows":N,"dim":D}`
//! * `POST /retrieve {query:{image_path?, text?}, k?}` → `RankedList`
//! * `POST /rerank {query, candidates:[article_id], strategy}` → `RerankOutcome`
//! * `POST /answer {query, condition, ranking?}` → `AnswerRecord`, or an
//!   `AgentTranscript` when `condition` is `"agent"`
//!
//! A query object may carry `id`, `image_path`, `text` (or `question`),
//! `gold_article_ids` and `reference_answers`. When `id` names a query of
//! the loaded query file, absent fields are taken from it. Without an
//! explicit `ranking`, `/answer` retrieves (and re-ranks, when configured)
//! exactly as the pipeline does.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use mrag_core::corpus::QueryCase;
use mrag_core::fusion::FusionError;
use mrag_core::generate::{ContextError, GenCondition};
use mrag_core::index::IndexError;
use mrag_core::modality::ModalityError;
use mrag_core::rerank::{RerankOutcome, Strategy};
use serde::{Deserialize, Serialize};
use tiny_http::{Header, Method, Request, Response, Server};

use crate::config::AgentOrder;
use crate::gateway::GatewayError;
use crate::pipeline::Engine;
use crate::records::RunLine;
use crate::rerank::RerankError;
use crate::retrieval::{embed_plans, RetrievalError};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct QueryIn {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default, alias = "image_ref")]
    pub image_path: Option<String>,
    #[serde(default, alias = "question")]
    pub text: Option<String>,
    #[serde(default)]
    pub gold_article_ids: Vec<String>,
    #[serde(default)]
    pub reference_answers: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct RetrieveReq {
    query: QueryIn,
    k: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct RerankReq {
    query: QueryIn,
    candidates: Vec<String>,
    strategy: Strategy,
}

#[derive(Debug, Deserialize)]
struct AnswerReq {
    query: QueryIn,
    condition: String,
    #[serde(default)]
    ranking: Option<Vec<String>>,
}

#[derive(Debug)]
pub struct HttpError {
    pub status: u16,
    pub message: String,
}

impl HttpError {
    fn new(status: u16, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad(message: impl Into<String>) -> Self {
        Self::new(400, message)
    }
}

/// 422 for references the store cannot resolve, 400 for unusable input,
/// 502 for model-server failures, 500 otherwise.
fn classify(e: anyhow::Error) -> HttpError {
    let msg = format!("{e:#}");
    for cause in e.chain() {
        if cause.downcast_ref::<ContextError>().is_some() {
            return HttpError::new(422, msg);
        }
        if cause.downcast_ref::<GatewayError>().is_some() {
            return HttpError::new(502, msg);
        }
        if let Some(r) = cause.downcast_ref::<RerankError>() {
            return match r {
                RerankError::Context(_) => HttpError::new(422, msg),
                RerankError::Aborted { .. } => HttpError::new(502, msg),
                _ => HttpError::new(400, msg),
            };
        }
        if let Some(r) = cause.downcast_ref::<RetrievalError>() {
            return match r {
                RetrievalError::Gateway(_) => HttpError::new(502, msg),
                _ => HttpError::new(400, msg),
            };
        }
        if cause.downcast_ref::<ModalityError>().is_some()
            || cause.downcast_ref::<FusionError>().is_some()
            || cause.downcast_ref::<IndexError>().is_some()
        {
            return HttpError::new(400, msg);
        }
    }
    HttpError::new(500, msg)
}

fn resolve_query(engine: &Engine, q: &QueryIn) -> QueryCase {
    let known = q.id.as_deref().and_then(|id| engine.query(id));
    let pick = |mine: &Option<String>, theirs: Option<&String>| mine.clone().or_else(|| theirs.cloned()).unwrap_or_default();
    let pick_list = |mine: &Vec<String>, theirs: Option<&Vec<String>>| {
        if mine.is_empty() {
            theirs.cloned().unwrap_or_default()
        } else {
            mine.clone()
        }
    };
    QueryCase {
        id: q.id.clone().unwrap_or_default(),
        image_ref: pick(&q.image_path, known.map(|k| &k.image_ref)),
        question: pick(&q.text, known.map(|k| &k.question)),
        reference_answers: pick_list(&q.reference_answers, known.map(|k| &k.reference_answers)),
        gold_article_ids: pick_list(&q.gold_article_ids, known.map(|k| &k.gold_article_ids)),
        category: known.map(|k| k.category.clone()).unwrap_or_default(),
    }
}

/// Fuse whatever the raw query carries: the image visually, the text
/// textually.
fn raw_query_vector(engine: &Engine, q: &QueryIn) -> Result<Vec<f32>, HttpError> {
    let plan = mrag_core::modality::EmbedPlan {
        image_ref: q.image_path.clone(),
        text: q.text.clone(),
    };
    if plan.image_ref.is_none() && plan.text.is_none() {
        return Err(HttpError::bad("query needs image_path or text"));
    }
    let mut v = embed_plans(&engine.gw, std::slice::from_ref(&plan)).map_err(|e| classify(e.into()))?;
    Ok(v.pop().expect("one plan").vector)
}

fn parse<'a, T: Deserialize<'a>>(body: &'a str) -> Result<T, HttpError> {
    serde_json::from_str(body).map_err(|e| HttpError::bad(format!("bad request body: {e}")))
}

fn json<T: Serialize>(v: &T) -> Result<String, HttpError> {
    serde_json::to_string(v).map_err(|e| HttpError::new(500, e.to_string()))
}

fn health(engine: &Engine) -> String {
    serde_json::json!({
        "status": "ok",
        "index_rows": engine.index.rows(),
        "dim": engine.index.dim(),
    })
    .to_string()
}

fn post_retrieve(engine: &Engine, body: &str) -> Result<String, HttpError> {
    let req: RetrieveReq = parse(body)?;
    let k = req.k.unwrap_or(engine.cfg.k);
    if k == 0 {
        return Err(HttpError::bad("k must be at least 1"));
    }
    let v = raw_query_vector(engine, &req.query)?;
    let ranked = engine
        .retrieve(req.query.id.as_deref().unwrap_or_default(), &v, k)
        .map_err(classify)?;
    json(&ranked)
}

fn post_rerank(engine: &Engine, body: &str) -> Result<String, HttpError> {
    let req: RerankReq = parse(body)?;
    let window = engine.cfg.rerank_opts.window;
    if req.candidates.is_empty() || req.candidates.len() > window {
        return Err(HttpError::bad(format!("candidates must number 1..={window}")));
    }
    let q = resolve_query(engine, &req.query);
    let qvec = match req.strategy {
        Strategy::Pointwise => engine.embed_query(&q).map_err(classify)?,
        _ => Vec::new(),
    };
    let run = RunLine {
        query_id: q.id.clone(),
        config: engine.cfg.modality,
        entries: req
            .candidates
            .iter()
            .map(|a| mrag_core::rank::RankedEntry {
                article_id: a.clone(),
                score: 0.0,
            })
            .collect(),
    };
    for a in &req.candidates {
        if !engine.store.contains(a) {
            return Err(HttpError::new(422, ContextError::MissingArticle(a.clone()).to_string()));
        }
    }
    let rec = engine.rerank(req.strategy, &q, &qvec, &run).map_err(classify)?;
    json(&RerankOutcome {
        strategy: rec.strategy,
        order: rec.order,
        parse_fallback: rec.parse_fallback,
        call_count: rec.call_count,
    })
}

fn post_answer(engine: &Engine, body: &str) -> Result<String, HttpError> {
    let req: AnswerReq = parse(body)?;
    let agent = req.condition == "agent";
    let cond: Option<GenCondition> = if agent {
        None
    } else {
        Some(req.condition.parse().map_err(HttpError::bad)?)
    };
    let q = resolve_query(engine, &req.query);
    let needs_ranking = agent || matches!(cond, Some(GenCondition::Retrieved { .. }));
    let ranking = match (&req.ranking, needs_ranking) {
        (Some(r), _) => r.clone(),
        (None, false) => Vec::new(),
        (None, true) => {
            let qvec = engine.embed_query(&q).map_err(classify)?;
            let run = RunLine::from(engine.retrieve(&q.id, &qvec, engine.cfg.k).map_err(classify)?);
            let want_reranked = match cond {
                Some(GenCondition::Retrieved { reranked, .. }) => reranked,
                _ => engine.cfg.agent_order == AgentOrder::Reranked,
            };
            match (engine.cfg.rerank, want_reranked) {
                (Some(s), true) => RunLine::from(&engine.rerank(s, &q, &qvec, &run).map_err(classify)?).article_ids(),
                (None, true) if cond.is_some() => {
                    return Err(HttpError::bad("re-ranked condition but the service has no re-ranker configured"))
                }
                _ => run.article_ids(),
            }
        }
    };
    if agent {
        for a in &ranking {
            if !engine.store.contains(a) {
                return Err(HttpError::new(422, ContextError::MissingArticle(a.clone()).to_string()));
            }
        }
        json(&engine.agent(&q, &ranking).map_err(classify)?)
    } else {
        json(&engine.answer(&q, &ranking, cond.expect("non-agent")).map_err(classify)?)
    }
}

fn route(engine: &Engine, method: &Method, path: &str, body: &str) -> Result<String, HttpError> {
    match (method, path) {
        (Method::Get, "/health") => Ok(health(engine)),
        (Method::Post, "/retrieve") => post_retrieve(engine, body),
        (Method::Post, "/rerank") => post_rerank(engine, body),
        (Method::Post, "/answer") => post_answer(engine, body),
        _ => Err(HttpError::new(404, format!("no route for {method} {path}"))),
    }
}

fn respond(engine: &Engine, mut req: Request) {
    let mut body = String::new();
    let result = match req.as_reader().read_to_string(&mut body) {
        Ok(_) => route(engine, req.method(), req.url(), &body),
        Err(e) => Err(HttpError::bad(e.to_string())),
    };
    let (status, text) = match result {
        Ok(t) => (200, t),
        Err(e) => {
            tracing::debug!(status = e.status, error = %e.message, "request failed");
            (e.status, serde_json::json!({ "error": e.message }).to_string())
        }
    };
    let resp = Response::from_string(text)
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").unwrap());
    let _ = req.respond(resp);
}

#[derive(Debug, thiserror::Error)]
#[error("binding {addr}: {reason}")]
pub struct BindError {
    pub addr: String,
    pub reason: String,
}

/// A running service; dropping it stops the workers.
pub struct ServiceHandle {
    server: Arc<Server>,
    workers: Vec<JoinHandle<()>>,
    addr: SocketAddr,
}

impl ServiceHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Block until the workers exit.
    pub fn wait(mut self) {
        for w in std::mem::take(&mut self.workers) {
            let _ = w.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

pub fn serve(engine: Arc<Engine>, addr: &str, threads: usize) -> Result<ServiceHandle, BindError> {
    let bind_err = |reason: String| BindError {
        addr: addr.into(),
        reason,
    };
    let server = Arc::new(Server::http(addr).map_err(|e| bind_err(e.to_string()))?);
    let local = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| bind_err("not an IP listener".into()))?;
    let workers = (0..threads.max(1))
        .map(|_| {
            let (server, engine) = (server.clone(), engine.clone());
            std::thread::spawn(move || {
                while let Ok(req) = server.recv() {
                    respond(&engine, req);
                }
            })
        })
        .collect();
    Ok(ServiceHandle {
        server,
        workers,
        addr: local,
    })
}
