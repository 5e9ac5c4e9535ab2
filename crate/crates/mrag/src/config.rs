//! Flat `key = value` pipeline configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths are
//! resolved against the directory holding the config file. Keys:
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `articles`, `queries` | required | input JSONL files |
//! | `index_dir` | `<output_dir>/index` | where the index is cached |
//! | `output_dir` | required | stage artifacts and manifest |
//! | `modality` | `IQ:IT` | query:candidate modality |
//! | `k` | `5` | articles retrieved per query |
//! | `rerank` | `none` | `none`, `pointwise`, `pairwise` or `listwise` |
//! | `window` | `5` | re-rank window |
//! | `pairwise_debias` | `false` | ask each pair in both presentations |
//! | `cand_images` | `false` | attach candidate images to re-rank prompts |
//! | `condition` | unset | generation condition; unset skips generation |
//! | `agent` | `false` | run the self-reflection loop |
//! | `max_docs` | `5` | agent window |
//! | `agent_order` | `reranked` | `reranked` or `retrieved` document order |
//! | `judges` | empty | comma-separated judge names |
//! | `judge.<name>.url` | gateway url | model server of that judge |
//! | `eval_k` | `1,5,10` | Recall@K cutoffs |
//! | `mrr_window` | `5` | MRR cutoff |
//! | `distill_target` | unset | distill the KB to this size first |
//! | `seed` | `0` | distillation seed |
//! | `workers` | CPU count | per-stage worker threads |
//! | `markers` | `false` | embed `@@ ` id markers in prompts (mock server) |
//! | `prompts_dir` | unset | template overrides |
//! | `gateway.url` | `$MRAG_GATEWAY_URL` | model server base URL |
//! | `gateway.timeout_ms` | `$MRAG_GATEWAY_TIMEOUT_MS` or 60000 | per request |
//! | `gateway.max_retries`, `gateway.backoff_ms` | `3`, `250` | retry policy |
//! | `gateway.temperature`, `gateway.max_tokens` | `0`, `512` | decoding |
//! | `gateway.parallelism` | `8` | in-flight request bound |
//! | `gateway.inline_images` | `false` | send images as base64 |
//! | `gateway.keep_alive` | `false` | pool connections |
//! | `gateway.bearer` | unset | bearer token |

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mrag_core::generate::GenCondition;
use mrag_core::modality::ModalityConfig;
use mrag_core::rerank::Strategy;

use crate::gateway::{GatewayConfig, GatewayError};
use crate::rerank::RerankOptions;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("key {key}: {reason}")]
    Value { key: String, reason: String },
    #[error("missing required key {0}")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentOrder {
    Reranked,
    Retrieved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub articles: PathBuf,
    pub queries: PathBuf,
    pub index_dir: PathBuf,
    pub output_dir: PathBuf,
    pub modality: ModalityConfig,
    pub k: usize,
    pub rerank: Option<Strategy>,
    pub rerank_opts: RerankOptions,
    pub condition: Option<GenCondition>,
    pub agent: bool,
    pub max_docs: usize,
    pub agent_order: AgentOrder,
    pub judges: Vec<String>,
    pub judge_urls: BTreeMap<String, String>,
    pub eval_k: Vec<usize>,
    pub mrr_window: usize,
    pub distill_target: Option<usize>,
    pub seed: u64,
    pub workers: usize,
    pub markers: bool,
    pub prompts_dir: Option<PathBuf>,
    pub gateway: GatewayConfig,
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("expected a boolean, got {v:?}")),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| format!("{v:?}: {e}"))
}

pub fn parse_list(v: &str) -> Result<Vec<usize>, String> {
    v.split(',').map(|p| parse_num(p.trim())).collect()
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parse config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                reason: "expected key = value".into(),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if kv.insert(k.to_string(), v.to_string()).is_some() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    reason: format!("duplicate key {k}"),
                });
            }
        }
        let path = |v: &str| {
            let p = Path::new(v);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let mut take = |key: &str| kv.remove(key);
        let required = |v: Option<String>, key: &'static str| v.ok_or(ConfigError::Missing(key));
        let bad = |key: &str, reason: String| ConfigError::Value {
            key: key.into(),
            reason,
        };

        let articles = path(&required(take("articles"), "articles")?);
        let queries = path(&required(take("queries"), "queries")?);
        let output_dir = path(&required(take("output_dir"), "output_dir")?);
        let index_dir = take("index_dir").map_or_else(|| output_dir.join("index"), |v| path(&v));

        macro_rules! get {
            ($key:expr, $default:expr, $parse:expr) => {
                match take($key) {
                    Some(v) => $parse(&v).map_err(|e| bad($key, e))?,
                    None => $default,
                }
            };
        }

        let mut cfg = Self {
            articles,
            queries,
            index_dir,
            output_dir,
            modality: get!("modality", ModalityConfig::default(), |v: &str| v.parse::<ModalityConfig>()
                .map_err(|e| e.to_string())),
            k: get!("k", 5, parse_num),
            rerank: get!("rerank", None, |v: &str| match v {
                "none" => Ok(None),
                s => s.parse::<Strategy>().map(Some),
            }),
            rerank_opts: RerankOptions {
                window: get!("window", mrag_core::rerank::DEFAULT_WINDOW, parse_num),
                cand_images: get!("cand_images", false, parse_bool),
                pairwise_debias: get!("pairwise_debias", false, parse_bool),
            },
            condition: get!("condition", None, |v: &str| v.parse::<GenCondition>().map(Some)),
            agent: get!("agent", false, parse_bool),
            max_docs: get!("max_docs", mrag_core::rerank::DEFAULT_WINDOW, parse_num),
            agent_order: get!("agent_order", AgentOrder::Reranked, |v: &str| match v {
                "reranked" => Ok(AgentOrder::Reranked),
                "retrieved" => Ok(AgentOrder::Retrieved),
                _ => Err(format!("expected reranked or retrieved, got {v:?}")),
            }),
            judges: get!("judges", Vec::new(), |v: &str| Ok::<_, String>(
                v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
            )),
            judge_urls: BTreeMap::new(),
            eval_k: get!("eval_k", vec![1, 5, 10], parse_list),
            mrr_window: get!("mrr_window", mrag_core::rerank::DEFAULT_WINDOW, parse_num),
            distill_target: get!("distill_target", None, |v: &str| parse_num(v).map(Some)),
            seed: get!("seed", 0, parse_num),
            workers: get!("workers", default_workers(), parse_num),
            markers: get!("markers", false, parse_bool),
            prompts_dir: take("prompts_dir").map(|v| path(&v)),
            gateway: GatewayConfig::from_env()?,
        };
        let g = &mut cfg.gateway;
        if let Some(v) = take("gateway.url") {
            g.base_url = v;
        }
        g.timeout_ms = get!("gateway.timeout_ms", g.timeout_ms, parse_num);
        g.max_retries = get!("gateway.max_retries", g.max_retries, parse_num);
        g.backoff_ms = get!("gateway.backoff_ms", g.backoff_ms, parse_num);
        g.temperature = get!("gateway.temperature", g.temperature, parse_num);
        g.max_tokens = get!("gateway.max_tokens", g.max_tokens, parse_num);
        g.parallelism = get!("gateway.parallelism", g.parallelism, parse_num);
        g.inline_images = get!("gateway.inline_images", g.inline_images, parse_bool);
        g.keep_alive = get!("gateway.keep_alive", g.keep_alive, parse_bool);
        if let Some(v) = take("gateway.bearer") {
            g.bearer = Some(v);
        }
        let judges: Vec<String> = cfg.judges.clone();
        for j in &judges {
            if let Some(url) = take(&format!("judge.{j}.url")) {
                cfg.judge_urls.insert(j.clone(), url);
            }
        }
        if let Some(k) = kv.keys().next() {
            return Err(ConfigError::Value {
                key: k.clone(),
                reason: "unknown key".into(),
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural checks plus existence of the input files.
    pub fn validate(&self) -> Result<(), ConfigError> {
        for p in [&self.articles, &self.queries] {
            if !p.is_file() {
                return Err(ConfigError::Invalid(format!("{} does not exist", p.display())));
            }
        }
        let positive = [
            ("k", self.k),
            ("window", self.rerank_opts.window),
            ("max_docs", self.max_docs),
            ("mrr_window", self.mrr_window),
            ("workers", self.workers),
        ];
        if let Some((key, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError::Invalid(format!("{key} must be at least 1")));
        }
        if self.eval_k.is_empty() || self.eval_k.contains(&0) {
            return Err(ConfigError::Invalid("eval_k entries must be at least 1".into()));
        }
        if self.rerank.is_some() && self.k < self.rerank_opts.window {
            return Err(ConfigError::Invalid(format!(
                "k = {} is smaller than the re-rank window {}",
                self.k, self.rerank_opts.window
            )));
        }
        if let Some(GenCondition::Retrieved { reranked: true, .. }) = self.condition {
            if self.rerank.is_none() {
                return Err(ConfigError::Invalid("condition asks for re-ranked context but rerank = none".into()));
            }
        }
        let unique: BTreeSet<&String> = self.judges.iter().collect();
        if unique.len() != self.judges.len() {
            return Err(ConfigError::Invalid("judge names repeat".into()));
        }
        self.gateway.validate()?;
        Ok(())
    }

    /// Canonical text form, keys sorted, as recorded in the manifest.
    pub fn to_text(&self) -> String {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.into(), v);
        };
        put("articles", self.articles.display().to_string());
        put("queries", self.queries.display().to_string());
        put("index_dir", self.index_dir.display().to_string());
        put("output_dir", self.output_dir.display().to_string());
        put("modality", self.modality.to_string());
        put("k", self.k.to_string());
        put("rerank", self.rerank.map_or("none".into(), |s| s.to_string()));
        put("window", self.rerank_opts.window.to_string());
        put("cand_images", self.rerank_opts.cand_images.to_string());
        put("pairwise_debias", self.rerank_opts.pairwise_debias.to_string());
        if let Some(c) = self.condition {
            put("condition", c.to_string());
        }
        put("agent", self.agent.to_string());
        put("max_docs", self.max_docs.to_string());
        put(
            "agent_order",
            match self.agent_order {
                AgentOrder::Reranked => "reranked",
                AgentOrder::Retrieved => "retrieved",
            }
            .into(),
        );
        put("judges", self.judges.join(","));
        for (j, url) in &self.judge_urls {
            put(&format!("judge.{j}.url"), url.clone());
        }
        put("eval_k", self.eval_k.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","));
        put("mrr_window", self.mrr_window.to_string());
        if let Some(t) = self.distill_target {
            put("distill_target", t.to_string());
        }
        put("seed", self.seed.to_string());
        put("workers", self.workers.to_string());
        put("markers", self.markers.to_string());
        if let Some(p) = &self.prompts_dir {
            put("prompts_dir", p.display().to_string());
        }
        let g = &self.gateway;
        put("gateway.url", g.base_url.clone());
        put("gateway.timeout_ms", g.timeout_ms.to_string());
        put("gateway.max_retries", g.max_retries.to_string());
        put("gateway.backoff_ms", g.backoff_ms.to_string());
        put("gateway.temperature", g.temperature.to_string());
        put("gateway.max_tokens", g.max_tokens.to_string());
        put("gateway.parallelism", g.parallelism.to_string());
        put("gateway.inline_images", g.inline_images.to_string());
        put("gateway.keep_alive", g.keep_alive.to_string());
        let mut out = String::new();
        for (k, v) in kv {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Gateway settings for judge `name`.
    pub fn judge_gateway(&self, name: &str) -> GatewayConfig {
        let mut g = self.gateway.clone();
        if let Some(url) = self.judge_urls.get(name) {
            g.base_url = url.clone();
        }
        g
    }
}
