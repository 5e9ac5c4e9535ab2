//! Staged orchestration: load, distill, caption, index, retrieve, re-rank,
//! generate, agent, judge and report, with a content-hash manifest.
//!
//! The same [`Engine`] backs the CLI pipeline and the HTTP service, so both
//! assemble identical prompts for identical inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context as _};
use mrag_core::agent::{AgentConfig, AgentTranscript};
use mrag_core::corpus::{validate_coverage, ArticleStore, QueryCase};
use mrag_core::distill::distill_kb;
use mrag_core::generate::{build_context, AnswerRecord, GenCondition};
use mrag_core::index::VectorIndex;
use mrag_core::modality::{assemble_query, CandidateSide};
use mrag_core::rank::{retrieve, RankedList};
use mrag_core::rerank::Strategy;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{AgentOrder, PipelineConfig};
use crate::eval::{build_report, judge, render_table, AnswerSetInput, EvalReport, ReportOptions, RowInput};
use crate::gateway::{CaptionSide, Gateway};
use crate::prompts::Prompts;
use crate::records::{AnswerLine, RerankRecord, RunLine, VerdictRecord};
use crate::retrieval::{best_unit_vector, build_index, caption_all, embed_plans, rows_by_article, BuiltIndex, Captions};
use crate::{corpus, index_file, jsonl};

pub const INDEX_FILE: &str = "index.mragidx";
pub const INDEX_META: &str = "index.meta.json";
pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, thiserror::Error)]
#[error("stage {stage}: {source:#}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub source: anyhow::Error,
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> anyhow::Result<T>) -> Result<T, PipelineError> {
    tracing::info!(stage = name, "start");
    f().map_err(|source| PipelineError { stage: name, source })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Cache key recorded next to a built index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub kb_sha256: String,
    pub captions_sha256: String,
    pub embedder: String,
    pub dim: usize,
    pub rows: usize,
    #[serde(flatten)]
    pub built: BuiltIndex,
}

/// Loaded knowledge base, index and model handles.
pub struct Engine {
    pub cfg: PipelineConfig,
    pub store: ArticleStore,
    pub queries: Vec<QueryCase>,
    pub captions: Captions,
    pub index: VectorIndex,
    pub index_meta: IndexMeta,
    pub rows: BTreeMap<String, Vec<usize>>,
    pub gw: Gateway,
    pub prompts: Prompts,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("articles", &self.store.len())
            .field("queries", &self.queries.len())
            .field("index_rows", &self.index.rows())
            .finish()
    }
}

impl Engine {
    /// Run the load, distill, caption and index stages.
    pub fn open(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        let (store, queries) = stage("load", || {
            let store = corpus::load_articles(&cfg.articles)?;
            let queries = corpus::load_queries(&cfg.queries)?;
            let cov = validate_coverage(&store, &queries);
            if !cov.missing.is_empty() {
                tracing::warn!(missing = ?cov.missing, fraction = cov.coverage_fraction, "queries with absent gold articles");
            }
            Ok((store, queries))
        })?;
        let store = match cfg.distill_target {
            Some(target) => stage("distill", || Ok(distill_kb(&store, &queries, target, cfg.seed)?))?,
            None => store,
        };
        let prompts = stage("prompts", || {
            let p = match &cfg.prompts_dir {
                Some(d) => Prompts::from_dir(d).with_context(|| d.display().to_string())?,
                None => Prompts::default(),
            };
            Ok(p.with_markers(cfg.markers))
        })?;
        let gw = stage("gateway", || Ok(Gateway::new(cfg.gateway.clone())?))?;
        let captions = stage("caption", || Ok(caption_all(&gw, &prompts, cfg.modality, &store, &queries)?))?;
        let (index, index_meta) = stage("index", || load_or_build_index(&cfg.index_dir, cfg.modality.candidate, &gw, &store, &captions))?;
        let rows = rows_by_article(&index);
        Ok(Self {
            cfg,
            store,
            queries,
            captions,
            index,
            index_meta,
            rows,
            gw,
            prompts,
        })
    }

    pub fn query(&self, id: &str) -> Option<&QueryCase> {
        self.queries.iter().find(|q| q.id == id)
    }

    /// Fused query vector under the configured query side. Captions come
    /// from the caption stage when known, otherwise from the gateway.
    pub fn embed_query(&self, q: &QueryCase) -> anyhow::Result<Vec<f32>> {
        let side = self.cfg.modality.query;
        let caption = match (side.needs_caption(), self.captions.query.get(&q.id)) {
            (false, _) => None,
            (true, Some(c)) => Some(c.clone()),
            (true, None) => Some(
                self.gw
                    .caption_image(&self.prompts, &q.image_ref, CaptionSide::Query, Some(&q.question))?,
            ),
        };
        let plan = assemble_query(q, side, caption.as_deref())?;
        let mut fused = embed_plans(&self.gw, std::slice::from_ref(&plan))?;
        Ok(fused.pop().expect("one plan").vector)
    }

    pub fn retrieve(&self, query_id: &str, qvec: &[f32], k: usize) -> anyhow::Result<RankedList> {
        Ok(retrieve(&self.index, query_id, self.cfg.modality, qvec, k)?)
    }

    /// Re-rank the window of `run` with the configured strategy.
    pub fn rerank(&self, strategy: Strategy, q: &QueryCase, qvec: &[f32], run: &RunLine) -> anyhow::Result<RerankRecord> {
        let cands: Vec<Vec<f32>> = match strategy {
            Strategy::Pointwise => run
                .entries
                .iter()
                .take(self.cfg.rerank_opts.window)
                .map(|e| {
                    best_unit_vector(&self.index, &self.rows, qvec, &e.article_id)
                        .ok_or_else(|| anyhow!("article {} is not in the index", e.article_id))
                })
                .collect::<anyhow::Result<_>>()?,
            _ => Vec::new(),
        };
        Ok(crate::rerank::rerank_run(
            &self.gw,
            &self.prompts,
            &self.store,
            q,
            run,
            strategy,
            &self.cfg.rerank_opts,
            Some((qvec, &cands)),
        )?)
    }

    pub fn answer(&self, q: &QueryCase, ranking: &[String], cond: GenCondition) -> anyhow::Result<AnswerRecord> {
        let blocks = build_context(ranking, &q.gold_article_ids, cond, &self.store)?;
        Ok(crate::generate::generate_answer(&self.gw, &self.prompts, q, &blocks, cond)?)
    }

    pub fn agent(&self, q: &QueryCase, ranking: &[String]) -> anyhow::Result<AgentTranscript> {
        let cfg = AgentConfig {
            max_docs: self.cfg.max_docs,
            ..AgentConfig::default()
        };
        crate::agent::run_query(&self.gw, &self.prompts, &self.store, q, ranking, &cfg).map_err(|abort| {
            anyhow!(
                "query {} aborted after {} steps: {}",
                q.id,
                abort.transcript.steps.len(),
                abort.error
            )
        })
    }
}

/// Load the index cached in `index_dir` when its meta matches this KB,
/// captions, embedder and candidate side; otherwise build and cache it.
pub fn load_or_build_index(
    index_dir: &Path,
    side: CandidateSide,
    gw: &Gateway,
    store: &ArticleStore,
    captions: &Captions,
) -> anyhow::Result<(VectorIndex, IndexMeta)> {
    let kb_sha256 = sha256_hex(jsonl::to_string(store.articles()).as_bytes());
    let captions_sha256 = sha256_hex(jsonl::to_string(&captions.records()).as_bytes());
    let embedder = gw.config().base_url.clone();
    let candidate = side.code();
    let (idx_path, meta_path) = (index_dir.join(INDEX_FILE), index_dir.join(INDEX_META));
    if let Ok(text) = fs::read_to_string(&meta_path) {
        if let Ok(meta) = serde_json::from_str::<IndexMeta>(&text) {
            let fresh = meta.kb_sha256 == kb_sha256
                && meta.captions_sha256 == captions_sha256
                && meta.embedder == embedder
                && meta.built.candidate == candidate;
            if fresh {
                match index_file::load(&idx_path) {
                    Ok(index) => {
                        tracing::info!(path = %idx_path.display(), "reusing index");
                        return Ok((index, meta));
                    }
                    Err(e) => tracing::warn!(error = %e, "cached index unreadable, rebuilding"),
                }
            }
        }
    }
    let (index, built) = build_index(gw, store, side, captions)?;
    fs::create_dir_all(index_dir).with_context(|| index_dir.display().to_string())?;
    index_file::save(&index, &idx_path)?;
    let meta = IndexMeta {
        kb_sha256,
        captions_sha256,
        embedder,
        dim: index.dim(),
        rows: index.rows(),
        built,
    };
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok((index, meta))
}

/// Artifact hashes plus the canonical config that produced them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub config: String,
    /// Artifact name to SHA-256 hex digest.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut out = String::from("[config]\n");
        out.push_str(&self.config);
        out.push_str("[artifacts]\n");
        for (name, h) in &self.artifacts {
            out.push_str(&format!("{h}  {name}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let (config, artifacts) = text
            .strip_prefix("[config]\n")
            .and_then(|t| t.split_once("[artifacts]\n"))
            .ok_or_else(|| anyhow!("not a manifest"))?;
        let artifacts = artifacts
            .lines()
            .map(|l| {
                l.split_once("  ")
                    .map(|(h, n)| (n.to_string(), h.to_string()))
                    .ok_or_else(|| anyhow!("bad manifest line {l:?}"))
            })
            .collect::<anyhow::Result<_>>()?;
        Ok(Self {
            config: config.to_string(),
            artifacts,
        })
    }

    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        Self::parse(&fs::read_to_string(dir.join(MANIFEST))?)
    }
}

#[derive(Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub report: EvalReport,
}

struct Writer<'a> {
    dir: &'a Path,
    artifacts: BTreeMap<String, String>,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| path.display().to_string())?;
        self.artifacts.insert(name.into(), sha256_hex(bytes));
        Ok(())
    }

    fn jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> anyhow::Result<()> {
        self.put(name, jsonl::to_string(items).as_bytes())
    }
}

/// Run every configured stage inside a pool of `cfg.workers` threads.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    let pool = stage("workers", || Ok(rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?))?;
    pool.install(|| {
        let engine = Engine::open(cfg.clone())?;
        run_stages(&engine)
    })
}

fn run_stages(e: &Engine) -> Result<RunSummary, PipelineError> {
    let cfg = &e.cfg;
    let queries = &e.queries;
    stage("output", || Ok(fs::create_dir_all(&cfg.output_dir)?))?;
    let mut w = Writer {
        dir: &cfg.output_dir,
        artifacts: BTreeMap::new(),
    };
    stage("index", || {
        w.artifacts
            .insert("index".into(), sha256_hex(&e.index.to_bytes()));
        if cfg.distill_target.is_some() {
            w.jsonl("kb.jsonl", e.store.articles())?;
        }
        if !e.captions.query.is_empty() || !e.captions.kb.is_empty() {
            w.jsonl("captions.jsonl", &e.captions.records())?;
        }
        Ok(())
    })?;

    let (qvecs, runs) = stage("retrieve", || {
        let qvecs: Vec<Vec<f32>> = queries.par_iter().map(|q| e.embed_query(q)).collect::<anyhow::Result<_>>()?;
        let runs: Vec<RunLine> = queries
            .par_iter()
            .zip(&qvecs)
            .map(|(q, v)| e.retrieve(&q.id, v, cfg.k).map(RunLine::from))
            .collect::<anyhow::Result<_>>()?;
        w.jsonl("runs.jsonl", &runs)?;
        Ok((qvecs, runs))
    })?;

    let reranked: Option<Vec<RerankRecord>> = match cfg.rerank {
        None => None,
        Some(strategy) => Some(stage("rerank", || {
            let recs: Vec<RerankRecord> = queries
                .par_iter()
                .zip(&qvecs)
                .zip(&runs)
                .map(|((q, v), r)| e.rerank(strategy, q, v, r))
                .collect::<anyhow::Result<_>>()?;
            w.jsonl("reranked.jsonl", &recs)?;
            Ok(recs)
        })?),
    };
    let reranked_runs: Option<Vec<RunLine>> = reranked.as_ref().map(|r| r.iter().map(RunLine::from).collect());
    let final_runs = reranked_runs.as_ref().unwrap_or(&runs);

    let mut answer_sets: Vec<(&'static str, Vec<AnswerLine>)> = Vec::new();
    if let Some(cond) = cfg.condition {
        stage("generate", || {
            let generate = |source: &[RunLine], cond: GenCondition| -> anyhow::Result<Vec<AnswerRecord>> {
                queries
                    .par_iter()
                    .zip(source)
                    .map(|(q, r)| e.answer(q, &r.article_ids(), cond))
                    .collect()
            };
            let source = match cond {
                GenCondition::Retrieved { reranked: true, .. } => final_runs,
                _ => &runs,
            };
            let answers = generate(source, cond)?;
            w.jsonl("answers.jsonl", &answers)?;
            answer_sets.push(("answers", answer_lines(&answers)));
            if let GenCondition::Retrieved { k, reranked: true } = cond {
                let base = generate(&runs, GenCondition::Retrieved { k, reranked: false })?;
                w.jsonl("answers_baseline.jsonl", &base)?;
                answer_sets.push(("answers_baseline", answer_lines(&base)));
            }
            Ok(())
        })?;
    }
    if cfg.agent {
        stage("agent", || {
            let source = match cfg.agent_order {
                AgentOrder::Reranked => final_runs,
                AgentOrder::Retrieved => &runs,
            };
            let transcripts: Vec<AgentTranscript> = queries
                .par_iter()
                .zip(source)
                .map(|(q, r)| e.agent(q, &r.article_ids()))
                .collect::<anyhow::Result<_>>()?;
            w.jsonl("agent.jsonl", &transcripts)?;
            answer_sets.push((
                "agent",
                transcripts
                    .iter()
                    .map(|t| AnswerLine {
                        query_id: t.query_id.clone(),
                        answer: t.answer.clone(),
                    })
                    .collect(),
            ));
            Ok(())
        })?;
    }

    let verdicts: Vec<VerdictRecord> = stage("judge", || {
        let mut out = Vec::new();
        for name in &cfg.judges {
            let gw = Gateway::new(cfg.judge_gateway(name))?;
            for (set, answers) in &answer_sets {
                let batch: Vec<VerdictRecord> = queries
                    .par_iter()
                    .zip(answers)
                    .map(|(q, a)| {
                        let o = judge(&gw, &e.prompts, name, &q.question, &q.reference_answers, &a.answer)?;
                        Ok(VerdictRecord {
                            query_id: q.id.clone(),
                            answer_set: (*set).into(),
                            judge: name.clone(),
                            verdict: o.verdict,
                            parse_fallback: o.parse_fallback,
                        })
                    })
                    .collect::<anyhow::Result<_>>()?;
                out.extend(batch);
            }
        }
        if !out.is_empty() {
            w.jsonl("verdicts.jsonl", &out)?;
        }
        Ok(out)
    })?;

    let report = stage("eval", || {
        let of_set = |set: &str| -> Vec<VerdictRecord> { verdicts.iter().filter(|v| v.answer_set == set).cloned().collect() };
        let set = |name: &str| answer_sets.iter().find(|(n, _)| *n == name).map(|(_, a)| a.as_slice());
        let (main_v, base_v, agent_v) = (of_set("answers"), of_set("answers_baseline"), of_set("agent"));
        let main = RowInput {
            name: if reranked.is_some() { "reranked" } else { "retrieved" },
            runs: final_runs,
            answers: set("answers"),
            verdicts: &main_v,
        };
        let baseline = reranked.as_ref().map(|_| RowInput {
            name: "retrieved",
            runs: &runs,
            answers: set("answers_baseline"),
            verdicts: &base_v,
        });
        let extra: Vec<AnswerSetInput> = set("agent")
            .map(|a| AnswerSetInput {
                name: "agent",
                answers: a,
                verdicts: &agent_v,
            })
            .into_iter()
            .collect();
        let opts = ReportOptions {
            ks: cfg.eval_k.clone(),
            mrr_window: cfg.mrr_window,
        };
        let report = build_report(queries, main, baseline, &extra, &opts)?;
        w.put("report.json", (serde_json::to_string_pretty(&report)? + "\n").as_bytes())?;
        w.put("report.txt", render_table(&report).as_bytes())?;
        Ok(report)
    })?;

    let manifest = Manifest {
        config: cfg.to_text(),
        artifacts: w.artifacts,
    };
    stage("manifest", || {
        fs::write(cfg.output_dir.join(MANIFEST), manifest.render())?;
        Ok(())
    })?;
    Ok(RunSummary {
        dir: cfg.output_dir.clone(),
        manifest,
        report,
    })
}

fn answer_lines(records: &[AnswerRecord]) -> Vec<AnswerLine> {
    records
        .iter()
        .map(|a| AnswerLine {
            query_id: a.query_id.clone(),
            answer: a.answer.clone(),
        })
        .collect()
}
