//! Command-line front end: one subcommand per stage, `run` for the whole
//! pipeline from a config file, and `serve` for the HTTP service.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context as _};
use clap::{Args, Parser, Subcommand};
use mrag::config::{default_workers, PipelineConfig};
use mrag::corpus::{load_articles, load_queries, save_articles};
use mrag::eval::{build_report, judge, render_table, AnswerSetInput, ReportOptions, RowInput};
use mrag::gateway::{Gateway, GatewayConfig};
use mrag::pipeline::{load_or_build_index, run_pipeline, Engine, INDEX_FILE};
use mrag::prompts::Prompts;
use mrag::records::{AnswerLine, RunLine, VerdictRecord};
use mrag::rerank::{rerank_run, RerankOptions};
use mrag::retrieval::{best_unit_vector, caption_all, embed_queries, retrieve_all, rows_by_article};
use mrag::{index_file, jsonl, synth};
use mrag_core::agent::AgentConfig;
use mrag_core::corpus::{validate_coverage, ArticleStore, QueryCase};
use mrag_core::distill::distill_kb;
use mrag_core::generate::{build_context, GenCondition};
use mrag_core::modality::{CandidateSide, ModalityConfig};
use mrag_core::rerank::Strategy;
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "mrag", version, about = "Multimodal retrieval-augmented generation toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Model server base URL.
    #[arg(long, global = true, env = "MRAG_GATEWAY_URL")]
    gateway_url: Option<String>,
    #[arg(long, global = true, env = "MRAG_GATEWAY_TIMEOUT_MS")]
    timeout_ms: Option<u64>,
    /// Embed `@@ ` id markers in prompts (needed by the mock server).
    #[arg(long, global = true)]
    markers: bool,
    #[arg(long, global = true)]
    prompts_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    workers: Option<usize>,
}

impl Global {
    fn gateway(&self) -> anyhow::Result<Gateway> {
        let mut cfg = GatewayConfig::default();
        if let Some(u) = &self.gateway_url {
            cfg.base_url = u.clone();
        }
        if let Some(t) = self.timeout_ms {
            cfg.timeout_ms = t;
        }
        Ok(Gateway::new(cfg)?)
    }

    fn prompts(&self) -> anyhow::Result<Prompts> {
        let p = match &self.prompts_dir {
            Some(d) => Prompts::from_dir(d).with_context(|| d.display().to_string())?,
            None => Prompts::default(),
        };
        Ok(p.with_markers(self.markers))
    }
}

#[derive(Args)]
struct Kb {
    #[arg(long)]
    articles: PathBuf,
    #[arg(long)]
    queries: PathBuf,
}

impl Kb {
    fn load(&self) -> anyhow::Result<(ArticleStore, Vec<QueryCase>)> {
        let store = load_articles(&self.articles).with_context(|| self.articles.display().to_string())?;
        let queries = load_queries(&self.queries).with_context(|| self.queries.display().to_string())?;
        Ok((store, queries))
    }
}

#[derive(Subcommand)]
enum Cmd {
    #[command(subcommand)]
    Corpus(CorpusCmd),
    #[command(subcommand)]
    Index(IndexCmd),
    /// Retrieve top-k articles per query.
    Retrieve {
        /// Modality pairing, QUERY:CANDIDATE.
        #[arg(long, default_value = "IQ:IT")]
        config: ModalityConfig,
        #[command(flatten)]
        kb: Kb,
        /// Index directory; built there when missing or stale.
        #[arg(long)]
        index: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-rank the head window of each run.
    Rerank {
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, default_value_t = 5)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        kb: Kb,
        /// Index directory, needed by pointwise re-ranking.
        #[arg(long)]
        index: Option<PathBuf>,
        /// Modality pairing of the index, for pointwise re-ranking.
        #[arg(long, default_value = "IQ:IT")]
        config: ModalityConfig,
        #[arg(long)]
        cand_images: bool,
        #[arg(long)]
        pairwise_debias: bool,
    },
    /// Generate one answer per query.
    Generate {
        #[arg(long)]
        condition: GenCondition,
        #[arg(long)]
        runs: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        kb: Kb,
    },
    /// Run the self-reflection agent over each ranking.
    Agent {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, default_value_t = 5)]
        max_docs: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        kb: Kb,
    },
    /// Score runs and answers against a baseline.
    Eval {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long)]
        answers: Option<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Answers produced from the baseline run.
        #[arg(long)]
        baseline_answers: Option<PathBuf>,
        #[arg(long, default_value = "1,5,10", value_delimiter = ',')]
        k: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        mrr_window: usize,
        /// Judge as NAME or NAME=URL; repeatable.
        #[arg(long)]
        judge: Vec<String>,
        #[arg(long)]
        queries: PathBuf,
        /// report.json path; the rendered table goes next to it as .txt.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every configured stage from a key=value config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Serve /retrieve, /rerank and /answer over HTTP.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8)]
        threads: usize,
    },
    /// Write a synthetic suite with a matching mock-server script.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        queries: usize,
        #[arg(long, default_value_t = 40)]
        distractors: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    /// Parse both files and report gold coverage.
    Validate {
        #[command(flatten)]
        kb: Kb,
    },
    /// Sample a smaller KB that keeps every gold article.
    Distill {
        #[command(flatten)]
        kb: Kb,
        #[arg(long)]
        target: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum IndexCmd {
    /// Embed every candidate unit and write the index directory.
    Build {
        #[arg(long)]
        articles: PathBuf,
        /// Candidate side (I, IT, IC, C) or a full QUERY:CANDIDATE pairing.
        #[arg(long, default_value = "IT")]
        config: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn candidate_side(s: &str) -> anyhow::Result<CandidateSide> {
    Ok(match s.split_once(':') {
        Some(_) => s.parse::<ModalityConfig>()?.candidate,
        None => s.parse()?,
    })
}

fn read_runs(path: &Path) -> anyhow::Result<Vec<RunLine>> {
    jsonl::read(path).with_context(|| path.display().to_string())
}

fn read_answers(path: &Path) -> anyhow::Result<Vec<AnswerLine>> {
    jsonl::read(path).with_context(|| path.display().to_string())
}

/// Pair each query with its run, in query-file order.
fn align<'a>(queries: &'a [QueryCase], runs: &'a [RunLine]) -> anyhow::Result<Vec<(&'a QueryCase, &'a RunLine)>> {
    let by_id: BTreeMap<&str, &QueryCase> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
    runs.iter()
        .map(|r| {
            by_id
                .get(r.query_id.as_str())
                .map(|q| (*q, r))
                .ok_or_else(|| anyhow!("run for unknown query {}", r.query_id))
        })
        .collect()
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> anyhow::Result<()> {
    jsonl::write(path, items).with_context(|| path.display().to_string())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let workers = cli.global.workers.unwrap_or_else(default_workers);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build();
    let result = match pool {
        Ok(pool) => pool.install(|| dispatch(cli)),
        Err(e) => Err(e.into()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    let g = &cli.global;
    match cli.cmd {
        Cmd::Corpus(CorpusCmd::Validate { kb }) => {
            let (store, queries) = kb.load()?;
            let cov = validate_coverage(&store, &queries);
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&cov)?);
            return Ok(if cov.missing.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) });
        }
        Cmd::Corpus(CorpusCmd::Distill { kb, target, seed, out }) => {
            let (store, queries) = kb.load()?;
            let d = distill_kb(&store, &queries, target, seed)?;
            save_articles(&d, &out)?;
            eprintln!("kept {} of {} articles", d.len(), store.len());
        }
        Cmd::Index(IndexCmd::Build { articles, config, out }) => {
            let side = candidate_side(&config)?;
            let store = load_articles(&articles)?;
            let (gw, prompts) = (g.gateway()?, g.prompts()?);
            let modality = ModalityConfig::new(mrag_core::modality::QuerySide::Image, side);
            let captions = caption_all(&gw, &prompts, modality, &store, &[])?;
            let (_, meta) = load_or_build_index(&out, side, &gw, &store, &captions)?;
            println!("{}", serde_json::to_string_pretty(&meta)?);
        }
        Cmd::Retrieve {
            config,
            kb,
            index,
            k,
            out,
        } => {
            let (store, queries) = kb.load()?;
            let (gw, prompts) = (g.gateway()?, g.prompts()?);
            let captions = caption_all(&gw, &prompts, config, &store, &queries)?;
            let (idx, _) = load_or_build_index(&index, config.candidate, &gw, &store, &captions)?;
            let vecs = embed_queries(&gw, &queries, config.query, &captions)?;
            let ids: Vec<&str> = queries.iter().map(|q| q.id.as_str()).collect();
            let refs: Vec<&[f32]> = vecs.iter().map(|v| v.vector.as_slice()).collect();
            let runs: Vec<RunLine> = retrieve_all(&idx, &ids, &refs, config, k)?
                .into_iter()
                .map(RunLine::from)
                .collect();
            write_jsonl(&out, &runs)?;
        }
        Cmd::Rerank {
            strategy,
            runs,
            window,
            out,
            kb,
            index,
            config,
            cand_images,
            pairwise_debias,
        } => {
            let (store, queries) = kb.load()?;
            let runs = read_runs(&runs)?;
            let pairs = align(&queries, &runs)?;
            let (gw, prompts) = (g.gateway()?, g.prompts()?);
            let opts = RerankOptions {
                window,
                cand_images,
                pairwise_debias,
            };
            // Pointwise scores reuse the fused vectors of the retrieval index.
            let pointwise = match strategy {
                Strategy::Pointwise => {
                    let dir = index.ok_or_else(|| anyhow!("pointwise re-ranking needs --index"))?;
                    let idx = index_file::load(&dir.join(INDEX_FILE))?;
                    let captions = caption_all(
                        &gw,
                        &prompts,
                        ModalityConfig::new(config.query, CandidateSide::Image),
                        &store,
                        &queries,
                    )?;
                    let qs: Vec<QueryCase> = pairs.iter().map(|(q, _)| (*q).clone()).collect();
                    let qv = embed_queries(&gw, &qs, config.query, &captions)?;
                    Some((idx, qv))
                }
                _ => None,
            };
            let rows = pointwise.as_ref().map(|(idx, _)| rows_by_article(idx));
            let recs = pairs
                .par_iter()
                .enumerate()
                .map(|(i, (q, r))| {
                    let pw = match (&pointwise, &rows) {
                        (Some((idx, qv)), Some(rows)) => {
                            let v = &qv[i].vector;
                            let cands = r
                                .entries
                                .iter()
                                .take(window)
                                .map(|e| {
                                    best_unit_vector(idx, rows, v, &e.article_id)
                                        .ok_or_else(|| anyhow!("article {} is not in the index", e.article_id))
                                })
                                .collect::<anyhow::Result<Vec<_>>>()?;
                            Some((v.clone(), cands))
                        }
                        _ => None,
                    };
                    let pw_ref = pw.as_ref().map(|(v, c)| (v.as_slice(), c.as_slice()));
                    Ok(rerank_run(&gw, &prompts, &store, q, r, strategy, &opts, pw_ref)?)
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            write_jsonl(&out, &recs)?;
        }
        Cmd::Generate {
            condition,
            runs,
            out,
            kb,
        } => {
            let (store, queries) = kb.load()?;
            let (gw, prompts) = (g.gateway()?, g.prompts()?);
            let runs = match (&runs, condition) {
                (Some(p), _) => read_runs(p)?,
                (None, GenCondition::Retrieved { .. }) => bail!("condition {condition} needs --runs"),
                (None, _) => queries
                    .iter()
                    .map(|q| RunLine {
                        query_id: q.id.clone(),
                        config: ModalityConfig::default(),
                        entries: vec![],
                    })
                    .collect(),
            };
            let pairs = align(&queries, &runs)?;
            let answers = pairs
                .par_iter()
                .map(|(q, r)| {
                    let blocks = build_context(&r.article_ids(), &q.gold_article_ids, condition, &store)?;
                    Ok(mrag::generate::generate_answer(&gw, &prompts, q, &blocks, condition)?)
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            write_jsonl(&out, &answers)?;
        }
        Cmd::Agent {
            runs,
            max_docs,
            out,
            kb,
        } => {
            let (store, queries) = kb.load()?;
            let (gw, prompts) = (g.gateway()?, g.prompts()?);
            let runs = read_runs(&runs)?;
            let cfg = AgentConfig {
                max_docs,
                ..AgentConfig::default()
            };
            let transcripts = align(&queries, &runs)?
                .par_iter()
                .map(|(q, r)| {
                    mrag::agent::run_query(&gw, &prompts, &store, q, &r.article_ids(), &cfg)
                        .map_err(|a| anyhow!("query {} aborted: {}", q.id, a.error))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            write_jsonl(&out, &transcripts)?;
        }
        Cmd::Eval {
            runs,
            answers,
            baseline,
            baseline_answers,
            k,
            mrr_window,
            judge: judges,
            queries,
            out,
        } => {
            let queries = load_queries(&queries)?;
            let runs = read_runs(&runs)?;
            let base_runs = baseline.as_deref().map(read_runs).transpose()?;
            let answers = answers.as_deref().map(read_answers).transpose()?;
            let base_answers = baseline_answers.as_deref().map(read_answers).transpose()?;
            let prompts = g.prompts()?;
            let by_id: BTreeMap<&str, &QueryCase> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
            let mut verdicts: Vec<VerdictRecord> = Vec::new();
            for spec in &judges {
                let (name, url) = match spec.split_once('=') {
                    Some((n, u)) => (n.to_string(), Some(u.to_string())),
                    None => (spec.clone(), None),
                };
                let mut jg = g.gateway()?.config().clone();
                if let Some(u) = url {
                    jg.base_url = u;
                }
                let gw = Gateway::new(jg)?;
                let sets = [("answers", &answers), ("answers_baseline", &base_answers)];
                for (set, lines) in sets {
                    let Some(lines) = lines else { continue };
                    let batch = lines
                        .par_iter()
                        .map(|a| {
                            let q = by_id
                                .get(a.query_id.as_str())
                                .ok_or_else(|| anyhow!("answer for unknown query {}", a.query_id))?;
                            let o = judge(&gw, &prompts, &name, &q.question, &q.reference_answers, &a.answer)?;
                            Ok(VerdictRecord {
                                query_id: a.query_id.clone(),
                                answer_set: set.into(),
                                judge: name.clone(),
                                verdict: o.verdict,
                                parse_fallback: o.parse_fallback,
                            })
                        })
                        .collect::<anyhow::Result<Vec<_>>>()?;
                    verdicts.extend(batch);
                }
            }
            let of_set = |s: &str| -> Vec<VerdictRecord> { verdicts.iter().filter(|v| v.answer_set == s).cloned().collect() };
            let (main_v, base_v) = (of_set("answers"), of_set("answers_baseline"));
            let main = RowInput {
                name: if base_runs.is_some() { "candidate" } else { "run" },
                runs: &runs,
                answers: answers.as_deref(),
                verdicts: &main_v,
            };
            let base = base_runs.as_deref().map(|b| RowInput {
                name: "baseline",
                runs: b,
                answers: base_answers.as_deref(),
                verdicts: &base_v,
            });
            let extra: [AnswerSetInput; 0] = [];
            let report = build_report(&queries, main, base, &extra, &ReportOptions { ks: k, mrr_window })?;
            std::fs::write(&out, serde_json::to_string_pretty(&report)? + "\n")?;
            let table = render_table(&report);
            std::fs::write(out.with_extension("txt"), &table)?;
            print!("{table}");
        }
        Cmd::Run { config } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(w) = g.workers {
                cfg.workers = w;
            }
            cfg.markers |= g.markers;
            cfg.validate()?;
            let summary = run_pipeline(&cfg)?;
            print!("{}", render_table(&summary.report));
            eprintln!("artifacts in {}", summary.dir.display());
        }
        Cmd::Serve {
            config,
            port,
            host,
            threads,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            cfg.markers |= g.markers;
            cfg.validate()?;
            let engine = Arc::new(Engine::open(cfg)?);
            let handle = mrag::service::serve(engine, &format!("{host}:{port}"), threads)?;
            eprintln!("listening on {}", handle.url());
            handle.wait();
        }
        Cmd::Synth {
            out,
            queries,
            distractors,
            seed,
        } => {
            let suite = synth::generate(&synth::SynthParams {
                queries,
                distractors,
                imageless: distractors.min(3),
                seed,
                ..synth::SynthParams::default()
            });
            let url = g.gateway_url.clone().unwrap_or_else(|| GatewayConfig::default().base_url);
            let cfg = suite.write(&out, &url)?;
            println!("{}", cfg.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}
