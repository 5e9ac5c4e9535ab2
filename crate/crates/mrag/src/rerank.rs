//! Model-backed re-ranking of a retrieval window.

use mrag_core::corpus::{ArticleStore, QueryCase};
use mrag_core::generate::ContextError;
use mrag_core::rerank::{
    all_pairs, apply_window, identity, parse_listwise, parse_pairwise, rerank_pointwise, tally_pairwise,
    PairJudgment, PointwiseDimMismatch, RerankOutcome, Strategy,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError};
use crate::prompts::Prompts;
use crate::records::{RerankRecord, RunLine};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowCandidate {
    pub article_id: String,
    pub display_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

impl WindowCandidate {
    /// Title and body of a stored article, with its first image.
    pub fn from_store(store: &ArticleStore, id: &str) -> Result<Self, ContextError> {
        let a = store.get(id).ok_or_else(|| ContextError::MissingArticle(id.into()))?;
        Ok(Self {
            article_id: a.id.clone(),
            display_text: format!("{}\n{}", a.title, a.body()),
            image_ref: a.image_refs.first().cloned(),
        })
    }
}

/// The top of a ranking, in retrieval order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankWindow {
    pub query_id: String,
    pub candidates: Vec<WindowCandidate>,
}

impl RerankWindow {
    pub fn from_ranking(
        query_id: &str,
        ranking: &[String],
        window: usize,
        store: &ArticleStore,
    ) -> Result<Self, ContextError> {
        let candidates = ranking
            .iter()
            .take(window)
            .map(|id| WindowCandidate::from_store(store, id))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            query_id: query_id.into(),
            candidates,
        })
    }

    pub fn n(&self) -> usize {
        self.candidates.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankOptions {
    pub window: usize,
    /// Attach candidate images to re-rank prompts.
    pub cand_images: bool,
    /// Ask every pair twice with swapped presentation.
    pub pairwise_debias: bool,
}

impl Default for RerankOptions {
    fn default() -> Self {
        Self {
            window: mrag_core::rerank::DEFAULT_WINDOW,
            cand_images: false,
            pairwise_debias: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RerankError {
    #[error("re-rank aborted after {completed} successful calls: {source}")]
    Aborted { completed: usize, source: GatewayError },
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    DimMismatch(#[from] PointwiseDimMismatch),
    #[error("pointwise re-ranking needs embeddings: {0}")]
    MissingEmbedding(String),
}

pub fn rerank_listwise(
    gw: &Gateway,
    prompts: &Prompts,
    q: &QueryCase,
    w: &RerankWindow,
    opts: &RerankOptions,
) -> Result<RerankOutcome, RerankError> {
    let n = w.n();
    if n <= 1 {
        return Ok(RerankOutcome {
            strategy: Strategy::Listwise,
            order: identity(n),
            parse_fallback: false,
            call_count: 0,
        });
    }
    let text = gw
        .chat(&prompts.listwise(q, &w.candidates, opts.cand_images))
        .map_err(|source| RerankError::Aborted { completed: 0, source })?;
    let (order, parse_fallback) = parse_listwise(&text, n);
    Ok(RerankOutcome {
        strategy: Strategy::Listwise,
        order,
        parse_fallback,
        call_count: 1,
    })
}

pub fn rerank_pairwise(
    gw: &Gateway,
    prompts: &Prompts,
    q: &QueryCase,
    w: &RerankWindow,
    opts: &RerankOptions,
) -> Result<RerankOutcome, RerankError> {
    let n = w.n();
    let mut presentations: Vec<(usize, usize)> = all_pairs(n);
    if opts.pairwise_debias {
        presentations.extend(all_pairs(n).into_iter().map(|(i, j)| (j, i)));
    }
    let results: Vec<Result<PairJudgment, GatewayError>> = presentations
        .par_iter()
        .map(|&(first, second)| {
            let turns = prompts.pairwise(q, &w.candidates[first], &w.candidates[second], opts.cand_images);
            gw.chat(&turns).map(|text| PairJudgment {
                first,
                second,
                choice: parse_pairwise(&text),
            })
        })
        .collect();
    let completed = results.iter().filter(|r| r.is_ok()).count();
    let judgments = results
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| RerankError::Aborted { completed, source })?;
    let (order, parse_fallback) = tally_pairwise(n, &judgments);
    Ok(RerankOutcome {
        strategy: Strategy::Pairwise,
        order,
        parse_fallback,
        call_count: judgments.len(),
    })
}

/// Re-rank one run and splice the reordered window back in front of the
/// untouched tail.
///
/// `pointwise` supplies the query vector and one vector per window
/// candidate; it is only read for [`Strategy::Pointwise`].
#[allow(clippy::too_many_arguments)]
pub fn rerank_run(
    gw: &Gateway,
    prompts: &Prompts,
    store: &ArticleStore,
    q: &QueryCase,
    run: &RunLine,
    strategy: Strategy,
    opts: &RerankOptions,
    pointwise: Option<(&[f32], &[Vec<f32>])>,
) -> Result<RerankRecord, RerankError> {
    let ids = run.article_ids();
    let w = RerankWindow::from_ranking(&run.query_id, &ids, opts.window, store)?;
    let outcome = match strategy {
        Strategy::Listwise => rerank_listwise(gw, prompts, q, &w, opts)?,
        Strategy::Pairwise => rerank_pairwise(gw, prompts, q, &w, opts)?,
        Strategy::Pointwise => {
            let (qv, cands) = pointwise.ok_or_else(|| RerankError::MissingEmbedding(run.query_id.clone()))?;
            if cands.len() != w.n() {
                return Err(RerankError::MissingEmbedding(format!(
                    "{}: {} candidate vectors for a window of {}",
                    run.query_id,
                    cands.len(),
                    w.n()
                )));
            }
            rerank_pointwise(qv, cands)?
        }
    };
    Ok(RerankRecord {
        query_id: run.query_id.clone(),
        config: run.config,
        entries: apply_window(&run.entries, &outcome.order),
        strategy: outcome.strategy,
        order: outcome.order,
        parse_fallback: outcome.parse_fallback,
        call_count: outcome.call_count,
    })
}
