//! Captioning, embedding and indexing through the gateway, and batch
//! retrieval.

use std::collections::{BTreeMap, BTreeSet};

use mrag_core::corpus::{ArticleStore, QueryCase};
use mrag_core::fusion::{fuse, FusedEmbedding, FusionError};
use mrag_core::index::{IndexEntry, IndexError, VectorIndex};
use mrag_core::modality::{
    assemble_candidates, assemble_query, CandidateSide, EmbedPlan, ModalityConfig, ModalityError, QuerySide,
};
use mrag_core::rank::{retrieve, RankedList};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gateway::{CaptionSide, EmbedKind, EmbedRequestItem, Gateway, GatewayError};
use crate::prompts::Prompts;

/// Items per embedding request.
pub const EMBED_BATCH: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Modality(#[from] ModalityError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("no article yields a retrievable unit under candidate side {0}")]
    NothingIndexable(&'static str),
}

/// Captions keyed by query id (query side) and by image path (KB side).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Captions {
    pub query: BTreeMap<String, String>,
    pub kb: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub side: CaptionSide,
    /// Query id for query-side captions, image path for KB-side ones.
    pub key: String,
    pub caption: String,
}

impl Captions {
    pub fn records(&self) -> Vec<CaptionRecord> {
        let q = self.query.iter().map(|(k, c)| (CaptionSide::Query, k, c));
        let kb = self.kb.iter().map(|(k, c)| (CaptionSide::Kb, k, c));
        q.chain(kb)
            .map(|(side, key, caption)| CaptionRecord {
                side,
                key: key.clone(),
                caption: caption.clone(),
            })
            .collect()
    }

    pub fn from_records(records: Vec<CaptionRecord>) -> Self {
        let mut c = Self::default();
        for r in records {
            match r.side {
                CaptionSide::Query => c.query.insert(r.key, r.caption),
                CaptionSide::Kb => c.kb.insert(r.key, r.caption),
            };
        }
        c
    }
}

/// Caption every query (conditioned on its question) when the query side
/// needs it, and every distinct KB image when the candidate side does.
pub fn caption_all(
    gw: &Gateway,
    prompts: &Prompts,
    config: ModalityConfig,
    store: &ArticleStore,
    queries: &[QueryCase],
) -> Result<Captions, GatewayError> {
    let mut out = Captions::default();
    if config.query.needs_caption() {
        out.query = queries
            .par_iter()
            .map(|q| {
                let c = gw.caption_image(prompts, &q.image_ref, CaptionSide::Query, Some(&q.question))?;
                Ok((q.id.clone(), c))
            })
            .collect::<Result<_, GatewayError>>()?;
    }
    if config.candidate.needs_caption() {
        let images: BTreeSet<&String> = store.articles().iter().flat_map(|a| &a.image_refs).collect();
        out.kb = images
            .into_par_iter()
            .map(|img| Ok((img.clone(), gw.caption_image(prompts, img, CaptionSide::Kb, None)?)))
            .collect::<Result<_, GatewayError>>()?;
    }
    Ok(out)
}

fn embed_all(gw: &Gateway, kind: EmbedKind, items: &[EmbedRequestItem]) -> Result<Vec<Vec<f32>>, GatewayError> {
    let batches: Vec<Vec<Vec<f32>>> = items
        .par_chunks(EMBED_BATCH)
        .map(|chunk| gw.embed_batch(kind, chunk))
        .collect::<Result<_, _>>()?;
    let out: Vec<Vec<f32>> = batches.into_iter().flatten().collect();
    if let Some(first) = out.first() {
        if let Some(v) = out.iter().find(|v| v.len() != first.len()) {
            return Err(GatewayError::DimensionMismatch(format!(
                "batches disagree: {} vs {}",
                first.len(),
                v.len()
            )));
        }
    }
    Ok(out)
}

/// Embed distinct payloads once each; returns one vector per input.
fn embed_dedup(gw: &Gateway, kind: EmbedKind, payloads: &[&str]) -> Result<Vec<Vec<f32>>, GatewayError> {
    let mut slot: BTreeMap<&str, usize> = BTreeMap::new();
    let mut items = Vec::new();
    for p in payloads {
        slot.entry(p).or_insert_with(|| {
            items.push(match kind {
                EmbedKind::Visual => EmbedRequestItem::image(*p),
                EmbedKind::Textual => EmbedRequestItem::text(*p),
            });
            items.len() - 1
        });
    }
    let vectors = embed_all(gw, kind, &items)?;
    Ok(payloads.iter().map(|p| vectors[slot[p]].clone()).collect())
}

/// Embed every plan through the two encoders and fuse per plan.
pub fn embed_plans(gw: &Gateway, plans: &[EmbedPlan]) -> Result<Vec<FusedEmbedding>, RetrievalError> {
    let visual: Vec<&str> = plans.iter().filter_map(|p| p.image_ref.as_deref()).collect();
    let textual: Vec<&str> = plans.iter().filter_map(|p| p.text.as_deref()).collect();
    let mut vis = embed_dedup(gw, EmbedKind::Visual, &visual)?.into_iter();
    let mut txt = embed_dedup(gw, EmbedKind::Textual, &textual)?.into_iter();
    plans
        .iter()
        .map(|p| {
            let v = p.image_ref.as_ref().and_then(|_| vis.next());
            let t = p.text.as_ref().and_then(|_| txt.next());
            Ok(fuse(v.as_deref(), t.as_deref())?)
        })
        .collect()
}

fn query_plans(
    queries: &[QueryCase],
    side: QuerySide,
    captions: &Captions,
) -> Result<Vec<EmbedPlan>, ModalityError> {
    queries
        .iter()
        .map(|q| assemble_query(q, side, captions.query.get(&q.id).map(String::as_str)))
        .collect()
}

pub fn embed_queries(
    gw: &Gateway,
    queries: &[QueryCase],
    side: QuerySide,
    captions: &Captions,
) -> Result<Vec<FusedEmbedding>, RetrievalError> {
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    embed_plans(gw, &query_plans(queries, side, captions)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuiltIndex {
    /// Candidate-side code the units were assembled with.
    pub candidate: String,
    /// Articles without any unit under this candidate side.
    pub unretrievable: Vec<String>,
}

/// Embed every candidate unit of the store and build the index. Rows follow
/// store order, then unit order within an article.
pub fn build_index(
    gw: &Gateway,
    store: &ArticleStore,
    side: CandidateSide,
    captions: &Captions,
) -> Result<(VectorIndex, BuiltIndex), RetrievalError> {
    let mut units = Vec::new();
    let mut unretrievable = Vec::new();
    for a in store.articles() {
        let u = assemble_candidates(a, side, &captions.kb)?;
        if u.is_empty() {
            tracing::info!(article = %a.id, side = side.code(), "article has no retrievable unit");
            unretrievable.push(a.id.clone());
        }
        units.extend(u);
    }
    if units.is_empty() {
        return Err(RetrievalError::NothingIndexable(side.code()));
    }
    let plans: Vec<EmbedPlan> = units
        .iter()
        .map(|u| EmbedPlan {
            image_ref: u.image_ref.clone(),
            text: u.text.clone(),
        })
        .collect();
    let fused = embed_plans(gw, &plans)?;
    let entries = units
        .into_iter()
        .zip(fused)
        .map(|(u, f)| IndexEntry {
            unit_id: u.unit_id,
            article_id: u.article_id,
            vector: f.vector,
        })
        .collect();
    let index = VectorIndex::build(entries)?;
    Ok((
        index,
        BuiltIndex {
            candidate: side.code().into(),
            unretrievable,
        },
    ))
}

/// Retrieve `k` articles for every query vector, in parallel over queries.
pub fn retrieve_all(
    index: &VectorIndex,
    query_ids: &[&str],
    vectors: &[&[f32]],
    config: ModalityConfig,
    k: usize,
) -> Result<Vec<RankedList>, IndexError> {
    query_ids
        .par_iter()
        .zip(vectors.par_iter())
        .map(|(id, v)| retrieve(index, id, config, v, k))
        .collect()
}

/// Row numbers of every unit, per article.
pub fn rows_by_article(index: &VectorIndex) -> BTreeMap<String, Vec<usize>> {
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for r in 0..index.rows() {
        out.entry(index.article_id(r).to_string()).or_default().push(r);
    }
    out
}

/// The vector of `article_id`'s best-scoring unit for `q`, lowest row on
/// ties; this is the unit retrieval used to score the article.
pub fn best_unit_vector(
    index: &VectorIndex,
    rows: &BTreeMap<String, Vec<usize>>,
    q: &[f32],
    article_id: &str,
) -> Option<Vec<f32>> {
    let mut best: Option<(f64, usize)> = None;
    for &r in rows.get(article_id)? {
        let s = index.score(q, r);
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, r));
        }
    }
    best.map(|(_, r)| index.row(r).to_vec())
}
