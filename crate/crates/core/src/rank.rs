//! Article-level ranked lists produced from unit-level search.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::index::{IndexError, VectorIndex};
use crate::modality::ModalityConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub article_id: String,
    pub score: f64,
}

/// Articles ordered by descending score, each appearing once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub config: ModalityConfig,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn article_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.article_id.clone()).collect()
    }

    /// 0-based position of `article_id`, if present.
    pub fn position(&self, article_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.article_id == article_id)
    }
}

/// Retrieve the top `k` articles for a fused query vector.
///
/// Each article is scored by its best unit. Equal article scores are ordered
/// by the lexicographically smaller article id.
pub fn retrieve(
    index: &VectorIndex,
    query_id: &str,
    config: ModalityConfig,
    query: &[f32],
    k: usize,
) -> Result<RankedList, IndexError> {
    if k == 0 {
        return Err(IndexError::InvalidK);
    }
    let mut fetch = (k * 4).max(16).min(index.rows());
    let entries = loop {
        let hits = index.top_k_units(query, fetch)?;
        let mut best: BTreeMap<&str, f64> = BTreeMap::new();
        for h in &hits {
            best.entry(h.article_id.as_str()).or_insert(h.score);
        }
        let mut ranked: Vec<RankedEntry> = best
            .into_iter()
            .map(|(a, score)| RankedEntry {
                article_id: a.into(),
                score,
            })
            .collect();
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.article_id.cmp(&b.article_id)));
        let exhausted = hits.len() == index.rows();
        // An unseen article scores at most the last hit; it can only tie
        // into the top k if the k-th article score equals that bound.
        let settled = ranked.len() >= k && ranked[k - 1].score > hits.last().map_or(f64::NEG_INFINITY, |h| h.score);
        if exhausted || settled {
            ranked.truncate(k);
            break ranked;
        }
        fetch = (fetch * 2).min(index.rows());
    };
    Ok(RankedList {
        query_id: query_id.into(),
        config,
        entries,
    })
}
