//! Per-line records of the stage files that are not core types.

use mrag_core::metrics::Verdict;
use mrag_core::modality::ModalityConfig;
use mrag_core::rank::{RankedEntry, RankedList};
use mrag_core::rerank::Strategy;
use serde::{Deserialize, Serialize};

/// A re-ranked run: the retrieval record with the window reordered, plus
/// the strategy provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankRecord {
    pub query_id: String,
    pub config: ModalityConfig,
    pub entries: Vec<RankedEntry>,
    pub strategy: Strategy,
    pub order: Vec<usize>,
    pub parse_fallback: bool,
    pub call_count: usize,
}

/// Reader view shared by `runs.jsonl` and `reranked.jsonl` lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLine {
    pub query_id: String,
    pub config: ModalityConfig,
    pub entries: Vec<RankedEntry>,
}

impl RunLine {
    pub fn article_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.article_id.clone()).collect()
    }
}

impl From<RankedList> for RunLine {
    fn from(r: RankedList) -> Self {
        Self {
            query_id: r.query_id,
            config: r.config,
            entries: r.entries,
        }
    }
}

impl From<&RerankRecord> for RunLine {
    fn from(r: &RerankRecord) -> Self {
        Self {
            query_id: r.query_id.clone(),
            config: r.config,
            entries: r.entries.clone(),
        }
    }
}

/// Reader view shared by `answers.jsonl` and `agent.jsonl` lines.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerLine {
    pub query_id: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub query_id: String,
    /// Which answer file was judged, e.g. `answers` or `agent`.
    pub answer_set: String,
    pub judge: String,
    pub verdict: Verdict,
    pub parse_fallback: bool,
}
