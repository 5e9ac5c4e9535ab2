//! Generation conditions and context assembly.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::ArticleStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GenCondition {
    NoRetrieval,
    Retrieved { k: usize, reranked: bool },
    Gold,
}

impl fmt::Display for GenCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NoRetrieval => f.write_str("none"),
            Self::Gold => f.write_str("gold"),
            Self::Retrieved { k, reranked: false } => write!(f, "retrieved:k={k}"),
            Self::Retrieved { k, reranked: true } => write!(f, "retrieved:k={k},reranked"),
        }
    }
}

impl FromStr for GenCondition {
    type Err = String;
    /// Accepts `none`, `gold`, `retrieved:k=N` and `retrieved:k=N,reranked`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "none" => return Ok(Self::NoRetrieval),
            "gold" => return Ok(Self::Gold),
            _ => {}
        }
        let rest = s
            .trim()
            .strip_prefix("retrieved:")
            .ok_or_else(|| format!("unknown generation condition {s:?}"))?;
        let mut k = None;
        let mut reranked = false;
        for part in rest.split(',').map(str::trim) {
            if part == "reranked" {
                reranked = true;
            } else if let Some(v) = part.strip_prefix("k=") {
                k = Some(v.parse::<usize>().map_err(|e| format!("bad k in {s:?}: {e}"))?);
            } else {
                return Err(format!("unknown option {part:?} in {s:?}"));
            }
        }
        match k {
            Some(k) if k >= 1 => Ok(Self::Retrieved { k, reranked }),
            _ => Err(format!("retrieved condition needs k >= 1: {s:?}")),
        }
    }
}

impl Serialize for GenCondition {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GenCondition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocBlock {
    pub article_id: String,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub query_id: String,
    pub condition: GenCondition,
    pub answer: String,
    pub context_article_ids: Vec<String>,
    pub prompt_chars: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContextError {
    #[error("article {0:?} is not in the store")]
    MissingArticle(String),
    #[error("ranking is empty")]
    EmptyRanking,
}

fn block(store: &ArticleStore, id: &str) -> Result<DocBlock, ContextError> {
    let a = store
        .get(id)
        .ok_or_else(|| ContextError::MissingArticle(id.to_string()))?;
    Ok(DocBlock {
        article_id: a.id.clone(),
        title: a.title.clone(),
        text: a.body(),
    })
}

/// Documents handed to the generator, in prompt order.
///
/// `ranking` is the (possibly re-ranked) article order; for `Retrieved` the
/// first `k` articles are used, or fewer when the ranking is shorter. `Gold`
/// uses the first gold article found in the store.
pub fn build_context(
    ranking: &[String],
    gold_ids: &[String],
    cond: GenCondition,
    store: &ArticleStore,
) -> Result<Vec<DocBlock>, ContextError> {
    match cond {
        GenCondition::NoRetrieval => Ok(Vec::new()),
        GenCondition::Retrieved { k, .. } => {
            if ranking.is_empty() {
                return Err(ContextError::EmptyRanking);
            }
            ranking.iter().take(k).map(|id| block(store, id)).collect()
        }
        GenCondition::Gold => {
            let id = gold_ids
                .iter()
                .find(|g| store.contains(g))
                .or(gold_ids.first())
                .ok_or(ContextError::EmptyRanking)?;
            Ok(alloc::vec![block(store, id)?])
        }
    }
}
