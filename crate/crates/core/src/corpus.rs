//! Knowledge-base records and the in-memory article store.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub heading: String,
    pub text: String,
}

/// One knowledge-base entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub title: String,
    pub sections: Vec<Section>,
    pub image_refs: Vec<String>,
    pub category: String,
}

impl Article {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.id.is_empty() {
            return Err("empty id");
        }
        if self.category.is_empty() {
            return Err("empty category");
        }
        if !self.sections.iter().any(|s| !s.text.trim().is_empty()) {
            return Err("no section with text");
        }
        Ok(())
    }

    /// Section texts joined with newlines.
    pub fn body(&self) -> String {
        let mut out = String::new();
        for s in &self.sections {
            if s.text.is_empty() {
                continue;
            }
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&s.text);
        }
        out
    }
}

/// One evaluation query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryCase {
    pub id: String,
    pub image_ref: String,
    pub question: String,
    pub reference_answers: Vec<String>,
    pub gold_article_ids: Vec<String>,
    pub category: String,
}

impl QueryCase {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.id.is_empty() {
            return Err("empty id");
        }
        if self.reference_answers.is_empty() {
            return Err("empty reference_answers");
        }
        if self.gold_article_ids.is_empty() {
            return Err("empty gold_article_ids");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("duplicate article id {0:?}")]
    DuplicateId(String),
    #[error("invalid article {id:?}: {reason}")]
    InvalidArticle { id: String, reason: &'static str },
}

/// Immutable id-keyed article collection. Iteration follows insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ArticleStore {
    articles: Vec<Article>,
    by_id: BTreeMap<String, usize>,
    histogram: BTreeMap<String, usize>,
}

impl ArticleStore {
    pub fn new(articles: Vec<Article>) -> Result<Self, StoreError> {
        let mut by_id = BTreeMap::new();
        let mut histogram = BTreeMap::new();
        for (i, a) in articles.iter().enumerate() {
            a.validate().map_err(|reason| StoreError::InvalidArticle {
                id: a.id.clone(),
                reason,
            })?;
            if by_id.insert(a.id.clone(), i).is_some() {
                return Err(StoreError::DuplicateId(a.id.clone()));
            }
            *histogram.entry(a.category.clone()).or_insert(0) += 1;
        }
        Ok(Self {
            articles,
            by_id,
            histogram,
        })
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Article> {
        self.by_id.get(id).map(|&i| &self.articles[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Position of an article in insertion order.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn articles(&self) -> &[Article] {
        &self.articles
    }

    pub fn category_histogram(&self) -> &BTreeMap<String, usize> {
        &self.histogram
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.by_id.keys().map(String::as_str).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub total: usize,
    pub covered: usize,
    pub coverage_fraction: f64,
    /// Query ids with at least one gold article absent from the store.
    pub missing: Vec<String>,
}

/// Checks that every query's gold articles are present. An empty query list
/// is fully covered.
pub fn validate_coverage(store: &ArticleStore, queries: &[QueryCase]) -> CoverageReport {
    let missing: Vec<String> = queries
        .iter()
        .filter(|q| q.gold_article_ids.iter().any(|g| !store.contains(g)))
        .map(|q| q.id.clone())
        .collect();
    let total = queries.len();
    let covered = total - missing.len();
    let coverage_fraction = if total == 0 {
        1.0
    } else {
        covered as f64 / total as f64
    };
    CoverageReport {
        total,
        covered,
        coverage_fraction,
        missing,
    }
}
