//! Article and query files.
//!
//! Both are UTF-8 JSON Lines. An article line carries `id`, `title`,
//! `sections` (`[{heading, text}]`), `image_refs` and `category`; a query line
//! carries `id`, `image_ref`, `question`, `reference_answers`,
//! `gold_article_ids` and `category`.

use std::path::Path;

use mrag_core::corpus::{Article, ArticleStore, QueryCase, StoreError};

use crate::jsonl::{self, JsonlError};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error(transparent)]
    Io(JsonlError),
}

impl From<JsonlError> for CorpusError {
    fn from(e: JsonlError) -> Self {
        match e {
            JsonlError::MalformedRecord { line, reason } => Self::MalformedRecord { line, reason },
            io => Self::Io(io),
        }
    }
}

pub fn load_articles(path: &Path) -> Result<ArticleStore, CorpusError> {
    let articles: Vec<Article> = jsonl::read_with(path, |_, a: Article| {
        a.validate().map_err(String::from)?;
        Ok(a)
    })?;
    ArticleStore::new(articles).map_err(|e| match e {
        StoreError::DuplicateId(id) => CorpusError::DuplicateId(id),
        StoreError::InvalidArticle { .. } => unreachable!("validated per line"),
    })
}

pub fn save_articles(store: &ArticleStore, path: &Path) -> Result<(), CorpusError> {
    Ok(jsonl::write(path, store.articles())?)
}

pub fn load_queries(path: &Path) -> Result<Vec<QueryCase>, CorpusError> {
    Ok(jsonl::read_with(path, |_, q: QueryCase| {
        q.validate().map_err(String::from)?;
        if q.question.trim().is_empty() {
            return Err("empty question".into());
        }
        Ok(q)
    })?)
}

pub fn save_queries(queries: &[QueryCase], path: &Path) -> Result<(), CorpusError> {
    Ok(jsonl::write(path, queries)?)
}
