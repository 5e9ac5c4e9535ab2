//! Gateway backend for the self-reflection loop.

use mrag_core::agent::{is_affirmative, run_agent, AgentAbort, AgentBackend, AgentConfig, AgentTranscript};
use mrag_core::corpus::{ArticleStore, QueryCase};
use mrag_core::generate::{build_context, ContextError, DocBlock, GenCondition};

use crate::gateway::{Gateway, GatewayError};
use crate::prompts::Prompts;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error("tentative answer is empty")]
    InvalidTentative,
}

pub fn check_relevance(gw: &Gateway, prompts: &Prompts, q: &QueryCase, doc: &DocBlock) -> Result<bool, GatewayError> {
    Ok(is_affirmative(&gw.chat(&prompts.relevance(q, doc))?))
}

pub fn self_reflect(
    gw: &Gateway,
    prompts: &Prompts,
    q: &QueryCase,
    doc: &DocBlock,
    tentative: &str,
) -> Result<bool, AgentError> {
    if tentative.trim().is_empty() {
        return Err(AgentError::InvalidTentative);
    }
    Ok(is_affirmative(&gw.chat(&prompts.reflection(q, doc, tentative))?))
}

/// Answers from a single-document context, as in generation.
pub fn tentative_answer(gw: &Gateway, prompts: &Prompts, q: &QueryCase, doc: &DocBlock) -> Result<String, GatewayError> {
    gw.chat(&prompts.generation(q, std::slice::from_ref(doc)))
}

struct GatewayAgent<'a> {
    gw: &'a Gateway,
    prompts: &'a Prompts,
    q: &'a QueryCase,
    store: &'a ArticleStore,
    docs: &'a [String],
}

impl GatewayAgent<'_> {
    fn doc(&self, i: usize) -> Result<DocBlock, AgentError> {
        let one = build_context(&self.docs[i..=i], &[], GenCondition::Retrieved { k: 1, reranked: false }, self.store)?;
        Ok(one.into_iter().next().expect("one block"))
    }
}

impl AgentBackend for GatewayAgent<'_> {
    type Error = AgentError;

    fn check_relevance(&mut self, i: usize) -> Result<bool, AgentError> {
        Ok(check_relevance(self.gw, self.prompts, self.q, &self.doc(i)?)?)
    }

    fn tentative_answer(&mut self, i: usize) -> Result<String, AgentError> {
        Ok(tentative_answer(self.gw, self.prompts, self.q, &self.doc(i)?)?)
    }

    fn self_reflect(&mut self, i: usize, tentative: &str) -> Result<bool, AgentError> {
        self_reflect(self.gw, self.prompts, self.q, &self.doc(i)?, tentative)
    }
}

/// Run the loop over `docs` (article ids in the order the agent should
/// visit them).
#[allow(clippy::result_large_err)]
pub fn run_query(
    gw: &Gateway,
    prompts: &Prompts,
    store: &ArticleStore,
    q: &QueryCase,
    docs: &[String],
    cfg: &AgentConfig,
) -> Result<AgentTranscript, AgentAbort<AgentError>> {
    let mut backend = GatewayAgent {
        gw,
        prompts,
        q,
        store,
        docs,
    };
    run_agent(&mut backend, &q.id, docs, cfg)
}
