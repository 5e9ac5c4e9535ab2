//! Answer generation calls.

use mrag_core::corpus::QueryCase;
use mrag_core::generate::{AnswerRecord, DocBlock, GenCondition};

use crate::gateway::{Gateway, GatewayError};
use crate::prompts::Prompts;

/// One chat call over `blocks`; the answer is recorded as returned.
pub fn generate_answer(
    gw: &Gateway,
    prompts: &Prompts,
    q: &QueryCase,
    blocks: &[DocBlock],
    condition: GenCondition,
) -> Result<AnswerRecord, GatewayError> {
    let turns = prompts.generation(q, blocks);
    let answer = gw.chat(&turns)?;
    Ok(AnswerRecord {
        query_id: q.id.clone(),
        condition,
        answer,
        context_article_ids: blocks.iter().map(|b| b.article_id.clone()).collect(),
        prompt_chars: turns.iter().map(|t| t.text_chars()).sum(),
    })
}
