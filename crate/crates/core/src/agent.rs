//! The unified re-rank and generate loop.
//!
//! Documents are visited in the given order. A document that fails the
//! relevance check is skipped. A relevant one yields a tentative answer that
//! is checked against the document; the first validated answer ends the
//! loop. If the window is exhausted the transcript carries the failure
//! sentinel.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::text::alnum_tokens;

/// Answer emitted when no document yields a validated answer.
pub const FAIL_SENTINEL: &str = "Model fails to answer the question";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub max_docs: usize,
    pub fail_sentinel: String,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_docs: crate::rerank::DEFAULT_WINDOW,
            fail_sentinel: FAIL_SENTINEL.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentStep {
    pub doc_index: usize,
    pub article_id: String,
    pub relevance_verdict: bool,
    pub tentative_answer: Option<String>,
    pub reflection_verdict: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Answered { answer: String, doc_index: usize },
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentTranscript {
    pub query_id: String,
    pub steps: Vec<AgentStep>,
    pub outcome: Outcome,
    /// The validated answer, or the failure sentinel.
    pub answer: String,
    /// Set when a backend error cut the loop short.
    #[serde(default, skip_serializing_if = "core::ops::Not::not")]
    pub aborted: bool,
}

impl AgentTranscript {
    pub fn relevance_calls(&self) -> usize {
        self.steps.len()
    }

    pub fn generation_calls(&self) -> usize {
        self.steps.iter().filter(|s| s.tentative_answer.is_some()).count()
    }

    pub fn reflection_calls(&self) -> usize {
        self.steps.iter().filter(|s| s.reflection_verdict.is_some()).count()
    }
}

/// Model calls the loop depends on, addressed by position in the ranked
/// document list.
pub trait AgentBackend {
    type Error;
    fn check_relevance(&mut self, doc: usize) -> Result<bool, Self::Error>;
    fn tentative_answer(&mut self, doc: usize) -> Result<String, Self::Error>;
    fn self_reflect(&mut self, doc: usize, tentative: &str) -> Result<bool, Self::Error>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentAbort<E> {
    /// Steps completed before the failure, with `aborted` set.
    pub transcript: AgentTranscript,
    pub error: E,
}

/// True iff the first of the tokens "yes"/"no" (case-insensitive) is "yes".
pub fn is_affirmative(text: &str) -> bool {
    alnum_tokens(text)
        .iter()
        .find(|t| *t == "yes" || *t == "no")
        .is_some_and(|t| t == "yes")
}

pub fn run_agent<B: AgentBackend>(
    backend: &mut B,
    query_id: &str,
    doc_ids: &[String],
    cfg: &AgentConfig,
) -> Result<AgentTranscript, AgentAbort<B::Error>> {
    let mut t = AgentTranscript {
        query_id: query_id.into(),
        steps: Vec::new(),
        outcome: Outcome::Failed,
        answer: cfg.fail_sentinel.clone(),
        aborted: false,
    };
    macro_rules! attempt {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => {
                    t.aborted = true;
                    return Err(AgentAbort { transcript: t, error });
                }
            }
        };
    }
    for (i, aid) in doc_ids.iter().enumerate().take(cfg.max_docs) {
        let relevant = attempt!(backend.check_relevance(i));
        t.steps.push(AgentStep {
            doc_index: i,
            article_id: aid.clone(),
            relevance_verdict: relevant,
            tentative_answer: None,
            reflection_verdict: None,
        });
        if !relevant {
            continue;
        }
        let tentative = attempt!(backend.tentative_answer(i));
        t.steps.last_mut().unwrap().tentative_answer = Some(tentative.clone());
        let valid = attempt!(backend.self_reflect(i, &tentative));
        t.steps.last_mut().unwrap().reflection_verdict = Some(valid);
        if valid {
            t.outcome = Outcome::Answered {
                answer: tentative.clone(),
                doc_index: i,
            };
            t.answer = tentative;
            return Ok(t);
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    /// Scripted backend: per-doc (relevant, answer-bearing) flags.
    struct Script {
        docs: Vec<(bool, bool)>,
        fail_at: Option<usize>,
        calls: Vec<&'static str>,
    }

    impl AgentBackend for Script {
        type Error = &'static str;
        fn check_relevance(&mut self, doc: usize) -> Result<bool, Self::Error> {
            if self.fail_at == Some(doc) {
                return Err("transport");
            }
            self.calls.push("relevance");
            Ok(self.docs[doc].0)
        }
        fn tentative_answer(&mut self, doc: usize) -> Result<String, Self::Error> {
            self.calls.push("generate");
            Ok(format!("answer{doc}"))
        }
        fn self_reflect(&mut self, doc: usize, _t: &str) -> Result<bool, Self::Error> {
            self.calls.push("reflect");
            Ok(self.docs[doc].1)
        }
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("d{i}")).collect()
    }

    #[test]
    fn third_doc_answers() {
        let mut s = Script {
            docs: vec![(false, false), (false, false), (true, true), (true, true), (false, false)],
            fail_at: None,
            calls: vec![],
        };
        let t = run_agent(&mut s, "q", &ids(5), &AgentConfig::default()).unwrap();
        assert_eq!(t.steps.len(), 3);
        assert_eq!(t.outcome, Outcome::Answered { answer: "answer2".into(), doc_index: 2 });
        assert_eq!(s.calls, ["relevance", "relevance", "relevance", "generate", "reflect"]);
    }

    #[test]
    fn nothing_relevant_fails_with_sentinel() {
        let mut s = Script { docs: vec![(false, false); 7], fail_at: None, calls: vec![] };
        let t = run_agent(&mut s, "q", &ids(7), &AgentConfig::default()).unwrap();
        assert_eq!(t.steps.len(), 5);
        assert_eq!(t.outcome, Outcome::Failed);
        assert_eq!(t.answer, "Model fails to answer the question");
    }

    #[test]
    fn rejected_reflection_moves_on() {
        let mut s = Script {
            docs: vec![(true, false), (true, true), (true, true)],
            fail_at: None,
            calls: vec![],
        };
        let t = run_agent(&mut s, "q", &ids(3), &AgentConfig::default()).unwrap();
        assert_eq!(t.outcome, Outcome::Answered { answer: "answer1".into(), doc_index: 1 });
        assert_eq!(t.steps[0].reflection_verdict, Some(false));
        assert_eq!((t.relevance_calls(), t.generation_calls(), t.reflection_calls()), (2, 2, 2));
    }

    #[test]
    fn empty_ranking_fails_immediately() {
        let mut s = Script { docs: vec![], fail_at: None, calls: vec![] };
        let t = run_agent(&mut s, "q", &[], &AgentConfig::default()).unwrap();
        assert!(t.steps.is_empty());
        assert_eq!(t.answer, FAIL_SENTINEL);
    }

    #[test]
    fn backend_error_aborts_with_partial_transcript() {
        let mut s = Script { docs: vec![(false, false); 5], fail_at: Some(2), calls: vec![] };
        let abort = run_agent(&mut s, "q", &ids(5), &AgentConfig::default()).unwrap_err();
        assert_eq!(abort.error, "transport");
        assert!(abort.transcript.aborted);
        assert_eq!(abort.transcript.steps.len(), 2);
    }

    #[test]
    fn affirmative_parsing() {
        assert!(is_affirmative("YES · the second part covers it"));
        assert!(!is_affirmative("No."));
        assert!(!is_affirmative("Maybe"));
        assert!(is_affirmative("Answer: yes"));
        assert!(!is_affirmative("no, yes"));
    }
}
