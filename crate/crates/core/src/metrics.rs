//! Retrieval metrics (Recall@K, MRR) and the ROUGE-L answer metric.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::text::alnum_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("no runs to evaluate")]
    EmptyRuns,
    #[error("cutoff must be at least 1")]
    InvalidCutoff,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalRun {
    pub query_id: String,
    pub ranked_article_ids: Vec<String>,
    pub gold_article_ids: BTreeSet<String>,
}

impl RetrievalRun {
    /// 1-based rank of the first gold article, if any.
    pub fn first_gold_rank(&self) -> Option<usize> {
        self.ranked_article_ids
            .iter()
            .position(|a| self.gold_article_ids.contains(a))
            .map(|p| p + 1)
    }
}

fn check(runs: &[RetrievalRun], cutoff: usize) -> Result<(), MetricError> {
    if cutoff == 0 {
        return Err(MetricError::InvalidCutoff);
    }
    if runs.is_empty() {
        return Err(MetricError::EmptyRuns);
    }
    Ok(())
}

/// Percentage of runs with any gold article in the top `k`.
pub fn recall_at_k(runs: &[RetrievalRun], k: usize) -> Result<f64, MetricError> {
    check(runs, k)?;
    let hits = runs
        .iter()
        .filter(|r| r.first_gold_rank().is_some_and(|p| p <= k))
        .count();
    Ok(100.0 * hits as f64 / runs.len() as f64)
}

/// Mean reciprocal rank of the first gold article within `window`; runs
/// without a gold in the window contribute 0.
pub fn mrr(runs: &[RetrievalRun], window: usize) -> Result<f64, MetricError> {
    check(runs, window)?;
    let sum: f64 = runs
        .iter()
        .map(|r| match r.first_gold_rank() {
            Some(p) if p <= window => 1.0 / p as f64,
            _ => 0.0,
        })
        .sum();
    Ok(sum / runs.len() as f64)
}

/// Length of the longest common subsequence, bit-parallel over `a`.
pub fn lcs_len<T: Ord>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let words = a.len().div_ceil(64);
    let mut masks: BTreeMap<&T, Vec<u64>> = BTreeMap::new();
    for (i, t) in a.iter().enumerate() {
        masks.entry(t).or_insert_with(|| alloc::vec![0; words])[i / 64] |= 1 << (i % 64);
    }
    let mut v = alloc::vec![u64::MAX; words];
    for t in b {
        let Some(m) = masks.get(t) else { continue };
        let mut carry = 0u64;
        for w in 0..words {
            let u = v[w] & m[w];
            let (s1, c1) = v[w].overflowing_add(u);
            let (s2, c2) = s1.overflowing_add(carry);
            carry = (c1 | c2) as u64;
            v[w] = s2 | (v[w] & !m[w]);
        }
    }
    let mut zeros = 0;
    for (w, bits) in v.iter().enumerate() {
        let valid = (a.len() - w * 64).min(64);
        let mask = if valid == 64 { u64::MAX } else { (1u64 << valid) - 1 };
        zeros += (!bits & mask).count_ones() as usize;
    }
    zeros
}

/// ROUGE-L F1 over lowercased alphanumeric tokens, maximised over the
/// references. An empty candidate scores 0.
pub fn rouge_l<S: AsRef<str>>(candidate: &str, references: &[S]) -> f64 {
    let cand = alnum_tokens(candidate);
    references
        .iter()
        .map(|r| rouge_l_tokens(&cand, &alnum_tokens(r.as_ref())))
        .fold(0.0, f64::max)
}

pub fn rouge_l_tokens(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(cand, reference) as f64;
    let p = l / cand.len() as f64;
    let r = l / reference.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
}

/// Judge verdict from the first decisive token ("correct"/"yes" vs
/// "incorrect"/"no"). The flag is set when no decisive token exists, in which
/// case the verdict is `Incorrect`.
pub fn parse_verdict(text: &str) -> (Verdict, bool) {
    for tok in alnum_tokens(text) {
        match tok.as_str() {
            "correct" | "yes" => return (Verdict::Correct, false),
            "incorrect" | "no" => return (Verdict::Incorrect, false),
            _ => {}
        }
    }
    (Verdict::Incorrect, true)
}
