//! Re-ranking of a retrieval window: pointwise scoring, pairwise tournament
//! aggregation and listwise permutation parsing.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;
use serde::{Deserialize, Serialize};

use crate::text::alnum_tokens;

/// Default re-rank window.
pub const DEFAULT_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Pointwise,
    Pairwise,
    Listwise,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pointwise => "pointwise",
            Self::Pairwise => "pairwise",
            Self::Listwise => "listwise",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pointwise" => Ok(Self::Pointwise),
            "pairwise" => Ok(Self::Pairwise),
            "listwise" => Ok(Self::Listwise),
            other => Err(alloc::format!("unknown re-rank strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankOutcome {
    pub strategy: Strategy,
    /// `order[i]` is the original window position placed at rank `i`.
    pub order: Vec<usize>,
    pub parse_fallback: bool,
    pub call_count: usize,
}

pub fn identity(n: usize) -> Vec<usize> {
    (0..n).collect()
}

pub fn is_permutation(order: &[usize], n: usize) -> bool {
    if order.len() != n {
        return false;
    }
    let mut seen = alloc::vec![false; n];
    order
        .iter()
        .all(|&i| i < n && !core::mem::replace(&mut seen[i], true))
}

/// Reorder the first `order.len()` items by `order`; the tail keeps its
/// original relative order.
pub fn apply_window<T: Clone>(items: &[T], order: &[usize]) -> Vec<T> {
    let n = order.len();
    assert!(n <= items.len() && is_permutation(order, n), "order must permute the window");
    order
        .iter()
        .map(|&i| items[i].clone())
        .chain(items[n..].iter().cloned())
        .collect()
}

/// Parse a listwise ranking such as `[3] > [1] > [2]` into 0-based positions.
///
/// Bracketed integers are read in textual order; out-of-range and repeated
/// values are dropped, and any position never mentioned is appended in
/// ascending order. The flag is set (with the identity order) when no valid
/// index was found.
pub fn parse_listwise(text: &str, n: usize) -> (Vec<usize>, bool) {
    let mut seen = alloc::vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'[' {
            i += 1;
            continue;
        }
        let start = i + 1;
        let mut j = start;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        if j > start && j < bytes.len() && bytes[j] == b']' {
            let value = text[start..j].parse::<usize>().ok();
            if let Some(v) = value.filter(|v| (1..=n).contains(v)) {
                if !seen[v - 1] {
                    seen[v - 1] = true;
                    order.push(v - 1);
                }
            }
            i = j + 1;
        } else {
            i = start;
        }
    }
    let fallback = order.is_empty();
    order.extend((0..n).filter(|&p| !seen[p]));
    (order, fallback)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairChoice {
    A,
    B,
    Unparseable,
}

/// First standalone `A`/`B` token (or `candidate 1`/`candidate 2`), case
/// insensitive.
pub fn parse_pairwise(text: &str) -> PairChoice {
    let toks = alnum_tokens(text);
    for (i, t) in toks.iter().enumerate() {
        match t.as_str() {
            "a" => return PairChoice::A,
            "b" => return PairChoice::B,
            "candidate" => match toks.get(i + 1).map(String::as_str) {
                Some("1") => return PairChoice::A,
                Some("2") => return PairChoice::B,
                _ => {}
            },
            _ => {}
        }
    }
    PairChoice::Unparseable
}

/// All unordered position pairs `(i, j)` with `i < j`.
pub fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// One pairwise judgment: `first` was presented as A, `second` as B.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairJudgment {
    pub first: usize,
    pub second: usize,
    pub choice: PairChoice,
}

/// Round-robin win counting. A decisive judgment gives the winner one point;
/// an unparseable one gives each side half a point. The order is by
/// descending points with the original position breaking ties.
pub fn tally_pairwise(n: usize, judgments: &[PairJudgment]) -> (Vec<usize>, bool) {
    // half-points keep the arithmetic exact
    let mut points = alloc::vec![0u32; n];
    let mut fallback = false;
    for j in judgments {
        match j.choice {
            PairChoice::A => points[j.first] += 2,
            PairChoice::B => points[j.second] += 2,
            PairChoice::Unparseable => {
                points[j.first] += 1;
                points[j.second] += 1;
                fallback = true;
            }
        }
    }
    let mut order = identity(n);
    order.sort_by(|&a, &b| points[b].cmp(&points[a]).then(a.cmp(&b)));
    (order, fallback)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("candidate {index} has dimension {got}, query has {expected}")]
pub struct PointwiseDimMismatch {
    pub index: usize,
    pub expected: usize,
    pub got: usize,
}

/// Order candidates by descending dot product with the query. Scores are
/// accumulated in `f64`, matching the index.
pub fn rerank_pointwise<V: AsRef<[f32]>>(
    query: &[f32],
    candidates: &[V],
) -> Result<RerankOutcome, PointwiseDimMismatch> {
    let mut scores = Vec::with_capacity(candidates.len());
    for (index, c) in candidates.iter().enumerate() {
        let c = c.as_ref();
        if c.len() != query.len() {
            return Err(PointwiseDimMismatch {
                index,
                expected: query.len(),
                got: c.len(),
            });
        }
        scores.push(query.iter().zip(c).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>());
    }
    let mut order = identity(candidates.len());
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(RerankOutcome {
        strategy: Strategy::Pointwise,
        order,
        parse_fallback: false,
        call_count: 0,
    })
}
