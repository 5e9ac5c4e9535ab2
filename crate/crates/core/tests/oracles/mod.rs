//! Independent reference implementations used to freeze and cross-check
//! expected values. Nothing here calls into the code under test.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Score every row, then fully sort by (score desc, row asc).
pub fn naive_top_k(rows: &[Vec<f32>], q: &[f32], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut s = 0.0f64;
            for d in 0..q.len() {
                s += q[d] as f64 * r[d] as f64;
            }
            (i, s)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Best unit score per article, sorted by (score desc, article id asc).
pub fn naive_article_ranking(
    rows: &[Vec<f32>],
    article_ids: &[String],
    q: &[f32],
    k: usize,
) -> Vec<(String, f64)> {
    let mut best: HashMap<&str, f64> = HashMap::new();
    for (row, aid) in naive_top_k(rows, q, rows.len()).into_iter().map(|(i, s)| ((i, s), &article_ids[i])) {
        let e = best.entry(aid.as_str()).or_insert(f64::NEG_INFINITY);
        if row.1 > *e {
            *e = row.1;
        }
    }
    let mut out: Vec<(String, f64)> = best.into_iter().map(|(a, s)| (a.to_string(), s)).collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    out.truncate(k);
    out
}

/// Textbook quadratic LCS table.
pub fn lcs_dp<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

pub fn tokenize(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

pub fn rouge_l_oracle(cand: &str, refs: &[&str]) -> f64 {
    let c = tokenize(cand);
    let mut best = 0.0f64;
    for r in refs {
        let r = tokenize(r);
        if c.is_empty() || r.is_empty() {
            continue;
        }
        let l = lcs_dp(&c, &r) as f64;
        if l == 0.0 {
            continue;
        }
        let p = l / c.len() as f64;
        let rc = l / r.len() as f64;
        best = best.max(2.0 * p * rc / (p + rc));
    }
    best
}

/// 1-based rank of the first gold, scanning with a double loop.
pub fn first_gold_rank(ranked: &[String], golds: &BTreeSet<String>) -> Option<usize> {
    for (i, a) in ranked.iter().enumerate() {
        for g in golds {
            if a == g {
                return Some(i + 1);
            }
        }
    }
    None
}

pub fn recall_oracle(runs: &[(Vec<String>, BTreeSet<String>)], k: usize) -> f64 {
    let mut hits = 0usize;
    for (ranked, golds) in runs {
        if let Some(r) = first_gold_rank(ranked, golds) {
            if r <= k {
                hits += 1;
            }
        }
    }
    hits as f64 * 100.0 / runs.len() as f64
}

pub fn mrr_oracle(runs: &[(Vec<String>, BTreeSet<String>)], window: usize) -> f64 {
    let mut total = 0.0;
    for (ranked, golds) in runs {
        if let Some(r) = first_gold_rank(ranked, golds) {
            if r <= window {
                total += 1.0 / r as f64;
            }
        }
    }
    total / runs.len() as f64
}

/// Hamilton apportionment by exhaustive search: among all allocations giving
/// each key its floor or floor + 1 with the right total, pick the one whose
/// +1 recipients have the lexicographically best (remainder desc, key asc)
/// profile.
pub fn hamilton_bruteforce(seats: usize, weights: &BTreeMap<String, usize>) -> BTreeMap<String, usize> {
    let keys: Vec<&String> = weights.keys().collect();
    let total: u128 = weights.values().map(|&w| w as u128).sum();
    if total == 0 {
        return keys.iter().map(|k| ((*k).clone(), 0)).collect();
    }
    let floors: Vec<usize> = keys
        .iter()
        .map(|k| (seats as u128 * weights[*k] as u128 / total) as usize)
        .collect();
    let rems: Vec<u128> = keys
        .iter()
        .map(|k| seats as u128 * weights[*k] as u128 % total)
        .collect();
    let extra = seats - floors.iter().sum::<usize>();
    let n = keys.len();
    assert!(n <= 16, "brute force only for small inputs");
    type Key = Vec<(std::cmp::Reverse<u128>, usize)>;
    let mut best: Option<(Key, u32)> = None;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != extra {
            continue;
        }
        let mut profile: Vec<(std::cmp::Reverse<u128>, usize)> = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| (std::cmp::Reverse(rems[i]), i))
            .collect();
        profile.sort();
        if best.as_ref().is_none_or(|(b, _)| profile < *b) {
            best = Some((profile, mask));
        }
    }
    let mask = best.map(|(_, m)| m).unwrap_or(0);
    keys.iter()
        .enumerate()
        .map(|(i, k)| ((*k).clone(), floors[i] + ((mask >> i) & 1) as usize))
        .collect()
}

/// Hamilton apportionment where keys whose share falls below their floor
/// are pinned at that floor and the rest re-apportioned.
pub fn bounded_apportionment_oracle(
    seats: usize,
    weights: &BTreeMap<String, usize>,
    floors: &BTreeMap<String, usize>,
) -> BTreeMap<String, usize> {
    let mut pinned: BTreeMap<String, usize> = BTreeMap::new();
    loop {
        let free: BTreeMap<String, usize> = weights
            .iter()
            .filter(|(k, _)| !pinned.contains_key(*k))
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        let left = seats - pinned.values().sum::<usize>();
        let alloc = hamilton_bruteforce(left, &free);
        let mut changed = false;
        for (k, n) in &alloc {
            let f = floors.get(k).copied().unwrap_or(0);
            if *n < f {
                pinned.insert(k.clone(), f);
                changed = true;
            }
        }
        if !changed {
            pinned.extend(alloc);
            return pinned;
        }
    }
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
