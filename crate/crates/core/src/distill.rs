//! Knowledge-base distillation: shrink a store to a target size while keeping
//! every gold article and the category distribution.
//!
//! Category counts come from a bounded largest-remainder (Hamilton)
//! apportionment. Each category's quota is floored at its number of gold
//! articles; categories whose gold count exceeds their quota are pinned to
//! that count and the remaining seats are re-apportioned over the others.
//! Non-gold seats inside a category are filled by seeded sampling without
//! replacement using SplitMix64, a 64-bit-state generator with a fixed,
//! platform-independent output sequence.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::corpus::{ArticleStore, QueryCase};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DistillError {
    #[error("target size {target} is smaller than the {golds} gold articles")]
    TargetTooSmall { target: usize, golds: usize },
    #[error("target size {target} exceeds the store size {store}")]
    TargetExceedsStore { target: usize, store: usize },
    #[error("gold article {0:?} is not in the store")]
    UnknownGold(String),
}

/// Hamilton apportionment of `seats` proportionally to `weights`.
///
/// Leftover seats go to the largest fractional remainders; equal remainders
/// favour the smaller key. Zero total weight yields all-zero quotas.
pub fn largest_remainder<K: Ord + Clone>(seats: usize, weights: &BTreeMap<K, usize>) -> BTreeMap<K, usize> {
    let total: u128 = weights.values().map(|&w| w as u128).sum();
    let mut out: BTreeMap<K, usize> = weights.keys().map(|k| (k.clone(), 0)).collect();
    if total == 0 {
        return out;
    }
    let mut remainders: Vec<(u128, &K)> = Vec::with_capacity(weights.len());
    let mut given = 0usize;
    for (k, &w) in weights {
        let num = seats as u128 * w as u128;
        let floor = (num / total) as usize;
        given += floor;
        *out.get_mut(k).unwrap() = floor;
        remainders.push((num % total, k));
    }
    // stable sort keeps key order among equal remainders
    remainders.sort_by_key(|r| core::cmp::Reverse(r.0));
    for (_, k) in remainders.into_iter().take(seats - given) {
        *out.get_mut(k).unwrap() += 1;
    }
    out
}

/// Largest-remainder apportionment with per-key lower bounds.
///
/// Requires `Σ floors ≤ seats ≤ Σ weights` and `floor[k] ≤ weight[k]`.
pub fn apportion_with_floors<K: Ord + Clone>(
    seats: usize,
    weights: &BTreeMap<K, usize>,
    floors: &BTreeMap<K, usize>,
) -> BTreeMap<K, usize> {
    let floor_of = |k: &K| floors.get(k).copied().unwrap_or(0);
    let mut pinned: BTreeMap<K, usize> = BTreeMap::new();
    loop {
        let free: BTreeMap<K, usize> = weights
            .iter()
            .filter(|(k, _)| !pinned.contains_key(*k))
            .map(|(k, &w)| (k.clone(), w))
            .collect();
        let remaining = seats - pinned.values().sum::<usize>();
        let alloc = largest_remainder(remaining, &free);
        let short: Vec<K> = alloc
            .iter()
            .filter(|(k, &n)| n < floor_of(k))
            .map(|(k, _)| k.clone())
            .collect();
        if short.is_empty() {
            pinned.extend(alloc);
            return pinned;
        }
        for k in short {
            let f = floor_of(&k);
            pinned.insert(k, f);
        }
    }
}

/// Per-category article counts the distilled store will have.
pub fn category_targets(
    store: &ArticleStore,
    gold_ids: &BTreeSet<&str>,
    target: usize,
) -> BTreeMap<String, usize> {
    let mut floors: BTreeMap<String, usize> = BTreeMap::new();
    for g in gold_ids {
        if let Some(a) = store.get(g) {
            *floors.entry(a.category.clone()).or_insert(0) += 1;
        }
    }
    apportion_with_floors(target, store.category_histogram(), &floors)
}

/// Distill `store` down to `target` articles, keeping every gold article of
/// `queries`. Articles keep their original relative order.
pub fn distill_kb(
    store: &ArticleStore,
    queries: &[QueryCase],
    target: usize,
    seed: u64,
) -> Result<ArticleStore, DistillError> {
    let mut gold_ids: BTreeSet<&str> = BTreeSet::new();
    for q in queries {
        for g in &q.gold_article_ids {
            if !store.contains(g) {
                return Err(DistillError::UnknownGold(g.clone()));
            }
            gold_ids.insert(g.as_str());
        }
    }
    if target > store.len() {
        return Err(DistillError::TargetExceedsStore {
            target,
            store: store.len(),
        });
    }
    if target < gold_ids.len() {
        return Err(DistillError::TargetTooSmall {
            target,
            golds: gold_ids.len(),
        });
    }

    let quotas = category_targets(store, &gold_ids, target);
    let mut pool: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut keep = alloc::vec![false; store.len()];
    for (i, a) in store.articles().iter().enumerate() {
        if gold_ids.contains(a.id.as_str()) {
            keep[i] = true;
        } else {
            pool.entry(a.category.as_str()).or_default().push(i);
        }
    }
    let mut gold_per_cat: BTreeMap<&str, usize> = BTreeMap::new();
    for g in &gold_ids {
        let cat = store.get(g).map(|a| a.category.as_str()).unwrap_or_default();
        *gold_per_cat.entry(cat).or_insert(0) += 1;
    }

    let mut rng = SplitMix64::seed_from_u64(seed);
    for (cat, &quota) in &quotas {
        let need = quota - gold_per_cat.get(cat.as_str()).copied().unwrap_or(0);
        if need == 0 {
            continue;
        }
        let candidates = pool.get_mut(cat.as_str()).expect("quota bounded by category size");
        // partial Fisher-Yates
        for j in 0..need {
            let pick = j + rng.gen_range(0..(candidates.len() - j) as u64) as usize;
            candidates.swap(j, pick);
            keep[candidates[j]] = true;
        }
    }

    let articles = store
        .articles()
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(a, _)| a.clone())
        .collect();
    Ok(ArticleStore::new(articles).expect("subset of a valid store"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::{article, query};
    use alloc::format;

    fn store_with(counts: &[(&str, usize)]) -> ArticleStore {
        let mut v = Vec::new();
        for (cat, n) in counts {
            for i in 0..*n {
                v.push(article(&format!("{cat}{i}"), cat));
            }
        }
        ArticleStore::new(v).unwrap()
    }

    #[test]
    fn hamilton_basic() {
        let w: BTreeMap<&str, usize> = [("A", 60), ("B", 40)].into_iter().collect();
        let a = largest_remainder(10, &w);
        assert_eq!((a["A"], a["B"]), (6, 4));
        let w: BTreeMap<&str, usize> = [("A", 1), ("B", 1), ("C", 1)].into_iter().collect();
        let a = largest_remainder(2, &w);
        assert_eq!((a["A"], a["B"], a["C"]), (1, 1, 0));
    }

    #[test]
    fn golds_in_one_category() {
        // {A:60, B:40}, 10 golds in A, target 20 -> A gets 12, B gets 8
        let s = store_with(&[("A", 60), ("B", 40)]);
        let golds: Vec<String> = (0..10).map(|i| format!("A{i}")).collect();
        let refs: Vec<&str> = golds.iter().map(String::as_str).collect();
        let qs = [query("q", &refs)];
        let out = distill_kb(&s, &qs, 20, 7).unwrap();
        assert_eq!(out.len(), 20);
        assert!(refs.iter().all(|g| out.contains(g)));
        assert_eq!(out.category_histogram()["A"], 12);
        assert_eq!(out.category_histogram()["B"], 8);
    }

    #[test]
    fn excess_golds_are_compensated_elsewhere() {
        let s = store_with(&[("A", 10), ("B", 45), ("C", 45)]);
        let golds: Vec<String> = (0..8).map(|i| format!("A{i}")).collect();
        let refs: Vec<&str> = golds.iter().map(String::as_str).collect();
        let out = distill_kb(&s, &[query("q", &refs)], 20, 1).unwrap();
        let h = out.category_histogram();
        assert_eq!((h["A"], h["B"], h["C"]), (8, 6, 6));
    }

    #[test]
    fn full_target_is_identity() {
        let s = store_with(&[("A", 7), ("B", 3)]);
        for seed in 0..5 {
            let out = distill_kb(&s, &[query("q", &["B1"])], s.len(), seed).unwrap();
            assert_eq!(out, s);
        }
    }

    #[test]
    fn errors() {
        let s = store_with(&[("A", 5)]);
        assert_eq!(
            distill_kb(&s, &[query("q", &["A0", "A1"])], 1, 0),
            Err(DistillError::TargetTooSmall { target: 1, golds: 2 })
        );
        assert_eq!(
            distill_kb(&s, &[], 6, 0),
            Err(DistillError::TargetExceedsStore { target: 6, store: 5 })
        );
        assert_eq!(
            distill_kb(&s, &[query("q", &["nope"])], 3, 0),
            Err(DistillError::UnknownGold("nope".into()))
        );
    }

    #[test]
    fn seed_determinism() {
        let s = store_with(&[("A", 30), ("B", 20), ("C", 9)]);
        let qs = [query("q1", &["A3"]), query("q2", &["C8", "B0"])];
        let a = distill_kb(&s, &qs, 17, 99).unwrap();
        let b = distill_kb(&s, &qs, 17, 99).unwrap();
        assert_eq!(a.ids(), b.ids());
        let c = distill_kb(&s, &qs, 17, 100).unwrap();
        assert_eq!(c.len(), 17);
    }
}
