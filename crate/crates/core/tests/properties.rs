mod oracles;

use std::collections::{BTreeMap, BTreeSet};

use mrag_core::corpus::{Article, ArticleStore, QueryCase, Section};
use mrag_core::distill::{category_targets, distill_kb, largest_remainder};
use mrag_core::index::{IndexEntry, VectorIndex};
use mrag_core::metrics::{lcs_len, mrr, recall_at_k, rouge_l, RetrievalRun};
use mrag_core::rank::retrieve;
use mrag_core::rerank::{apply_window, is_permutation, parse_listwise};
use mrag_core::{fuse, ModalityConfig};
use proptest::prelude::*;

fn build(rows: &[Vec<f32>], articles: &[String]) -> VectorIndex {
    VectorIndex::build(
        rows.iter()
            .enumerate()
            .map(|(i, v)| IndexEntry {
                unit_id: format!("u{i}"),
                article_id: articles[i].clone(),
                vector: v.clone(),
            })
            .collect(),
    )
    .unwrap()
}

fn matrix(max_rows: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f32>>> {
    // coarse grid so exact ties actually occur
    prop::collection::vec(prop::collection::vec((-4i8..=4).prop_map(|x| x as f32 * 0.25), dim), 1..max_rows)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn top_k_matches_full_sort(rows in matrix(120, 6), q in prop::collection::vec(-1.0f32..1.0, 6), k in 1usize..20) {
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("a{}", i % 7)).collect();
        let idx = build(&rows, &ids);
        let got: Vec<(usize, f64)> = idx.top_k_units(&q, k).unwrap().into_iter().map(|h| (h.row, h.score)).collect();
        prop_assert_eq!(got, oracles::naive_top_k(&rows, &q, k));
    }

    #[test]
    fn top_k_prefix_property(rows in matrix(80, 4), q in prop::collection::vec(-1.0f32..1.0, 4), k1 in 1usize..10, extra in 0usize..10) {
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("a{i}")).collect();
        let idx = build(&rows, &ids);
        let short = idx.top_k_units(&q, k1).unwrap();
        let long = idx.top_k_units(&q, k1 + extra).unwrap();
        prop_assert_eq!(&long[..short.len()], &short[..]);
        // repeated search is idempotent
        prop_assert_eq!(idx.top_k_units(&q, k1).unwrap(), short);
    }

    #[test]
    fn unit_scores_bounded(rows in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 8), 1..50), q in prop::collection::vec(-1.0f32..1.0, 8)) {
        let rows: Vec<Vec<f32>> = rows.into_iter().filter_map(|r| mrag_core::fusion::normalize(&r).ok()).collect();
        prop_assume!(!rows.is_empty());
        let q = match mrag_core::fusion::normalize(&q) { Ok(q) => q, Err(_) => return Ok(()) };
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("a{i}")).collect();
        let idx = build(&rows, &ids);
        for h in idx.top_k_units(&q, rows.len()).unwrap() {
            prop_assert!(h.score.abs() <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn index_bytes_round_trip(rows in prop::collection::vec(prop::collection::vec(any::<f32>(), 3), 1..20)) {
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("article-{i}")).collect();
        let idx = build(&rows, &ids);
        let back = VectorIndex::from_bytes(&idx.to_bytes()).unwrap();
        // bit-exact, including NaN payloads
        for i in 0..idx.rows() {
            let a: Vec<u32> = idx.row(i).iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = back.row(i).iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(idx.unit_id(i), back.unit_id(i));
            prop_assert_eq!(idx.article_id(i), back.article_id(i));
        }
    }

    #[test]
    fn retrieve_matches_dedup_oracle(rows in matrix(200, 5), q in prop::collection::vec(-1.0f32..1.0, 5), k in 1usize..12, articles in 1usize..40) {
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("a{:02}", (i * 7) % articles)).collect();
        let idx = build(&rows, &ids);
        let got: Vec<(String, f64)> = retrieve(&idx, "q", ModalityConfig::default(), &q, k)
            .unwrap()
            .entries
            .into_iter()
            .map(|e| (e.article_id, e.score))
            .collect();
        prop_assert_eq!(got, oracles::naive_article_ranking(&rows, &ids, &q, k));
    }

    #[test]
    fn fusion_decomposes_into_cross_terms(
        qv in prop::collection::vec(-1.0f32..1.0, 16), qt in prop::collection::vec(-1.0f32..1.0, 16),
        cv in prop::collection::vec(-1.0f32..1.0, 16), ct in prop::collection::vec(-1.0f32..1.0, 16),
    ) {
        let (Ok(q), Ok(c)) = (fuse(Some(&qv), Some(&qt)), fuse(Some(&cv), Some(&ct))) else { return Ok(()) };
        let n = |v: &[f32]| { let s: f64 = v.iter().map(|&x| x as f64 * x as f64).sum(); v.iter().map(|&x| x as f64 / s.sqrt()).collect::<Vec<f64>>() };
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let (qv, qt, cv, ct) = (n(&qv), n(&qt), n(&cv), n(&ct));
        let expected = d(&qv, &cv) + d(&qv, &ct) + d(&qt, &cv) + d(&qt, &ct);
        let got: f64 = q.vector.iter().zip(&c.vector).map(|(&a, &b)| a as f64 * b as f64).sum();
        prop_assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
    }

    #[test]
    fn rouge_matches_dp_oracle(a in prop::collection::vec(0u8..6, 0..30), b in prop::collection::vec(0u8..6, 0..30)) {
        let words = ["the", "Cat", "sat", "on", "mat", "x9"];
        let sa: Vec<&str> = a.iter().map(|&i| words[i as usize]).collect();
        let sb: Vec<&str> = b.iter().map(|&i| words[i as usize]).collect();
        let (sa, sb) = (sa.join(" "), sb.join(", "));
        prop_assert_eq!(rouge_l(&sa, &[&sb]), oracles::rouge_l_oracle(&sa, &[&sb]));
        prop_assert_eq!(lcs_len(&a, &b), oracles::lcs_dp(&a, &b));
    }

    #[test]
    fn rouge_self_and_whitespace(words in prop::collection::vec("[a-zA-Z0-9]{1,6}", 1..10)) {
        let s = words.join(" ");
        prop_assert_eq!(rouge_l(&s, &[&s]), 1.0);
        let padded = format!("  {}\t", s.to_uppercase());
        prop_assert_eq!(rouge_l(&padded, &[&s]), 1.0);
    }

    #[test]
    fn listwise_parser_always_permutes(text in ".{0,80}", n in 1usize..12) {
        let (order, fallback) = parse_listwise(&text, n);
        prop_assert!(is_permutation(&order, n));
        if fallback {
            prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn window_tail_untouched(n in 1usize..6, tail in 0usize..6, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n + tail).collect();
        let mut order: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let out = apply_window(&items, &order);
        prop_assert_eq!(&out[n..], &items[n..]);
        prop_assert_eq!(&out[..n], &order[..]);
    }

    #[test]
    fn metric_invariants(golds in prop::collection::vec(prop::option::of(1usize..12), 1..40), w in 1usize..10) {
        let runs: Vec<RetrievalRun> = golds.iter().enumerate().map(|(i, g)| {
            let ranked: Vec<String> = (1..=10).map(|r| format!("q{i}d{r}")).collect();
            let gold = match g { Some(r) => format!("q{i}d{r}"), None => "absent".into() };
            RetrievalRun { query_id: format!("q{i}"), ranked_article_ids: ranked, gold_article_ids: [gold].into() }
        }).collect();
        let mut prev = 0.0;
        for k in 1..=12 {
            let r = recall_at_k(&runs, k).unwrap();
            prop_assert!(r >= prev && (0.0..=100.0).contains(&r));
            prev = r;
        }
        let m = mrr(&runs, w).unwrap();
        prop_assert!(m <= recall_at_k(&runs, w).unwrap() / 100.0 + 1e-12);
        prop_assert!(m >= recall_at_k(&runs, 1).unwrap() / 100.0 - 1e-12);
    }
}

fn article(id: String, cat: &str) -> Article {
    Article {
        title: id.clone(),
        sections: vec![Section { heading: "h".into(), text: "t".into() }],
        image_refs: vec![],
        category: cat.into(),
        id,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hamilton_matches_bruteforce(weights in prop::collection::vec(0usize..50, 1..8), seats in 0usize..80) {
        let w: BTreeMap<String, usize> = weights.iter().enumerate().map(|(i, &x)| (format!("c{i}"), x)).collect();
        prop_assume!(w.values().sum::<usize>() > 0);
        prop_assert_eq!(largest_remainder(seats, &w), oracles::hamilton_bruteforce(seats, &w));
    }

    #[test]
    fn distillation_contract(
        cats in prop::collection::vec(1usize..25, 1..6),
        gold_picks in prop::collection::vec(any::<prop::sample::Index>(), 0..15),
        target_frac in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let mut arts = vec![];
        for (c, &n) in cats.iter().enumerate() {
            for i in 0..n {
                arts.push(article(format!("c{c}-{i}"), &format!("cat{c}")));
            }
        }
        let store = ArticleStore::new(arts.clone()).unwrap();
        let golds: BTreeSet<String> = gold_picks.iter().map(|ix| arts[ix.index(arts.len())].id.clone()).collect();
        let queries: Vec<QueryCase> = golds.iter().enumerate().map(|(i, g)| QueryCase {
            id: format!("q{i}"), image_ref: "x".into(), question: "?".into(),
            reference_answers: vec!["a".into()], gold_article_ids: vec![g.clone()], category: "c".into(),
        }).collect();
        let lo = golds.len();
        let target = lo + ((store.len() - lo) as f64 * target_frac) as usize;

        let out = distill_kb(&store, &queries, target, seed).unwrap();
        prop_assert_eq!(out.len(), target);
        for g in &golds {
            prop_assert!(out.contains(g));
        }
        let again = distill_kb(&store, &queries, target, seed).unwrap();
        prop_assert_eq!(again.ids(), out.ids());

        let mut floors: BTreeMap<String, usize> = BTreeMap::new();
        for g in &golds {
            *floors.entry(store.get(g).unwrap().category.clone()).or_default() += 1;
        }
        let expected = oracles::bounded_apportionment_oracle(target, store.category_histogram(), &floors);
        let got: BTreeMap<String, usize> = store
            .category_histogram()
            .keys()
            .map(|c| (c.clone(), out.category_histogram().get(c).copied().unwrap_or(0)))
            .collect();
        prop_assert_eq!(&got, &expected);
        let gold_refs: BTreeSet<&str> = golds.iter().map(String::as_str).collect();
        prop_assert_eq!(category_targets(&store, &gold_refs, target), expected);

        // proportionality holds within one seat wherever golds fit their quota
        let quotas = largest_remainder(target, store.category_histogram());
        if floors.iter().all(|(c, f)| *f <= quotas[c]) {
            for (c, &h) in store.category_histogram() {
                let exact = target as f64 * h as f64 / store.len() as f64;
                prop_assert!((got[c] as f64 - exact).abs() <= 1.0);
            }
        }

        if target == store.len() {
            prop_assert_eq!(out, store);
        }
    }
}
