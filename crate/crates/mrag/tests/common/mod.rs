//! Shared fixtures for the integration and acceptance tests.
#![allow(dead_code)]

use mrag::gateway::{Gateway, GatewayConfig};
use mrag::mock::{MockScript, MockServer};
use mrag::prompts::Prompts;
use mrag::records::RunLine;
use mrag::synth::Suite;
use mrag_core::modality::ModalityConfig;
use mrag_core::rank::RankedEntry;

pub fn mock(script: MockScript) -> MockServer {
    MockServer::start(script, "127.0.0.1:0").expect("mock server")
}

pub fn gateway(url: &str) -> Gateway {
    Gateway::new(GatewayConfig {
        base_url: url.into(),
        timeout_ms: 10_000,
        backoff_ms: 5,
        parallelism: 16,
        ..GatewayConfig::default()
    })
    .unwrap()
}

pub fn prompts() -> Prompts {
    Prompts::default().with_markers(true)
}

pub fn run_line(qid: &str, ids: &[String]) -> RunLine {
    RunLine {
        query_id: qid.into(),
        config: ModalityConfig::default(),
        entries: ids
            .iter()
            .enumerate()
            .map(|(r, a)| RankedEntry {
                article_id: a.clone(),
                score: 1.0 - r as f64 / 64.0,
            })
            .collect(),
    }
}

/// Runs over each query's group with the gold at the given 0-based position,
/// or with the gold swapped for a distractor when `None`.
pub fn runs_with(suite: &Suite, positions: &[Option<usize>]) -> Vec<RunLine> {
    let distractor = suite
        .articles
        .iter()
        .find(|a| a.id.starts_with('x'))
        .map(|a| a.id.clone())
        .expect("suite has distractors");
    suite
        .queries
        .iter()
        .zip(positions)
        .map(|(q, pos)| {
            let gold = &q.gold_article_ids[0];
            let mut ids: Vec<String> = suite.groups[&q.id].iter().filter(|a| *a != gold).cloned().collect();
            match pos {
                Some(p) => ids.insert((*p).min(ids.len()), gold.clone()),
                None => ids.push(distractor.clone()),
            }
            run_line(&q.id, &ids)
        })
        .collect()
}
