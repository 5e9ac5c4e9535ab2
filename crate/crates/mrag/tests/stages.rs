//! Re-rank, agent and generation stages against the mock server.

mod common;

use mrag::agent::{run_query, self_reflect, AgentError};
use mrag::eval::judge;
use mrag::generate::generate_answer;
use mrag::mock::{MockScript, Rule, FALLBACK};
use mrag::rerank::{rerank_listwise, rerank_pairwise, rerank_run, RerankOptions, RerankWindow};
use mrag::synth::{generate, SynthParams};
use mrag_core::agent::{AgentConfig, Outcome, FAIL_SENTINEL};
use mrag_core::corpus::{Article, ArticleStore, QueryCase, Section};
use mrag_core::generate::{build_context, GenCondition};
use mrag_core::metrics::Verdict;
use mrag_core::rerank::{identity, Strategy};

fn article(id: &str) -> Article {
    Article {
        id: id.into(),
        title: format!("Title {id}"),
        sections: vec![Section {
            heading: "Intro".into(),
            text: format!("Body of {id}."),
        }],
        image_refs: vec![format!("img/{id}.jpg")],
        category: "birds".into(),
    }
}

fn store(n: usize) -> ArticleStore {
    ArticleStore::new((0..n).map(|i| article(&format!("a{i}"))).collect()).unwrap()
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("a{i}")).collect()
}

fn query() -> QueryCase {
    QueryCase {
        id: "q1".into(),
        image_ref: "img/q1.jpg".into(),
        question: "Which bird is this?".into(),
        reference_answers: vec!["robin".into()],
        gold_article_ids: vec!["a2".into()],
        category: "birds".into(),
    }
}

fn rule(substring: &str, respond: &str) -> Rule {
    Rule {
        substring: Some(substring.into()),
        pattern: None,
        respond: respond.into(),
    }
}

fn window(n: usize) -> RerankWindow {
    RerankWindow::from_ranking("q1", &ids(n), n, &store(n)).unwrap()
}

#[test]
fn listwise_applies_the_returned_permutation() {
    let server = common::mock(MockScript {
        rules: vec![rule("TASK=listwise", "[2] > [1] > [3]")],
        ..MockScript::default()
    });
    let gw = common::gateway(&server.url());
    let out = rerank_listwise(&gw, &common::prompts(), &query(), &window(3), &RerankOptions::default()).unwrap();
    assert_eq!(out.order, vec![1, 0, 2]);
    assert!(!out.parse_fallback);
    assert_eq!(out.call_count, 1);
    assert_eq!(server.request_count(), 1);
}

#[test]
fn single_candidate_windows_make_no_calls() {
    let server = common::mock(MockScript::default());
    let gw = common::gateway(&server.url());
    let w = window(1);
    let opts = RerankOptions::default();
    let l = rerank_listwise(&gw, &common::prompts(), &query(), &w, &opts).unwrap();
    let p = rerank_pairwise(&gw, &common::prompts(), &query(), &w, &opts).unwrap();
    assert_eq!((l.order, l.call_count), (vec![0], 0));
    assert_eq!((p.order, p.call_count), (vec![0], 0));
    assert_eq!(server.request_count(), 0);
}

#[test]
fn unparseable_pairwise_keeps_the_window() {
    let server = common::mock(MockScript {
        rules: vec![rule("TASK=pairwise", "hard to say")],
        ..MockScript::default()
    });
    let gw = common::gateway(&server.url());
    let out = rerank_pairwise(&gw, &common::prompts(), &query(), &window(4), &RerankOptions::default()).unwrap();
    assert_eq!(out.order, identity(4));
    assert!(out.parse_fallback);
    assert_eq!(out.call_count, 6);
}

#[test]
fn pairwise_call_counts() {
    let server = common::mock(MockScript {
        relevance: [("q1".to_string(), [("a3".to_string(), true)].into())].into(),
        ..MockScript::default()
    });
    let gw = common::gateway(&server.url());
    let mut opts = RerankOptions::default();
    let out = rerank_pairwise(&gw, &common::prompts(), &query(), &window(5), &opts).unwrap();
    assert_eq!(out.call_count, 10);
    assert_eq!(out.order[0], 3);
    assert_eq!(server.task_counts()["pairwise"], 10);
    opts.pairwise_debias = true;
    let out = rerank_pairwise(&gw, &common::prompts(), &query(), &window(5), &opts).unwrap();
    assert_eq!(out.call_count, 20);
    assert_eq!(out.order[0], 3);
}

#[test]
fn pointwise_orders_by_cosine_and_keeps_the_tail() {
    let server = common::mock(MockScript::default());
    let gw = common::gateway(&server.url());
    let s = store(7);
    let run = common::run_line("q1", &ids(7));
    let qv = [1.0f32, 0.0, 0.0];
    let cands: Vec<Vec<f32>> = vec![
        vec![0.1, 1.0, 0.0],
        vec![2.0, 0.1, 0.0],
        vec![-1.0, 0.0, 0.0],
        vec![0.5, 0.5, 0.0],
        vec![0.9, 0.0, 0.3],
    ];
    let opts = RerankOptions::default();
    let rec = rerank_run(
        &gw,
        &common::prompts(),
        &s,
        &query(),
        &run,
        Strategy::Pointwise,
        &opts,
        Some((&qv, &cands)),
    )
    .unwrap();
    // cosines with the x axis: a0 .0995, a1 .9988, a2 -1, a3 .7071, a4 .9487
    let got: Vec<&str> = rec.entries.iter().map(|e| e.article_id.as_str()).collect();
    assert_eq!(got, ["a1", "a4", "a3", "a0", "a2", "a5", "a6"]);
    assert_eq!(server.request_count(), 0);
    let missing = rerank_run(&gw, &common::prompts(), &s, &query(), &run, Strategy::Pointwise, &opts, None);
    assert!(missing.is_err());
}

fn agent_script(relevant: &[&str], answers: &[(&str, &str)]) -> MockScript {
    MockScript {
        relevance: [(
            "q1".to_string(),
            relevant.iter().map(|a| (a.to_string(), true)).collect(),
        )]
        .into(),
        answers: answers.iter().map(|(a, s)| (a.to_string(), s.to_string())).collect(),
        ..MockScript::default()
    }
}

#[test]
fn agent_answers_from_the_first_relevant_document() {
    let server = common::mock(agent_script(&["a2"], &[("a2", "robin")]));
    let gw = common::gateway(&server.url());
    let t = run_query(&gw, &common::prompts(), &store(5), &query(), &ids(5), &AgentConfig::default()).unwrap();
    assert_eq!(
        t.outcome,
        Outcome::Answered {
            answer: "robin".into(),
            doc_index: 2
        }
    );
    assert_eq!(t.answer, "robin");
    let counts = server.task_counts();
    assert_eq!((counts["relevance"], counts["generate"], counts["reflect"]), (3, 1, 1));
}

#[test]
fn agent_without_relevant_documents_fails() {
    let server = common::mock(agent_script(&[], &[]));
    let gw = common::gateway(&server.url());
    let cfg = AgentConfig {
        max_docs: 4,
        ..AgentConfig::default()
    };
    let t = run_query(&gw, &common::prompts(), &store(6), &query(), &ids(6), &cfg).unwrap();
    assert_eq!(t.outcome, Outcome::Failed);
    assert_eq!(t.answer, FAIL_SENTINEL);
    assert_eq!(t.steps.len(), 4);
    assert_eq!(server.task_counts().get("generate"), None);
}

#[test]
fn agent_moves_on_after_a_rejected_reflection() {
    let server = common::mock(agent_script(&["a1", "a3"], &[("a3", "robin")]));
    let gw = common::gateway(&server.url());
    let t = run_query(&gw, &common::prompts(), &store(5), &query(), &ids(5), &AgentConfig::default()).unwrap();
    assert_eq!(t.steps[1].tentative_answer.as_deref(), Some(FALLBACK));
    assert_eq!(t.steps[1].reflection_verdict, Some(false));
    assert_eq!(
        t.outcome,
        Outcome::Answered {
            answer: "robin".into(),
            doc_index: 3
        }
    );
    let counts = server.task_counts();
    assert_eq!((counts["relevance"], counts["generate"], counts["reflect"]), (4, 2, 2));
}

#[test]
fn empty_tentative_answers_abort() {
    let server = common::mock(MockScript {
        rules: vec![rule("TASK=generate", "   ")],
        ..agent_script(&["a0"], &[])
    });
    let gw = common::gateway(&server.url());
    let err = run_query(&gw, &common::prompts(), &store(3), &query(), &ids(3), &AgentConfig::default()).unwrap_err();
    assert!(matches!(err.error, AgentError::InvalidTentative));
    assert!(err.transcript.aborted);
    assert_eq!(server.task_counts().get("reflect"), None);
    let doc = build_context(&ids(1), &[], GenCondition::Retrieved { k: 1, reranked: false }, &store(1)).unwrap();
    assert!(matches!(
        self_reflect(&gw, &common::prompts(), &query(), &doc[0], ""),
        Err(AgentError::InvalidTentative)
    ));
}

#[test]
fn context_follows_the_ranking_order() {
    let server = common::mock(MockScript::default());
    let gw = common::gateway(&server.url());
    let ranking: Vec<String> = ["a3", "a0", "a2"].map(String::from).to_vec();
    let cond = GenCondition::Retrieved { k: 2, reranked: false };
    let blocks = build_context(&ranking, &[], cond, &store(4)).unwrap();
    let rec = generate_answer(&gw, &common::prompts(), &query(), &blocks, cond).unwrap();
    assert_eq!(rec.context_article_ids, ["a3", "a0"]);
    let prompt = server.log()[0].prompt.clone().unwrap();
    let d1 = prompt.find("----- Document 1 -----\n@@ AID=a3").unwrap();
    let d2 = prompt.find("----- Document 2 -----\n@@ AID=a0").unwrap();
    assert!(d1 < d2);
    assert!(!prompt.contains("a2"));
}

#[test]
fn gold_context_beats_retrieval_and_no_context_scores_zero() {
    let suite = generate(&SynthParams {
        queries: 12,
        ..SynthParams::default()
    });
    let server = common::mock(suite.script.clone());
    let gw = common::gateway(&server.url());
    let prompts = common::prompts();
    let s = ArticleStore::new(suite.articles.clone()).unwrap();
    let positions: Vec<Option<usize>> = (0..12).map(|i| Some(i % 3)).collect();
    let runs = common::runs_with(&suite, &positions);
    let accuracy = |cond: GenCondition| {
        let mut correct = 0;
        for (q, run) in suite.queries.iter().zip(&runs) {
            let blocks = build_context(&run.article_ids(), &q.gold_article_ids, cond, &s).unwrap();
            let rec = generate_answer(&gw, &prompts, q, &blocks, cond).unwrap();
            let v = judge(&gw, &prompts, "judge", &q.question, &q.reference_answers, &rec.answer).unwrap();
            correct += usize::from(v.verdict == Verdict::Correct);
        }
        correct
    };
    let gold = accuracy(GenCondition::Gold);
    let top1 = accuracy(GenCondition::Retrieved { k: 1, reranked: false });
    let none = accuracy(GenCondition::NoRetrieval);
    // gold sits at rank 1 for every third query
    assert_eq!((gold, top1, none), (12, 4, 0));
}
