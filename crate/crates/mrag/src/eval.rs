//! Judging and report assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use mrag_core::corpus::QueryCase;
use mrag_core::metrics::{mrr, parse_verdict, recall_at_k, rouge_l, MetricError, RetrievalRun, Verdict};
use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError};
use crate::prompts::Prompts;
use crate::records::{AnswerLine, RunLine, VerdictRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeOutcome {
    pub verdict: Verdict,
    pub parse_fallback: bool,
}

pub fn judge(
    gw: &Gateway,
    prompts: &Prompts,
    judge_name: &str,
    question: &str,
    reference_answers: &[String],
    answer: &str,
) -> Result<JudgeOutcome, GatewayError> {
    let text = gw.chat(&prompts.judge(judge_name, question, reference_answers, answer))?;
    let (verdict, parse_fallback) = parse_verdict(&text);
    if parse_fallback {
        tracing::warn!(judge = judge_name, response = %text, "unparseable judge verdict");
    }
    Ok(JudgeOutcome { verdict, parse_fallback })
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("query id mismatch: {0}")]
    KeyMismatch(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Metrics of one retrieval run and, optionally, one answer set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    /// Cutoff K to percent.
    pub recall_at: BTreeMap<usize, f64>,
    pub mrr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
    /// Judge name to percent of answers judged correct.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub judge_accuracy: BTreeMap<String, f64>,
}

/// `row − baseline`, field by field, for fields present in both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub recall_at: BTreeMap<usize, f64>,
    pub mrr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub judge_accuracy: BTreeMap<String, f64>,
}

impl MetricDelta {
    pub fn between(row: &MetricRow, baseline: &MetricRow) -> Self {
        Self {
            recall_at: row
                .recall_at
                .iter()
                .filter_map(|(k, v)| baseline.recall_at.get(k).map(|b| (*k, v - b)))
                .collect(),
            mrr: row.mrr - baseline.mrr,
            rouge_l: row.rouge_l.zip(baseline.rouge_l).map(|(a, b)| a - b),
            judge_accuracy: row
                .judge_accuracy
                .iter()
                .filter_map(|(j, v)| baseline.judge_accuracy.get(j).map(|b| (j.clone(), v - b)))
                .collect(),
        }
    }
}

/// Generation-only metrics of an extra answer set (e.g. agent answers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerMetrics {
    pub rouge_l: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub judge_accuracy: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerQueryRow {
    pub query_id: String,
    /// 1-based rank of the first gold article in the main run.
    pub first_gold_rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_first_gold_rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub verdicts: BTreeMap<String, Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub queries: usize,
    /// MRR counts the first gold only within this many positions.
    pub mrr_window: usize,
    pub main: MetricRow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<MetricRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<MetricDelta>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra_answers: BTreeMap<String, AnswerMetrics>,
    pub per_query: Vec<PerQueryRow>,
}

/// One side of the comparison: a run plus an optional answer set and the
/// verdicts given to those answers.
#[derive(Debug, Clone, Copy)]
pub struct RowInput<'a> {
    pub name: &'a str,
    pub runs: &'a [RunLine],
    pub answers: Option<&'a [AnswerLine]>,
    pub verdicts: &'a [VerdictRecord],
}

#[derive(Debug, Clone, Copy)]
pub struct AnswerSetInput<'a> {
    pub name: &'a str,
    pub answers: &'a [AnswerLine],
    pub verdicts: &'a [VerdictRecord],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportOptions {
    pub ks: Vec<usize>,
    pub mrr_window: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10],
            mrr_window: mrag_core::rerank::DEFAULT_WINDOW,
        }
    }
}

fn check_keys<'a>(what: &str, expected: &BTreeSet<&str>, got: impl Iterator<Item = &'a str>) -> Result<(), EvalError> {
    let mut seen = BTreeSet::new();
    for id in got {
        if !expected.contains(id) {
            return Err(EvalError::KeyMismatch(format!("{what} has unknown query {id:?}")));
        }
        if !seen.insert(id) {
            return Err(EvalError::KeyMismatch(format!("{what} repeats query {id:?}")));
        }
    }
    if let Some(missing) = expected.iter().find(|id| !seen.contains(*id)) {
        return Err(EvalError::KeyMismatch(format!("{what} is missing query {missing:?}")));
    }
    Ok(())
}

struct GenScores {
    rouge: BTreeMap<String, f64>,
    verdicts: BTreeMap<String, BTreeMap<String, Verdict>>,
    rouge_mean: f64,
    accuracy: BTreeMap<String, f64>,
}

fn score_answers(
    what: &str,
    queries: &BTreeMap<&str, &QueryCase>,
    answers: &[AnswerLine],
    verdicts: &[VerdictRecord],
) -> Result<GenScores, EvalError> {
    let ids: BTreeSet<&str> = queries.keys().copied().collect();
    check_keys(what, &ids, answers.iter().map(|a| a.query_id.as_str()))?;
    let mut rouge = BTreeMap::new();
    for a in answers {
        rouge.insert(a.query_id.clone(), rouge_l(&a.answer, &queries[a.query_id.as_str()].reference_answers));
    }
    let mut by_judge: BTreeMap<&str, Vec<&VerdictRecord>> = BTreeMap::new();
    for v in verdicts {
        by_judge.entry(v.judge.as_str()).or_default().push(v);
    }
    let mut per_query: BTreeMap<String, BTreeMap<String, Verdict>> = BTreeMap::new();
    let mut accuracy = BTreeMap::new();
    for (judge, vs) in by_judge {
        check_keys(&format!("{what} verdicts of {judge}"), &ids, vs.iter().map(|v| v.query_id.as_str()))?;
        let correct = vs.iter().filter(|v| v.verdict == Verdict::Correct).count();
        accuracy.insert(judge.to_string(), 100.0 * correct as f64 / ids.len() as f64);
        for v in vs {
            per_query
                .entry(v.query_id.clone())
                .or_default()
                .insert(judge.to_string(), v.verdict);
        }
    }
    // fold in query-id order so the mean is reproducible
    let rouge_mean = rouge.values().sum::<f64>() / ids.len() as f64;
    Ok(GenScores {
        rouge,
        verdicts: per_query,
        rouge_mean,
        accuracy,
    })
}

fn retrieval_runs(
    what: &str,
    queries: &BTreeMap<&str, &QueryCase>,
    runs: &[RunLine],
) -> Result<Vec<RetrievalRun>, EvalError> {
    let ids: BTreeSet<&str> = queries.keys().copied().collect();
    check_keys(what, &ids, runs.iter().map(|r| r.query_id.as_str()))?;
    let mut out: Vec<RetrievalRun> = runs
        .iter()
        .map(|r| RetrievalRun {
            query_id: r.query_id.clone(),
            ranked_article_ids: r.article_ids(),
            gold_article_ids: queries[r.query_id.as_str()].gold_article_ids.iter().cloned().collect(),
        })
        .collect();
    out.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    Ok(out)
}

fn metric_row(
    queries: &BTreeMap<&str, &QueryCase>,
    input: &RowInput<'_>,
    opts: &ReportOptions,
) -> Result<(MetricRow, Vec<RetrievalRun>, Option<GenScores>), EvalError> {
    let runs = retrieval_runs(&format!("run {}", input.name), queries, input.runs)?;
    let mut recall_at = BTreeMap::new();
    for &k in &opts.ks {
        recall_at.insert(k, recall_at_k(&runs, k)?);
    }
    let gen = match input.answers {
        Some(a) => Some(score_answers(&format!("answers of {}", input.name), queries, a, input.verdicts)?),
        None if !input.verdicts.is_empty() => {
            return Err(EvalError::KeyMismatch(format!("verdicts for {} without answers", input.name)))
        }
        None => None,
    };
    let row = MetricRow {
        name: input.name.to_string(),
        recall_at,
        mrr: mrr(&runs, opts.mrr_window)?,
        rouge_l: gen.as_ref().map(|g| g.rouge_mean),
        judge_accuracy: gen.as_ref().map(|g| g.accuracy.clone()).unwrap_or_default(),
    };
    Ok((row, runs, gen))
}

/// Aggregate every metric over `queries`. All inputs must cover exactly the
/// same query ids.
pub fn build_report(
    queries: &[QueryCase],
    main: RowInput<'_>,
    baseline: Option<RowInput<'_>>,
    extra: &[AnswerSetInput<'_>],
    opts: &ReportOptions,
) -> Result<EvalReport, EvalError> {
    let by_id: BTreeMap<&str, &QueryCase> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
    if by_id.len() != queries.len() {
        return Err(EvalError::KeyMismatch("duplicate query ids".into()));
    }
    if opts.ks.is_empty() {
        return Err(EvalError::Metric(MetricError::InvalidCutoff));
    }
    let (main_row, main_runs, main_gen) = metric_row(&by_id, &main, opts)?;
    let base = baseline.map(|b| metric_row(&by_id, &b, opts)).transpose()?;
    let mut extra_answers = BTreeMap::new();
    for e in extra {
        let g = score_answers(&format!("answers of {}", e.name), &by_id, e.answers, e.verdicts)?;
        extra_answers.insert(
            e.name.to_string(),
            AnswerMetrics {
                rouge_l: g.rouge_mean,
                judge_accuracy: g.accuracy,
            },
        );
    }
    let base_ranks: BTreeMap<&str, Option<usize>> = base
        .as_ref()
        .map(|(_, runs, _)| runs.iter().map(|r| (r.query_id.as_str(), r.first_gold_rank())).collect())
        .unwrap_or_default();
    let per_query = main_runs
        .iter()
        .map(|r| PerQueryRow {
            query_id: r.query_id.clone(),
            first_gold_rank: r.first_gold_rank(),
            baseline_first_gold_rank: base_ranks.get(r.query_id.as_str()).copied().flatten(),
            rouge_l: main_gen.as_ref().map(|g| g.rouge[&r.query_id]),
            verdicts: main_gen
                .as_ref()
                .and_then(|g| g.verdicts.get(&r.query_id).cloned())
                .unwrap_or_default(),
        })
        .collect();
    let delta = base.as_ref().map(|(b, _, _)| MetricDelta::between(&main_row, b));
    Ok(EvalReport {
        queries: queries.len(),
        mrr_window: opts.mrr_window,
        main: main_row,
        baseline: base.map(|(b, _, _)| b),
        delta,
        extra_answers,
        per_query,
    })
}

/// Signed two-decimal rendering used for deltas.
pub fn fmt_delta(d: f64) -> String {
    format!("{d:+.2}")
}

/// Plain-text table: one line per row, deltas against the baseline in
/// parentheses.
pub fn render_table(report: &EvalReport) -> String {
    let main = &report.main;
    let judges: Vec<&String> = main.judge_accuracy.keys().collect();
    let mut header = vec![format!("{:<16}", "run")];
    header.extend(main.recall_at.keys().map(|k| format!("{:>18}", format!("R@{k}"))));
    header.push(format!("{:>18}", format!("MRR@{}", report.mrr_window)));
    if main.rouge_l.is_some() {
        header.push(format!("{:>18}", "ROUGE-L"));
    }
    header.extend(judges.iter().map(|j| format!("{:>18}", format!("acc[{j}]"))));
    let mut out = header.join("") + "\n";

    let cell = |v: f64, d: Option<f64>, pct: bool| {
        let v = if pct { format!("{v:.2}") } else { format!("{v:.4}") };
        match d {
            Some(d) if pct => format!("{:>18}", format!("{v} ({})", fmt_delta(d))),
            Some(d) => format!("{:>18}", format!("{v} ({d:+.4})")),
            None => format!("{v:>18}"),
        }
    };
    let line = |row: &MetricRow, delta: Option<&MetricDelta>| {
        let mut s = format!("{:<16}", row.name);
        for (k, v) in &row.recall_at {
            s.push_str(&cell(*v, delta.and_then(|d| d.recall_at.get(k).copied()), true));
        }
        s.push_str(&cell(row.mrr, delta.map(|d| d.mrr), false));
        if main.rouge_l.is_some() {
            match row.rouge_l {
                Some(r) => s.push_str(&cell(r, delta.and_then(|d| d.rouge_l), false)),
                None => s.push_str(&format!("{:>18}", "-")),
            }
        }
        for j in &judges {
            match row.judge_accuracy.get(*j) {
                Some(a) => s.push_str(&cell(*a, delta.and_then(|d| d.judge_accuracy.get(*j).copied()), true)),
                None => s.push_str(&format!("{:>18}", "-")),
            }
        }
        s + "\n"
    };
    if let Some(b) = &report.baseline {
        out.push_str(&line(b, None));
    }
    out.push_str(&line(main, report.delta.as_ref()));
    for (name, m) in &report.extra_answers {
        let _ = write!(out, "{:<16}answers: ROUGE-L {:.4}", name, m.rouge_l);
        for (j, a) in &m.judge_accuracy {
            let _ = write!(out, ", acc[{j}] {a:.2}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use mrag_core::modality::ModalityConfig;
    use mrag_core::rank::RankedEntry;

    fn q(id: &str, gold: &str, answer: &str) -> QueryCase {
        QueryCase {
            id: id.into(),
            image_ref: format!("{id}.jpg"),
            question: "?".into(),
            reference_answers: vec![answer.into()],
            gold_article_ids: vec![gold.into()],
            category: "c".into(),
        }
    }

    fn run(id: &str, ranked: &[&str]) -> RunLine {
        RunLine {
            query_id: id.into(),
            config: ModalityConfig::default(),
            entries: ranked
                .iter()
                .enumerate()
                .map(|(i, a)| RankedEntry {
                    article_id: (*a).into(),
                    score: -(i as f64),
                })
                .collect(),
        }
    }

    fn queries() -> Vec<QueryCase> {
        vec![q("q1", "g1", "red fox"), q("q2", "g2", "blue jay"), q("q3", "g3", "owl")]
    }

    #[test]
    fn self_baseline_has_zero_deltas() {
        let runs = vec![run("q1", &["g1", "x"]), run("q2", &["x", "g2"]), run("q3", &["x", "y"])];
        let input = RowInput {
            name: "r",
            runs: &runs,
            answers: None,
            verdicts: &[],
        };
        let rep = build_report(&queries(), input, Some(input), &[], &ReportOptions::default()).unwrap();
        let d = rep.delta.unwrap();
        assert!(d.recall_at.values().all(|v| *v == 0.0));
        assert_eq!(d.mrr, 0.0);
        assert!((rep.main.mrr - 0.5).abs() < 1e-12);
    }

    #[test]
    fn missing_answer_is_key_mismatch() {
        let runs = vec![run("q1", &["g1"]), run("q2", &["g2"]), run("q3", &["g3"])];
        let answers = vec![
            AnswerLine {
                query_id: "q1".into(),
                answer: "red fox".into(),
            },
            AnswerLine {
                query_id: "q3".into(),
                answer: "owl".into(),
            },
        ];
        let err = build_report(
            &queries(),
            RowInput {
                name: "r",
                runs: &runs,
                answers: Some(&answers),
                verdicts: &[],
            },
            None,
            &[],
            &ReportOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(&err, EvalError::KeyMismatch(m) if m.contains("\"q2\"")), "{err}");
    }

    #[test]
    fn rendered_deltas_match_values() {
        let before = vec![run("q1", &["x", "g1"]), run("q2", &["g2"]), run("q3", &["x", "y", "g3"])];
        let after = vec![run("q1", &["g1", "x"]), run("q2", &["g2"]), run("q3", &["g3", "x", "y"])];
        let rep = build_report(
            &queries(),
            RowInput {
                name: "reranked",
                runs: &after,
                answers: None,
                verdicts: &[],
            },
            Some(RowInput {
                name: "baseline",
                runs: &before,
                answers: None,
                verdicts: &[],
            }),
            &[],
            &ReportOptions::default(),
        )
        .unwrap();
        let d = rep.delta.as_ref().unwrap();
        assert_eq!(d.recall_at[&1], rep.main.recall_at[&1] - rep.baseline.as_ref().unwrap().recall_at[&1]);
        let table = render_table(&rep);
        assert!(table.contains(&fmt_delta(d.recall_at[&1])), "{table}");
        assert!(table.contains("(+66.67)"), "{table}");
    }

    #[test]
    fn judge_accuracy_and_rouge() {
        let runs = vec![run("q1", &["g1"]), run("q2", &["g2"]), run("q3", &["g3"])];
        let answers: Vec<AnswerLine> = [("q1", "red fox"), ("q2", "jay"), ("q3", "cat")]
            .iter()
            .map(|(q, a)| AnswerLine {
                query_id: (*q).into(),
                answer: (*a).into(),
            })
            .collect();
        let verdicts: Vec<VerdictRecord> = [("q1", Verdict::Correct), ("q2", Verdict::Incorrect), ("q3", Verdict::Incorrect)]
            .iter()
            .map(|(q, v)| VerdictRecord {
                query_id: (*q).into(),
                answer_set: "answers".into(),
                judge: "j".into(),
                verdict: *v,
                parse_fallback: false,
            })
            .collect();
        let rep = build_report(
            &queries(),
            RowInput {
                name: "r",
                runs: &runs,
                answers: Some(&answers),
                verdicts: &verdicts,
            },
            None,
            &[],
            &ReportOptions::default(),
        )
        .unwrap();
        assert!((rep.main.judge_accuracy["j"] - 100.0 / 3.0).abs() < 1e-9);
        // (1 + 2/3 + 0) / 3, with "jay" vs "blue jay": P=1, R=1/2
        assert!((rep.main.rouge_l.unwrap() - (1.0 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
        let json = serde_json::to_string(&rep).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), rep);
    }
}
