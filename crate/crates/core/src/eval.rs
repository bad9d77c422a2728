//! Evaluation harness: nDCG@k retrieval scoring, answer-accuracy
//! aggregation under three evidence settings, and per-stage latency
//! profiling.
//!
//! Relevance is binary (a page is gold or it is not). Queries whose gold
//! pages do not resolve, or which lack what a mode needs, are excluded
//! from the averages and reported per query; the report itself is
//! deterministic given deterministic gateways, timing fields aside.

use crate::gateway::{EncodeRequest, Gateways, GenerateRequest, JudgeRequest};
use crate::index::{KnowledgeBase, QueryRecord, QuerySet};
use crate::retrieval::{evidence_full_pages, query_pipeline, retrieve, PipelineConfig};
use crate::timing::{self, StageRecorder, StageTimings};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold set is empty")]
    EmptyGold,
    #[error("k must be >= 1")]
    ZeroK,
    #[error("latency profile requires at least one run")]
    NoRuns,
    #[error("csv: {0}")]
    Csv(String),
}

/// Normalized discounted cumulative gain over a binary-relevance ranking,
/// truncated at `k`.
///
/// `DCG = Σ rel(i) / log2(i + 1)` over 1-based ranks `i <= min(k, |ranked|)`;
/// the ideal DCG places `min(k, |gold|)` relevant items first. Returns 0
/// when no gold id appears in the top `k`.
pub fn ndcg_at_k(ranked_ids: &[&str], gold_ids: &[&str], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    let gold: HashSet<&str> = gold_ids.iter().copied().collect();
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let dcg: f64 = ranked_ids
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| gold.contains(*id))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let ideal_hits = gold.len().min(k);
    let idcg: f64 = (0..ideal_hits).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    Ok(dcg / idcg)
}

/// Evidence handed to the generator during QA evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Whole pages of the top-k retrieval, unrefined.
    TopK,
    /// Block-level refinement of the top-k retrieval.
    TopKReranked,
    /// The annotated gold pages themselves (generator upper bound).
    GoldPage,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::TopK => "top_k",
            EvalMode::TopKReranked => "top_k_reranked",
            EvalMode::GoldPage => "gold_page",
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "top_k" => Ok(EvalMode::TopK),
            "top_k_reranked" => Ok(EvalMode::TopKReranked),
            "gold_page" => Ok(EvalMode::GoldPage),
            other => Err(format!(
                "unknown eval mode {other:?} (expected top_k, top_k_reranked, or gold_page)"
            )),
        }
    }
}

/// Audit row for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ndcg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retrieved: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

impl QueryRow {
    fn excluded(query_id: &str, error: String) -> Self {
        Self {
            query_id: query_id.to_string(),
            ndcg: None,
            verdict: None,
            retrieved: vec![],
            answer: None,
            error: Some(error),
            timings: None,
        }
    }
}

/// Aggregated evaluation results plus the per-query audit rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Queries that contributed to the averages.
    pub n_queries: usize,
    /// Queries excluded (unresolvable gold, missing reference, errors).
    pub n_excluded: usize,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<EvalMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ndcg_at_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencySummary>,
    pub rows: Vec<QueryRow>,
}

/// Score retrieval quality: mean nDCG@k over the query set.
pub fn evaluate_retrieval(
    kb: &KnowledgeBase,
    queries: &QuerySet,
    cfg: &PipelineConfig,
    gateways: &Gateways,
) -> EvalReport {
    let k = cfg.retrieval.k;
    let rows: Vec<QueryRow> = queries
        .entries
        .par_iter()
        .map(|query| retrieval_row(kb, query, cfg, gateways))
        .collect();
    finish_report(rows, k, None)
}

fn retrieval_row(
    kb: &KnowledgeBase,
    query: &QueryRecord,
    cfg: &PipelineConfig,
    gateways: &Gateways,
) -> QueryRow {
    if let Some(missing) = unresolved_gold(kb, query) {
        return QueryRow::excluded(
            &query.query_id,
            format!("gold page {missing:?} not in the knowledge base"),
        );
    }
    let mut rec = StageRecorder::start();
    let emb = rec.time(timing::set_encode_query, || {
        let req = EncodeRequest {
            id: query.query_id.clone(),
            modality: query.query_ref().modality(),
            payload_ref: query.query_ref().to_payload(),
        };
        gateways
            .encoder
            .encode_multivec(&req)
            .map_err(|e| e.to_string())
            .and_then(|mv| mv.normalize().map_err(|e| e.to_string()))
    });
    let emb = match emb {
        Ok(emb) => emb,
        Err(e) => return QueryRow::excluded(&query.query_id, e),
    };
    let ranked = match rec.time(timing::set_retrieve, || retrieve(kb, &emb, &cfg.retrieval)) {
        Ok(r) => r,
        Err(e) => return QueryRow::excluded(&query.query_id, e.to_string()),
    };
    let retrieved: Vec<String> = ranked.into_iter().map(|r| r.page_id).collect();
    let ranked_refs: Vec<&str> = retrieved.iter().map(String::as_str).collect();
    let gold_refs: Vec<&str> = query.gold_page_ids.iter().map(String::as_str).collect();
    let ndcg =
        ndcg_at_k(&ranked_refs, &gold_refs, cfg.retrieval.k).expect("gold validated non-empty");
    QueryRow {
        query_id: query.query_id.clone(),
        ndcg: Some(ndcg),
        verdict: None,
        retrieved,
        answer: None,
        error: None,
        timings: Some(rec.finish()),
    }
}

/// Score end-to-end answer accuracy under the selected evidence mode:
/// mean judge verdict over the query set.
pub fn evaluate_qa(
    kb: &KnowledgeBase,
    queries: &QuerySet,
    cfg: &PipelineConfig,
    mode: EvalMode,
    gateways: &Gateways,
) -> EvalReport {
    let rows: Vec<QueryRow> = queries
        .entries
        .par_iter()
        .map(|query| qa_row(kb, query, cfg, mode, gateways))
        .collect();
    finish_report(rows, cfg.retrieval.k, Some(mode))
}

fn qa_row(
    kb: &KnowledgeBase,
    query: &QueryRecord,
    cfg: &PipelineConfig,
    mode: EvalMode,
    gateways: &Gateways,
) -> QueryRow {
    let Some(reference) = query.reference_answer.clone() else {
        return QueryRow::excluded(&query.query_id, "missing reference answer".into());
    };
    if let Some(missing) = unresolved_gold(kb, query) {
        return QueryRow::excluded(
            &query.query_id,
            format!("gold page {missing:?} not in the knowledge base"),
        );
    }

    let outcome = match mode {
        EvalMode::TopKReranked => {
            match query_pipeline(kb, &query.query_id, &query.query_ref(), cfg, gateways) {
                Ok(out) => Ok((
                    out.ranked.into_iter().map(|r| r.page_id).collect(),
                    out.answer,
                    out.timings,
                )),
                Err(e) => Err(e.to_string()),
            }
        }
        EvalMode::TopK => run_unrefined(kb, query, cfg, gateways),
        EvalMode::GoldPage => run_gold(kb, query, gateways),
    };
    let (retrieved, answer, timings) = match outcome {
        Ok(v) => v,
        Err(e) => return QueryRow::excluded(&query.query_id, e),
    };

    let judge_req = JudgeRequest {
        id: query.query_id.clone(),
        question: query
            .text
            .clone()
            .or_else(|| query.audio_ref.clone())
            .unwrap_or_default(),
        reference,
        candidate: answer.answer_text.clone(),
    };
    let verdict = match gateways.judge.judge(&judge_req) {
        Ok(v) => v.verdict,
        Err(e) => return QueryRow::excluded(&query.query_id, e.to_string()),
    };

    let ndcg = (!retrieved.is_empty()).then(|| {
        let ranked_refs: Vec<&str> = retrieved.iter().map(String::as_str).collect();
        let gold_refs: Vec<&str> = query.gold_page_ids.iter().map(String::as_str).collect();
        ndcg_at_k(&ranked_refs, &gold_refs, cfg.retrieval.k).expect("gold validated non-empty")
    });
    QueryRow {
        query_id: query.query_id.clone(),
        ndcg,
        verdict: Some(verdict),
        retrieved,
        answer: Some(answer.answer_text),
        error: None,
        timings: Some(timings),
    }
}

type QaOutcome = Result<(Vec<String>, crate::gateway::GenerateResponse, StageTimings), String>;

fn run_unrefined(
    kb: &KnowledgeBase,
    query: &QueryRecord,
    cfg: &PipelineConfig,
    gateways: &Gateways,
) -> QaOutcome {
    let mut rec = StageRecorder::start();
    let emb = rec.time(timing::set_encode_query, || {
        let req = EncodeRequest {
            id: query.query_id.clone(),
            modality: query.query_ref().modality(),
            payload_ref: query.query_ref().to_payload(),
        };
        gateways
            .encoder
            .encode_multivec(&req)
            .map_err(|e| e.to_string())
            .and_then(|mv| mv.normalize().map_err(|e| e.to_string()))
    })?;
    let ranked = rec
        .time(timing::set_retrieve, || retrieve(kb, &emb, &cfg.retrieval))
        .map_err(|e| e.to_string())?;
    let page_ids: Vec<String> = ranked.into_iter().map(|r| r.page_id).collect();
    let req = GenerateRequest {
        id: query.query_id.clone(),
        query_ref: query.query_ref(),
        evidence: evidence_full_pages(page_ids.iter().map(String::as_str), kb),
    };
    let answer = rec
        .time(timing::set_generate, || gateways.generator.generate(&req))
        .map_err(|e| e.to_string())?;
    Ok((page_ids, answer, rec.finish()))
}

fn run_gold(kb: &KnowledgeBase, query: &QueryRecord, gateways: &Gateways) -> QaOutcome {
    let mut rec = StageRecorder::start();
    let req = GenerateRequest {
        id: query.query_id.clone(),
        query_ref: query.query_ref(),
        evidence: evidence_full_pages(query.gold_page_ids.iter().map(String::as_str), kb),
    };
    let answer = rec
        .time(timing::set_generate, || gateways.generator.generate(&req))
        .map_err(|e| e.to_string())?;
    Ok((vec![], answer, rec.finish()))
}

fn unresolved_gold<'a>(kb: &KnowledgeBase, query: &'a QueryRecord) -> Option<&'a str> {
    query
        .gold_page_ids
        .iter()
        .map(String::as_str)
        .find(|id| kb.get(id).is_none())
}

fn finish_report(mut rows: Vec<QueryRow>, k: usize, mode: Option<EvalMode>) -> EvalReport {
    rows.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    let evaluated: Vec<&QueryRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let n_queries = evaluated.len();
    let n_excluded = rows.len() - n_queries;
    let mean = |values: Vec<f64>| {
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };
    let ndcg_at_k = mean(evaluated.iter().filter_map(|r| r.ndcg).collect());
    let accuracy = mean(evaluated.iter().filter_map(|r| r.verdict).collect());
    let runs: Vec<StageTimings> = evaluated.iter().filter_map(|r| r.timings).collect();
    let latency = profile_latency(&runs).ok();
    EvalReport {
        n_queries,
        n_excluded,
        k,
        mode,
        ndcg_at_k,
        accuracy,
        latency,
        rows,
    }
}

/// Mean and nearest-rank p50/p95 for one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

/// Latency breakdown across runs, one entry per pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub n_runs: usize,
    pub encode_query: StageStats,
    pub retrieve: StageStats,
    pub rerank: StageStats,
    pub generate: StageStats,
    pub total: StageStats,
}

impl LatencySummary {
    /// (stage name, stats) pairs in canonical order.
    pub fn stages(&self) -> [(&'static str, StageStats); 5] {
        [
            ("encode_query", self.encode_query),
            ("retrieve", self.retrieve),
            ("rerank", self.rerank),
            ("generate", self.generate),
            ("total", self.total),
        ]
    }
}

/// Summarize per-stage wall times over a set of runs. Percentiles use the
/// nearest-rank rule (`ceil(p * n)`-th smallest), so every reported value
/// is one of the observed inputs.
pub fn profile_latency(runs: &[StageTimings]) -> Result<LatencySummary, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::NoRuns);
    }
    let stats = |pick: fn(&StageTimings) -> f64| {
        let mut values: Vec<f64> = runs.iter().map(pick).collect();
        values.sort_by(f64::total_cmp);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        StageStats {
            mean_ms: mean,
            p50_ms: nearest_rank(&values, 0.50),
            p95_ms: nearest_rank(&values, 0.95),
        }
    };
    Ok(LatencySummary {
        n_runs: runs.len(),
        encode_query: stats(|t| t.encode_query_ms),
        retrieve: stats(|t| t.retrieve_ms),
        rerank: stats(|t| t.rerank_ms),
        generate: stats(|t| t.generate_ms),
        total: stats(|t| t.total_ms),
    })
}

fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Aligned-column text rendering of a report.
pub fn render_report_table(report: &EvalReport) -> String {
    let mut out = String::new();
    let push = |out: &mut String, line: String| {
        out.push_str(&line);
        out.push('\n');
    };
    push(&mut out, format!("{:<16} {:>10}", "metric", "value"));
    push(&mut out, "-".repeat(27));
    push(
        &mut out,
        format!("{:<16} {:>10}", "n_queries", report.n_queries),
    );
    push(
        &mut out,
        format!("{:<16} {:>10}", "n_excluded", report.n_excluded),
    );
    if let Some(mode) = report.mode {
        push(&mut out, format!("{:<16} {:>10}", "mode", mode.as_str()));
    }
    if let Some(ndcg) = report.ndcg_at_k {
        push(
            &mut out,
            format!("{:<16} {:>10.4}", format!("ndcg@{}", report.k), ndcg),
        );
    }
    if let Some(acc) = report.accuracy {
        push(&mut out, format!("{:<16} {:>10.4}", "accuracy", acc));
    }
    if let Some(latency) = &report.latency {
        push(&mut out, String::new());
        push(
            &mut out,
            format!(
                "{:<16} {:>10} {:>10} {:>10}",
                "stage", "mean_ms", "p50_ms", "p95_ms"
            ),
        );
        push(&mut out, "-".repeat(49));
        for (name, s) in latency.stages() {
            push(
                &mut out,
                format!(
                    "{:<16} {:>10.3} {:>10.3} {:>10.3}",
                    name, s.mean_ms, s.p50_ms, s.p95_ms
                ),
            );
        }
    }
    out
}

/// Per-query rows as CSV for spreadsheet audits.
pub fn report_to_csv(report: &EvalReport) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "query_id",
        "ndcg",
        "verdict",
        "retrieved",
        "answer",
        "error",
    ])
    .map_err(|e| EvalError::Csv(e.to_string()))?;
    for row in &report.rows {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        w.write_record([
            row.query_id.as_str(),
            &fmt(row.ndcg),
            &fmt(row.verdict),
            &row.retrieved.join(";"),
            row.answer.as_deref().unwrap_or(""),
            row.error.as_deref().unwrap_or(""),
        ])
        .map_err(|e| EvalError::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| EvalError::Csv(e.to_string()))
}
