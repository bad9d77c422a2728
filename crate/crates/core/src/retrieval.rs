//! Stage-one retrieval and the end-to-end query pipeline.
//!
//! Retrieval scores the query against every page in the pool (exhaustive,
//! exact) and keeps the top k. The pool is split into partitions scored on
//! worker threads; per-partition selection and the final merge use one
//! total order (descending score, then ascending page id), so the result
//! is identical for every partition size.

use crate::gateway::{
    EncodeRequest, EvidenceItem, GatewayError, Gateways, GenerateRequest, GenerateResponse,
    QueryRef,
};
use crate::index::KnowledgeBase;
use crate::model::{maxsim, ModelError, MultiVec, RankedPage, RefinedPage};
use crate::rerank::{rerank_candidates, RerankConfig, RerankError};
use crate::timing::{self, StageRecorder, StageTimings};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    /// Candidate pages to return.
    pub k: usize,
    /// Pages per scoring partition.
    pub partition_size: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 5,
            partition_size: 1024,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if self.k == 0 {
            return Err(RetrievalError::InvalidConfig("k must be >= 1".into()));
        }
        if self.partition_size == 0 {
            return Err(RetrievalError::InvalidConfig(
                "partition_size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("knowledge base is empty")]
    EmptyKnowledgeBase,
    #[error(transparent)]
    Score(#[from] ModelError),
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
}

/// Rank the `min(k, |kb|)` highest-scoring pages. Every returned score is
/// exactly `maxsim(query_emb, page.embedding)`; ties break by ascending
/// page id and ranks run 1..=len.
pub fn retrieve(
    kb: &KnowledgeBase,
    query_emb: &MultiVec,
    cfg: &RetrievalConfig,
) -> Result<Vec<RankedPage>, RetrievalError> {
    cfg.validate()?;
    if kb.is_empty() {
        return Err(RetrievalError::EmptyKnowledgeBase);
    }
    if query_emb.dim() != kb.dim() {
        return Err(ModelError::DimMismatch {
            query_dim: query_emb.dim(),
            doc_dim: kb.dim(),
        }
        .into());
    }
    let partials: Result<Vec<Vec<(f64, &str)>>, ModelError> = kb
        .pages()
        .par_chunks(cfg.partition_size)
        .map(|partition| {
            let mut scored = partition
                .iter()
                .map(|page| maxsim(query_emb, &page.embedding).map(|s| (s, page.page_id.as_str())))
                .collect::<Result<Vec<_>, _>>()?;
            scored.sort_unstable_by(rank_order);
            scored.truncate(cfg.k);
            Ok(scored)
        })
        .collect();
    let mut merged: Vec<(f64, &str)> = partials?.into_iter().flatten().collect();
    merged.sort_unstable_by(rank_order);
    merged.truncate(cfg.k);
    Ok(merged
        .into_iter()
        .enumerate()
        .map(|(i, (score, page_id))| RankedPage {
            page_id: page_id.to_string(),
            score,
            rank: i + 1,
        })
        .collect())
}

fn rank_order(a: &(f64, &str), b: &(f64, &str)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub retrieval: RetrievalConfig,
    pub rerank: RerankConfig,
}

/// Everything one query produces: stage-one candidates, their block-level
/// refinements (same page order), the generated answer, and wall-clock
/// spent per stage.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub ranked: Vec<RankedPage>,
    pub refined: Vec<RefinedPage>,
    pub answer: GenerateResponse,
    pub timings: StageTimings,
}

#[derive(Debug, Error)]
pub enum StageFailure {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A pipeline failure tagged with the stage that raised it, carrying
/// whatever earlier stages had already produced (a generator outage still
/// returns the retrieval results).
#[derive(Debug, Error)]
#[error("stage {stage}: {source}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub source: StageFailure,
    pub ranked: Vec<RankedPage>,
    pub refined: Vec<RefinedPage>,
    pub timings: StageTimings,
}

/// Run the two retrieval stages and generation for one query, timing each
/// stage: encode the query, rank pages, refine candidate blocks, then hand
/// the ordered evidence to the generator.
pub fn query_pipeline(
    kb: &KnowledgeBase,
    query_id: &str,
    query_ref: &QueryRef,
    cfg: &PipelineConfig,
    gateways: &Gateways,
) -> Result<PipelineOutput, PipelineError> {
    let mut rec = StageRecorder::start();
    let fail = |stage: &'static str,
                source: StageFailure,
                ranked: Vec<RankedPage>,
                refined: Vec<RefinedPage>,
                rec: StageRecorder| {
        PipelineError {
            stage,
            source,
            ranked,
            refined,
            timings: rec.finish(),
        }
    };

    let encode_req = EncodeRequest {
        id: query_id.to_string(),
        modality: query_ref.modality(),
        payload_ref: query_ref.to_payload(),
    };
    let query_emb = match rec.time(timing::set_encode_query, || {
        gateways
            .encoder
            .encode_multivec(&encode_req)
            .map_err(StageFailure::from)
            .and_then(|mv| mv.normalize().map_err(StageFailure::from))
    }) {
        Ok(mv) => mv,
        Err(e) => return Err(fail("encode_query", e, vec![], vec![], rec)),
    };

    let ranked = match rec.time(timing::set_retrieve, || {
        retrieve(kb, &query_emb, &cfg.retrieval)
    }) {
        Ok(r) => r,
        Err(e) => return Err(fail("retrieve", e.into(), vec![], vec![], rec)),
    };

    let refined = match rec.time(timing::set_rerank, || {
        rerank_candidates(&ranked, kb, &query_emb, &cfg.rerank)
    }) {
        Ok(r) => r,
        Err(e) => return Err(fail("rerank", e.into(), ranked, vec![], rec)),
    };

    let generate_req = GenerateRequest {
        id: query_id.to_string(),
        query_ref: query_ref.clone(),
        evidence: evidence_from_refined(&refined, kb),
    };
    let answer = match rec.time(timing::set_generate, || {
        gateways.generator.generate(&generate_req)
    }) {
        Ok(a) => a,
        Err(e) => return Err(fail("generate", e.into(), ranked, refined, rec)),
    };

    Ok(PipelineOutput {
        ranked,
        refined,
        answer,
        timings: rec.finish(),
    })
}

/// Generator evidence for refined candidates: each surviving block as a
/// crop in refined order, or the whole page image on fallback. Pages with
/// no surviving blocks and no fallback contribute nothing.
pub fn evidence_from_refined(refined: &[RefinedPage], kb: &KnowledgeBase) -> Vec<EvidenceItem> {
    let mut evidence = Vec::new();
    for page in refined {
        let image_ref = kb
            .get(&page.page_id)
            .map(|p| p.image_ref.as_str())
            .unwrap_or_default();
        if page.fallback_full_page {
            evidence.push(EvidenceItem {
                id: page.page_id.clone(),
                image_ref: image_ref.to_string(),
                bbox: None,
            });
            continue;
        }
        for block in &page.ordered_blocks {
            evidence.push(EvidenceItem {
                id: block.block_id.clone(),
                image_ref: image_ref.to_string(),
                bbox: Some(block.bbox),
            });
        }
    }
    evidence
}

/// Generator evidence as whole pages, in the given order.
pub fn evidence_full_pages<'a>(
    page_ids: impl IntoIterator<Item = &'a str>,
    kb: &KnowledgeBase,
) -> Vec<EvidenceItem> {
    page_ids
        .into_iter()
        .map(|page_id| EvidenceItem {
            id: page_id.to_string(),
            image_ref: kb
                .get(page_id)
                .map(|p| p.image_ref.clone())
                .unwrap_or_default(),
            bbox: None,
        })
        .collect()
}
