//! Stage-two refinement: score each candidate page's layout blocks against
//! the query, drop blocks below the threshold, and resort the survivors by
//! descending relevance. Pages keep their stage-one order; only blocks
//! move.

use crate::index::KnowledgeBase;
use crate::model::{
    maxsim, BlockRecord, ModelError, MultiVec, PageRecord, RankedPage, RefinedPage,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("block {block_id:?}: {source}")]
    BlockScore {
        block_id: String,
        source: ModelError,
    },
    #[error("candidate page {page_id:?} does not resolve in the knowledge base")]
    UnknownPage { page_id: String },
    #[error("invalid rerank config: {0}")]
    InvalidConfig(String),
}

/// How the configured threshold maps to a score bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    /// `theta` is compared to block scores directly.
    Absolute,
    /// The bound is `theta` times the page-level score, so it adapts to
    /// score magnitudes; `theta` must lie in `[0, 1]`.
    Relative,
}

/// What a page contributes when every block falls below the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// Hand the generator the whole page image.
    FullPage,
    /// The page contributes nothing.
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankConfig {
    pub theta: f64,
    pub theta_mode: ThetaMode,
    pub fallback_policy: FallbackPolicy,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            theta: 0.5,
            theta_mode: ThetaMode::Relative,
            fallback_policy: FallbackPolicy::FullPage,
        }
    }
}

impl RerankConfig {
    /// Boundary validation for user-supplied configuration.
    pub fn validate(&self) -> Result<(), RerankError> {
        match self.theta_mode {
            ThetaMode::Relative if !(0.0..=1.0).contains(&self.theta) => {
                Err(RerankError::InvalidConfig(format!(
                    "relative theta must lie in [0, 1], got {}",
                    self.theta
                )))
            }
            ThetaMode::Absolute if !self.theta.is_finite() => Err(RerankError::InvalidConfig(
                format!("absolute theta must be finite, got {}", self.theta),
            )),
            _ => Ok(()),
        }
    }

    /// The score bound applied to blocks of a page that scored
    /// `page_score` at stage one.
    pub fn effective_theta(&self, page_score: f64) -> f64 {
        match self.theta_mode {
            ThetaMode::Absolute => self.theta,
            ThetaMode::Relative => self.theta * page_score,
        }
    }
}

/// Score every block of `page` against the query. Input order is
/// preserved; a page without blocks yields an empty list.
pub fn score_blocks(
    page: &PageRecord,
    query_emb: &MultiVec,
) -> Result<Vec<BlockRecord>, RerankError> {
    page.blocks
        .iter()
        .map(|block| {
            let score =
                maxsim(query_emb, &block.embedding).map_err(|source| RerankError::BlockScore {
                    block_id: block.block_id.clone(),
                    source,
                })?;
            Ok(BlockRecord {
                score: Some(score),
                ..block.clone()
            })
        })
        .collect()
}

/// Keep exactly the blocks whose score meets the effective threshold.
/// Relative order is untouched; sorting happens in [`refine_page`].
pub fn filter_blocks(
    blocks: &[BlockRecord],
    cfg: &RerankConfig,
    page_score: f64,
) -> Vec<BlockRecord> {
    let bound = cfg.effective_theta(page_score);
    blocks
        .iter()
        .filter(|b| {
            debug_assert!(b.score.is_some(), "filter_blocks requires scored blocks");
            b.score.is_some_and(|s| s >= bound)
        })
        .cloned()
        .collect()
}

/// Refine one candidate page: score, filter, and sort its blocks by
/// descending score (ties by ascending block id). When nothing survives
/// the block list is empty and, under [`FallbackPolicy::FullPage`], the
/// fallback flag tells the caller to use the whole page image.
pub fn refine_page(
    page: &PageRecord,
    query_emb: &MultiVec,
    page_score: f64,
    cfg: &RerankConfig,
) -> Result<RefinedPage, RerankError> {
    let scored = score_blocks(page, query_emb)?;
    let mut surviving = filter_blocks(&scored, cfg, page_score);
    surviving.sort_by(|a, b| {
        let sa = a.score.unwrap_or(f64::NEG_INFINITY);
        let sb = b.score.unwrap_or(f64::NEG_INFINITY);
        sb.total_cmp(&sa).then_with(|| a.block_id.cmp(&b.block_id))
    });
    let fallback_full_page =
        surviving.is_empty() && cfg.fallback_policy == FallbackPolicy::FullPage;
    Ok(RefinedPage {
        page_id: page.page_id.clone(),
        ordered_blocks: surviving,
        fallback_full_page,
    })
}

/// Refine every stage-one candidate, preserving the candidate page order.
pub fn rerank_candidates(
    pages: &[RankedPage],
    kb: &KnowledgeBase,
    query_emb: &MultiVec,
    cfg: &RerankConfig,
) -> Result<Vec<RefinedPage>, RerankError> {
    pages
        .iter()
        .map(|ranked| {
            let page = kb
                .get(&ranked.page_id)
                .ok_or_else(|| RerankError::UnknownPage {
                    page_id: ranked.page_id.clone(),
                })?;
            refine_page(page, query_emb, ranked.score, cfg)
        })
        .collect()
}
