//! Query response body shared verbatim by `lirag query --json` and the
//! HTTP service, so both surfaces emit identical JSON for identical
//! queries (timings aside).

use lirag_core::gateway::GenerateResponse;
use lirag_core::model::{BBox, BlockCategory, RankedPage, RefinedPage};
use lirag_core::retrieval::PipelineOutput;
use lirag_core::timing::StageTimings;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponseBody {
    pub ranked_pages: Vec<RankedPage>,
    pub refined: Vec<RefinedPageView>,
    pub answer: GenerateResponse,
    pub timings: StageTimings,
}

/// A refined page without the embedding payloads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedPageView {
    pub page_id: String,
    pub fallback_full_page: bool,
    pub blocks: Vec<BlockView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockView {
    pub block_id: String,
    pub bbox: BBox,
    pub category: BlockCategory,
    pub score: f64,
}

impl From<&RefinedPage> for RefinedPageView {
    fn from(page: &RefinedPage) -> Self {
        Self {
            page_id: page.page_id.clone(),
            fallback_full_page: page.fallback_full_page,
            blocks: page
                .ordered_blocks
                .iter()
                .map(|b| BlockView {
                    block_id: b.block_id.clone(),
                    bbox: b.bbox,
                    category: b.category,
                    score: b.score.unwrap_or_default(),
                })
                .collect(),
        }
    }
}

impl From<PipelineOutput> for QueryResponseBody {
    fn from(out: PipelineOutput) -> Self {
        Self {
            ranked_pages: out.ranked,
            refined: out.refined.iter().map(RefinedPageView::from).collect(),
            answer: out.answer,
            timings: out.timings,
        }
    }
}

/// Human-readable rendering used by `lirag query` without `--json`.
pub fn render_text(body: &QueryResponseBody) -> String {
    let mut out = String::new();
    out.push_str("ranked pages:\n");
    for page in &body.ranked_pages {
        out.push_str(&format!(
            "  {:>2}. {:<24} score {:.6}\n",
            page.rank, page.page_id, page.score
        ));
    }
    out.push_str("refined evidence:\n");
    for page in &body.refined {
        if page.fallback_full_page {
            out.push_str(&format!(
                "  {} -> full page (no block met theta)\n",
                page.page_id
            ));
            continue;
        }
        if page.blocks.is_empty() {
            out.push_str(&format!("  {} -> (no evidence)\n", page.page_id));
            continue;
        }
        out.push_str(&format!("  {} ->\n", page.page_id));
        for block in &page.blocks {
            out.push_str(&format!(
                "      {:<28} {:<6} [{}] score {:.6}\n",
                block.block_id,
                block.category.as_str(),
                block.bbox,
                block.score
            ));
        }
    }
    out.push_str(&format!("answer: {}\n", body.answer.answer_text));
    if let Some(audio) = &body.answer.answer_audio_ref {
        out.push_str(&format!("answer audio: {audio}\n"));
    }
    out.push_str("timings (ms):\n");
    for (name, ms) in body.timings.stages() {
        out.push_str(&format!("  {name:<14} {ms:>10.3}\n"));
    }
    out
}
