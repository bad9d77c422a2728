//! Corpus ingestion: manifest in, fully embedded knowledge base out.
//!
//! Page images are embedded through the encoder gateway; layout blocks
//! come from the manifest's precomputed entries when present, otherwise
//! from the detector gateway. Block crops are re-encoded individually so
//! query-time reranking is a pure scoring pass. Every embedding is
//! L2-normalized before it enters the knowledge base.

use super::{CorpusManifest, IndexError, KnowledgeBase, ManifestEntry};
use crate::gateway::{
    DetectRequest, EncodeRequest, EncoderGateway, LayoutGateway, Modality, PayloadRef,
};
use crate::model::{BBox, BlockCategory, BlockRecord, MultiVec, PageRecord};
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Worker threads, which bounds in-flight gateway requests.
    pub encode_concurrency: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            encode_concurrency: 4,
        }
    }
}

/// Build a knowledge base from a manifest. Pure given deterministic
/// gateways: identical inputs produce an identical knowledge base (and
/// therefore an identical index file), regardless of concurrency.
pub fn ingest(
    manifest: &CorpusManifest,
    encoder: &dyn EncoderGateway,
    detector: &dyn LayoutGateway,
    opts: &IngestOptions,
) -> Result<KnowledgeBase, IndexError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.encode_concurrency.max(1))
        .build()
        .map_err(|e| IndexError::Concurrency(e.to_string()))?;
    let pages: Result<Vec<PageRecord>, IndexError> = pool.install(|| {
        manifest
            .entries
            .par_iter()
            .map(|entry| build_page(entry, encoder, detector))
            .collect()
    });
    let kb = KnowledgeBase::new(pages?)?;
    log::info!("ingested {} page(s), dim {}", kb.len(), kb.dim());
    Ok(kb)
}

fn build_page(
    entry: &ManifestEntry,
    encoder: &dyn EncoderGateway,
    detector: &dyn LayoutGateway,
) -> Result<PageRecord, IndexError> {
    let page_id = &entry.page_id;
    let gateway_err = |source| IndexError::Gateway {
        page_id: page_id.clone(),
        source,
    };

    let page_req = EncodeRequest {
        id: page_id.clone(),
        modality: Modality::Image,
        payload_ref: PayloadRef::Path(entry.image_ref.clone()),
    };
    let embedding = normalized(
        encoder.encode_multivec(&page_req).map_err(gateway_err)?,
        || format!("page {page_id:?}"),
    )?;

    let regions: Vec<(BBox, BlockCategory)> = match &entry.precomputed_blocks {
        Some(blocks) => blocks.iter().map(|b| (b.bbox, b.category)).collect(),
        None => {
            let req = DetectRequest {
                id: page_id.clone(),
                image_ref: entry.image_ref.clone(),
            };
            let resp = detector.detect(&req).map_err(gateway_err)?;
            resp.blocks
                .into_iter()
                .map(|b| (b.bbox, b.category))
                .collect()
        }
    };

    let mut blocks = Vec::with_capacity(regions.len());
    for (n, (bbox, category)) in regions.into_iter().enumerate() {
        let block_id = format!("{page_id}.b{n}");
        let req = EncodeRequest {
            id: block_id.clone(),
            modality: Modality::Image,
            payload_ref: PayloadRef::crop(&entry.image_ref, bbox),
        };
        let embedding = normalized(encoder.encode_multivec(&req).map_err(gateway_err)?, || {
            format!("block {block_id:?}")
        })?;
        blocks.push(BlockRecord {
            block_id,
            page_id: page_id.clone(),
            bbox,
            category,
            embedding,
            score: None,
        });
    }

    log::info!("embedded page {page_id} ({} block(s))", blocks.len());
    Ok(PageRecord {
        page_id: page_id.clone(),
        doc_id: entry.doc_id.clone(),
        image_ref: entry.image_ref.clone(),
        embedding,
        blocks,
    })
}

fn normalized(mv: MultiVec, owner: impl Fn() -> String) -> Result<MultiVec, IndexError> {
    mv.normalize().map_err(|source| IndexError::Embedding {
        owner: owner(),
        source,
    })
}
