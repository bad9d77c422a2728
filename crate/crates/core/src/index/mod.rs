//! Persistent knowledge-base index: corpus manifests in, binary page/block
//! embedding files out, memory-resident [`KnowledgeBase`] for querying.

mod format;
mod ingest;

pub use format::{load, save, FORMAT_VERSION, MAGIC};
pub use ingest::{ingest, IngestOptions};

use crate::gateway::{GatewayError, QueryRef};
use crate::model::{BBox, BlockCategory, ModelError, PageRecord};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate page_id {page_id:?}")]
    DuplicatePageId { page_id: String },
    #[error(
        "block {block_id:?} declares page_id {block_page_id:?} but is attached to page {page_id:?}"
    )]
    BlockPageMismatch {
        block_id: String,
        block_page_id: String,
        page_id: String,
    },
    #[error("{owner}: embedding dim {got} disagrees with knowledge-base dim {expected}")]
    DimMismatch {
        owner: String,
        expected: usize,
        got: usize,
    },
    #[error("knowledge base is empty")]
    EmptyKnowledgeBase,
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad magic {found:?}, expected {MAGIC:?}")]
    MagicMismatch { found: [u8; 4] },
    #[error("unsupported index version {found} (supported: {FORMAT_VERSION})")]
    UnsupportedVersion { found: u16 },
    #[error("corrupt index at byte {offset}: {detail}")]
    Corrupt { offset: u64, detail: String },
    #[error("line {line}: {detail}")]
    Jsonl { line: usize, detail: String },
    #[error("page {page_id:?}: {source}")]
    Gateway {
        page_id: String,
        source: GatewayError,
    },
    #[error("{owner}: {source}")]
    Embedding { owner: String, source: ModelError },
    #[error("ingest worker pool: {0}")]
    Concurrency(String),
    #[error("{what} count exceeds the on-disk u32 limit")]
    TooLarge { what: &'static str },
}

impl IndexError {
    /// True when retrying the same operation may succeed (transient
    /// gateway trouble, as opposed to bad data).
    pub fn is_retriable(&self) -> bool {
        matches!(self, IndexError::Gateway { source, .. } if source.is_retriable())
    }
}

/// Immutable, query-ready page collection with unique ids, a single
/// embedding dimension, and blocks that resolve to their pages.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    dim: usize,
    pages: Vec<PageRecord>,
    by_id: HashMap<String, usize>,
}

impl KnowledgeBase {
    pub fn new(pages: Vec<PageRecord>) -> Result<Self, IndexError> {
        let dim = pages.first().map(|p| p.embedding.dim()).unwrap_or(0);
        let mut by_id = HashMap::with_capacity(pages.len());
        for (i, page) in pages.iter().enumerate() {
            if by_id.insert(page.page_id.clone(), i).is_some() {
                return Err(IndexError::DuplicatePageId {
                    page_id: page.page_id.clone(),
                });
            }
            if page.embedding.dim() != dim {
                return Err(IndexError::DimMismatch {
                    owner: format!("page {:?}", page.page_id),
                    expected: dim,
                    got: page.embedding.dim(),
                });
            }
            for block in &page.blocks {
                if block.page_id != page.page_id {
                    return Err(IndexError::BlockPageMismatch {
                        block_id: block.block_id.clone(),
                        block_page_id: block.page_id.clone(),
                        page_id: page.page_id.clone(),
                    });
                }
                if block.embedding.dim() != dim {
                    return Err(IndexError::DimMismatch {
                        owner: format!("block {:?}", block.block_id),
                        expected: dim,
                        got: block.embedding.dim(),
                    });
                }
            }
        }
        Ok(Self { dim, pages, by_id })
    }

    /// Embedding dimension shared by every page and block (0 when empty).
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn pages(&self) -> &[PageRecord] {
        &self.pages
    }

    pub fn get(&self, page_id: &str) -> Option<&PageRecord> {
        self.by_id.get(page_id).map(|&i| &self.pages[i])
    }
}

/// One corpus page as declared in the ingestion manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub doc_id: String,
    pub page_id: String,
    pub image_ref: String,
    /// When present (even if empty), the layout detector is bypassed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precomputed_blocks: Option<Vec<PrecomputedBlock>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecomputedBlock {
    pub bbox: BBox,
    pub category: BlockCategory,
}

/// Parsed corpus manifest (JSONL, one page per line).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self, IndexError> {
        let mut entries: Vec<ManifestEntry> = Vec::new();
        let mut seen = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| IndexError::Jsonl {
                line: lineno,
                detail: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry =
                serde_json::from_str(&line).map_err(|e| IndexError::Jsonl {
                    line: lineno,
                    detail: e.to_string(),
                })?;
            if entry.image_ref.is_empty() {
                return Err(IndexError::Jsonl {
                    line: lineno,
                    detail: format!("page {:?} has an empty image_ref", entry.page_id),
                });
            }
            if let Some(prev) = seen.insert(entry.page_id.clone(), lineno) {
                return Err(IndexError::Jsonl {
                    line: lineno,
                    detail: format!(
                        "duplicate page_id {:?} (first declared on line {prev})",
                        entry.page_id
                    ),
                });
            }
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn from_path(path: &Path) -> Result<Self, IndexError> {
        let file = std::fs::File::open(path).map_err(|e| IndexError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_jsonl(std::io::BufReader::new(file))
    }
}

/// One benchmark query: a spoken and/or textual question, the pages that
/// answer it, and an optional reference answer for QA scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub gold_page_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_answer: Option<String>,
}

impl QueryRecord {
    /// The query as handed to the pipeline; spoken audio wins when both
    /// forms are present.
    pub fn query_ref(&self) -> QueryRef {
        match (&self.audio_ref, &self.text) {
            (Some(audio), _) => QueryRef::AudioRef(audio.clone()),
            (None, Some(text)) => QueryRef::Text(text.clone()),
            (None, None) => unreachable!("validated at parse time"),
        }
    }
}

/// Parsed query set (JSONL, one query per line).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuerySet {
    pub entries: Vec<QueryRecord>,
}

impl QuerySet {
    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self, IndexError> {
        let mut entries: Vec<QueryRecord> = Vec::new();
        let mut seen = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| IndexError::Jsonl {
                line: lineno,
                detail: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: QueryRecord =
                serde_json::from_str(&line).map_err(|e| IndexError::Jsonl {
                    line: lineno,
                    detail: e.to_string(),
                })?;
            if entry.audio_ref.is_none() && entry.text.is_none() {
                return Err(IndexError::Jsonl {
                    line: lineno,
                    detail: format!("query {:?} has neither audio_ref nor text", entry.query_id),
                });
            }
            if entry.gold_page_ids.is_empty() {
                return Err(IndexError::Jsonl {
                    line: lineno,
                    detail: format!("query {:?} has no gold_page_ids", entry.query_id),
                });
            }
            if let Some(prev) = seen.insert(entry.query_id.clone(), lineno) {
                return Err(IndexError::Jsonl {
                    line: lineno,
                    detail: format!(
                        "duplicate query_id {:?} (first declared on line {prev})",
                        entry.query_id
                    ),
                });
            }
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn from_path(path: &Path) -> Result<Self, IndexError> {
        let file = std::fs::File::open(path).map_err(|e| IndexError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_jsonl(std::io::BufReader::new(file))
    }
}
