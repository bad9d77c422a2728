//! Domain types shared across the engine: multi-vector embeddings, page and
//! block records, and ranked/refined retrieval results.

mod maxsim;

pub use maxsim::{maxsim, maxsim_batch};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from constructing or combining embedding types.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("multi-vector must contain at least one row")]
    EmptyMultiVec,
    #[error("invalid dimension {dim} for {len} values (len must be a positive multiple of dim)")]
    InvalidDim { dim: usize, len: usize },
    #[error("row {row} has dimension {got}, expected {expected}")]
    RaggedRow {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("dimension mismatch: query dim {query_dim} vs doc dim {doc_dim}")]
    DimMismatch { query_dim: usize, doc_dim: usize },
    #[error("dimension mismatch at doc index {index}: query dim {query_dim} vs doc dim {doc_dim}")]
    BatchDimMismatch {
        index: usize,
        query_dim: usize,
        doc_dim: usize,
    },
    #[error("row {row} has zero L2 norm and cannot be normalized")]
    ZeroNormRow { row: usize },
    #[error("invalid bbox ({x0},{y0})-({x1},{y1}): requires x0 < x1 and y0 < y1")]
    InvalidBBox { x0: u32, y0: u32, x1: u32, y1: u32 },
}

/// Row L2 norms within this distance of 1.0 count as normalized.
pub const NORM_TOLERANCE: f64 = 1e-4;

/// An ordered list of fixed-dimension `f32` rows: one embedding row per
/// query token / image patch. All rows share the same dimension and there
/// is always at least one row.
#[derive(Debug, Clone)]
pub struct MultiVec {
    data: Vec<f32>,
    dim: usize,
    normalized: bool,
}

impl MultiVec {
    /// Build from row vectors. Fails on zero rows, a zero dimension, or
    /// rows of unequal length.
    pub fn new(rows: Vec<Vec<f32>>) -> Result<Self, ModelError> {
        if rows.is_empty() {
            return Err(ModelError::EmptyMultiVec);
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(ModelError::InvalidDim { dim, len: 0 });
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(ModelError::RaggedRow {
                    row: i,
                    got: row.len(),
                    expected: dim,
                });
            }
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            data.extend_from_slice(row);
        }
        Ok(Self::from_parts(data, dim))
    }

    /// Build from a flat row-major buffer.
    pub fn from_flat(data: Vec<f32>, dim: usize) -> Result<Self, ModelError> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(ModelError::InvalidDim {
                dim,
                len: data.len(),
            });
        }
        if data.is_empty() {
            return Err(ModelError::EmptyMultiVec);
        }
        Ok(Self::from_parts(data, dim))
    }

    fn from_parts(data: Vec<f32>, dim: usize) -> Self {
        let normalized = data
            .chunks_exact(dim)
            .all(|row| (l2_norm(row) - 1.0).abs() <= NORM_TOLERANCE);
        Self {
            data,
            dim,
            normalized,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_rows(&self) -> usize {
        self.data.len() / self.dim
    }

    /// True when every row's L2 norm is within `NORM_TOLERANCE` of 1.0.
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Flat row-major view of the underlying values.
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Rescale every row to unit L2 norm. Row order is preserved; a row
    /// whose norm is zero (or not finite) is rejected with its index.
    pub fn normalize(&self) -> Result<MultiVec, ModelError> {
        let mut data = Vec::with_capacity(self.data.len());
        for (i, row) in self.rows().enumerate() {
            let norm = l2_norm(row);
            if norm == 0.0 || !norm.is_finite() {
                return Err(ModelError::ZeroNormRow { row: i });
            }
            data.extend(row.iter().map(|&x| (x as f64 / norm) as f32));
        }
        Ok(MultiVec::from_parts(data, self.dim))
    }
}

/// Equality is bit-exact on the stored values; the cached normalized flag
/// is derived from the data and never disagrees between equal inputs.
impl PartialEq for MultiVec {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Eq for MultiVec {}

pub(crate) fn l2_norm(row: &[f32]) -> f64 {
    row.iter()
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt()
}

/// Content category of a layout block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockCategory {
    Chart,
    Table,
    Text,
    Image,
}

impl BlockCategory {
    /// Stable on-disk code.
    pub fn code(self) -> u8 {
        match self {
            BlockCategory::Chart => 0,
            BlockCategory::Table => 1,
            BlockCategory::Text => 2,
            BlockCategory::Image => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(BlockCategory::Chart),
            1 => Some(BlockCategory::Table),
            2 => Some(BlockCategory::Text),
            3 => Some(BlockCategory::Image),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BlockCategory::Chart => "chart",
            BlockCategory::Table => "table",
            BlockCategory::Text => "text",
            BlockCategory::Image => "image",
        }
    }
}

/// Axis-aligned region in page pixel coordinates. Serialized as
/// `[x0, y0, x1, y1]`; construction requires `x0 < x1` and `y0 < y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self, ModelError> {
        if x0 >= x1 || y0 >= y1 {
            return Err(ModelError::InvalidBBox { x0, y0, x1, y1 });
        }
        Ok(Self { x0, y0, x1, y1 })
    }
}

impl TryFrom<[u32; 4]> for BBox {
    type Error = ModelError;

    fn try_from(v: [u32; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl std::fmt::Display for BBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.x0, self.y0, self.x1, self.y1)
    }
}

/// One detected layout region of a page, with its embedding and an
/// optional query-dependent relevance score (unset until scored).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRecord {
    pub block_id: String,
    pub page_id: String,
    pub bbox: BBox,
    pub category: BlockCategory,
    pub embedding: MultiVec,
    pub score: Option<f64>,
}

/// A knowledge-base page: identity, source image reference, multi-vector
/// embedding, and any layout blocks attached at ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct PageRecord {
    pub page_id: String,
    pub doc_id: String,
    pub image_ref: String,
    pub embedding: MultiVec,
    pub blocks: Vec<BlockRecord>,
}

/// A stage-one retrieval hit: page id, MaxSim score, 1-based rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPage {
    pub page_id: String,
    pub score: f64,
    pub rank: usize,
}

/// A candidate page after stage-two refinement: surviving blocks sorted
/// by descending score, or a whole-page fallback when the threshold
/// eliminated every block.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedPage {
    pub page_id: String,
    pub ordered_blocks: Vec<BlockRecord>,
    pub fallback_full_page: bool,
}
