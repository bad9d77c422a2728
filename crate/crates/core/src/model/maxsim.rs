//! Late-interaction MaxSim scoring kernel.
//!
//! The score of a query against a document is the sum, over query rows, of
//! the maximum dot product that row attains against any document row.
//! Values are stored as `f32` but every product and the running sum are
//! accumulated in `f64`, so the result is independent of how callers batch
//! or partition the work.

use super::{ModelError, MultiVec};

/// Sum over query rows of the best dot product against any doc row.
///
/// Deterministic: the same inputs always produce the same bits. For
/// unit-normalized inputs the result lies in `[-q, q]` where `q` is the
/// query row count.
pub fn maxsim(query: &MultiVec, doc: &MultiVec) -> Result<f64, ModelError> {
    if query.dim() != doc.dim() {
        return Err(ModelError::DimMismatch {
            query_dim: query.dim(),
            doc_dim: doc.dim(),
        });
    }
    if query.num_rows() == 0 || doc.num_rows() == 0 {
        // Unreachable for properly constructed MultiVecs (row count >= 1).
        return Err(ModelError::EmptyMultiVec);
    }
    let mut total = 0.0f64;
    for q_row in query.rows() {
        let mut best = f64::NEG_INFINITY;
        for d_row in doc.rows() {
            let dot = dot_f64(q_row, d_row);
            if dot > best {
                best = dot;
            }
        }
        total += best;
    }
    Ok(total)
}

/// Score one query against many documents. Element `i` is bit-identical
/// to `maxsim(query, &docs[i])`; the first dimension mismatch is reported
/// with its index.
pub fn maxsim_batch(query: &MultiVec, docs: &[MultiVec]) -> Result<Vec<f64>, ModelError> {
    if let Some((index, doc)) = docs
        .iter()
        .enumerate()
        .find(|(_, d)| d.dim() != query.dim())
    {
        return Err(ModelError::BatchDimMismatch {
            index,
            query_dim: query.dim(),
            doc_dim: doc.dim(),
        });
    }
    docs.iter().map(|doc| maxsim(query, doc)).collect()
}

#[inline]
fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64) * (y as f64))
        .sum()
}
