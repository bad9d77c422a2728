//! On-disk index format.
//!
//! Little-endian throughout; strings are u32-length-prefixed UTF-8. The
//! layout is position-independent of hash ordering: pages appear in
//! knowledge-base order and blocks in page order, so identical inputs
//! serialize to identical bytes.
//!
//! ```text
//! magic       4  bytes  "TLRG"
//! version     u16       currently 1
//! dim         u32       embedding dimension of every page and block
//! page_count  u32
//!   per page:   page_id str, doc_id str, image_ref str,
//!               row_count u32, row_count*dim f32 values
//! block_count u32
//!   per block:  block_id str, page_id str,
//!               bbox x0,y0,x1,y1 u32, category u8 (0 chart, 1 table,
//!               2 text, 3 image), row_count u32, row_count*dim f32 values
//! ```
//!
//! Query-dependent block scores are never persisted; the index is a pure
//! function of the corpus.

use super::{IndexError, KnowledgeBase};
use crate::model::{BBox, BlockCategory, BlockRecord, MultiVec, PageRecord};
use std::collections::HashMap;
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"TLRG";
pub const FORMAT_VERSION: u16 = 1;

/// Serialize a non-empty knowledge base to `path`. The write is
/// deterministic: equal knowledge bases produce byte-identical files.
pub fn save(kb: &KnowledgeBase, path: &Path) -> Result<(), IndexError> {
    let bytes = to_bytes(kb)?;
    std::fs::write(path, bytes).map_err(|e| IndexError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Read, parse, and fully validate an index file.
pub fn load(path: &Path) -> Result<KnowledgeBase, IndexError> {
    let bytes = std::fs::read(path).map_err(|e| IndexError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    from_bytes(&bytes)
}

pub(crate) fn to_bytes(kb: &KnowledgeBase) -> Result<Vec<u8>, IndexError> {
    if kb.is_empty() {
        return Err(IndexError::EmptyKnowledgeBase);
    }
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(kb.dim() as u32).to_le_bytes());
    write_u32(&mut out, kb.len(), "page")?;
    for page in kb.pages() {
        write_str(&mut out, &page.page_id)?;
        write_str(&mut out, &page.doc_id)?;
        write_str(&mut out, &page.image_ref)?;
        write_rows(&mut out, &page.embedding)?;
    }
    let block_total: usize = kb.pages().iter().map(|p| p.blocks.len()).sum();
    write_u32(&mut out, block_total, "block")?;
    for page in kb.pages() {
        for block in &page.blocks {
            write_str(&mut out, &block.block_id)?;
            write_str(&mut out, &block.page_id)?;
            for v in [block.bbox.x0, block.bbox.y0, block.bbox.x1, block.bbox.y1] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(block.category.code());
            write_rows(&mut out, &block.embedding)?;
        }
    }
    Ok(out)
}

pub(crate) fn from_bytes(bytes: &[u8]) -> Result<KnowledgeBase, IndexError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(IndexError::MagicMismatch { found: magic });
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(IndexError::UnsupportedVersion { found: version });
    }
    let dim = r.u32("dim")? as usize;
    let page_count = r.u32("page count")? as usize;
    let mut pages = Vec::new();
    for _ in 0..page_count {
        let page_id = r.string("page_id")?;
        let doc_id = r.string("doc_id")?;
        let image_ref = r.string("image_ref")?;
        let embedding = r.rows(dim, &page_id)?;
        pages.push(PageRecord {
            page_id,
            doc_id,
            image_ref,
            embedding,
            blocks: vec![],
        });
    }
    let by_id: HashMap<String, usize> = pages
        .iter()
        .enumerate()
        .map(|(i, p)| (p.page_id.clone(), i))
        .collect();
    let block_count = r.u32("block count")? as usize;
    for _ in 0..block_count {
        let at = r.pos as u64;
        let block_id = r.string("block_id")?;
        let page_id = r.string("block page_id")?;
        let x0 = r.u32("bbox.x0")?;
        let y0 = r.u32("bbox.y0")?;
        let x1 = r.u32("bbox.x1")?;
        let y1 = r.u32("bbox.y1")?;
        let bbox = BBox::new(x0, y0, x1, y1).map_err(|e| IndexError::Corrupt {
            offset: at,
            detail: e.to_string(),
        })?;
        let code = r.u8("category")?;
        let category = BlockCategory::from_code(code).ok_or(IndexError::Corrupt {
            offset: at,
            detail: format!("unknown category code {code}"),
        })?;
        let embedding = r.rows(dim, &block_id)?;
        let page_index = *by_id.get(&page_id).ok_or_else(|| IndexError::Corrupt {
            offset: at,
            detail: format!("block {block_id:?} references unknown page {page_id:?}"),
        })?;
        pages[page_index].blocks.push(BlockRecord {
            block_id,
            page_id,
            bbox,
            category,
            embedding,
            score: None,
        });
    }
    if r.pos != bytes.len() {
        return Err(IndexError::Corrupt {
            offset: r.pos as u64,
            detail: format!(
                "{} trailing bytes after the block table",
                bytes.len() - r.pos
            ),
        });
    }
    KnowledgeBase::new(pages)
}

fn write_u32(out: &mut Vec<u8>, n: usize, what: &'static str) -> Result<(), IndexError> {
    let v: u32 = n.try_into().map_err(|_| IndexError::TooLarge { what })?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn write_str(out: &mut Vec<u8>, s: &str) -> Result<(), IndexError> {
    write_u32(out, s.len(), "string byte")?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn write_rows(out: &mut Vec<u8>, mv: &MultiVec) -> Result<(), IndexError> {
    write_u32(out, mv.num_rows(), "row")?;
    for v in mv.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], IndexError> {
        if self.buf.len() - self.pos < n {
            return Err(IndexError::Corrupt {
                offset: self.pos as u64,
                detail: format!(
                    "unexpected end of file reading {what} ({n} bytes needed, {} left)",
                    self.buf.len() - self.pos
                ),
            });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8, IndexError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, IndexError> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn string(&mut self, what: &str) -> Result<String, IndexError> {
        let at = self.pos as u64;
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|e| IndexError::Corrupt {
            offset: at,
            detail: format!("{what} is not UTF-8: {e}"),
        })
    }

    fn rows(&mut self, dim: usize, owner: &str) -> Result<MultiVec, IndexError> {
        let at = self.pos as u64;
        let row_count = self.u32("row count")? as usize;
        let total = row_count.checked_mul(dim).ok_or(IndexError::Corrupt {
            offset: at,
            detail: "row count overflows".into(),
        })?;
        let bytes = self.take(total * 4, "embedding rows")?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        MultiVec::from_flat(data, dim.max(1)).map_err(|e| IndexError::Corrupt {
            offset: at,
            detail: format!("embedding of {owner:?}: {e}"),
        })
    }
}
