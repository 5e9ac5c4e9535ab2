//! Exact inner-product top-K search over a dense row-major matrix.
//!
//! Rows are stored as `f32`; every dot product is accumulated in `f64`, one
//! row at a time in column order, so results are bit-reproducible regardless
//! of how queries are distributed across threads. Ties are broken by the
//! lower row number.

use alloc::collections::{BTreeSet, BinaryHeap};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

/// Magic bytes opening a serialized index.
pub const MAGIC: &[u8; 8] = b"MRAGIDX1";

const BLOCK_ROWS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IndexError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("duplicate unit id {0:?}")]
    DuplicateUnitId(String),
    #[error("index has no rows")]
    Empty,
    #[error("vectors must have at least one dimension")]
    ZeroDim,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("id longer than 65535 bytes")]
    IdTooLong,
    #[error("bad magic bytes")]
    BadMagic,
    #[error("corrupt length: {0}")]
    CorruptLength(&'static str),
    #[error("id is not valid UTF-8")]
    BadString,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub unit_id: String,
    pub article_id: String,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitHit {
    pub row: usize,
    pub unit_id: String,
    pub article_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    unit_ids: Vec<String>,
    article_ids: Vec<String>,
    matrix: Vec<f32>,
}

/// Heap entry ordered so that the *worst* hit is the maximum.
#[derive(Clone, Copy)]
struct Worst {
    score: f64,
    row: usize,
}

impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.row.cmp(&other.row))
    }
}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Worst {}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

impl VectorIndex {
    pub fn build(entries: Vec<IndexEntry>) -> Result<Self, IndexError> {
        let dim = entries.first().ok_or(IndexError::Empty)?.vector.len();
        if dim == 0 {
            return Err(IndexError::ZeroDim);
        }
        let mut index = Self {
            dim,
            unit_ids: Vec::with_capacity(entries.len()),
            article_ids: Vec::with_capacity(entries.len()),
            matrix: Vec::with_capacity(entries.len() * dim),
        };
        for e in entries {
            if e.vector.len() != dim {
                return Err(IndexError::DimMismatch {
                    expected: dim,
                    got: e.vector.len(),
                });
            }
            index.unit_ids.push(e.unit_id);
            index.article_ids.push(e.article_id);
            index.matrix.extend_from_slice(&e.vector);
        }
        index.check_ids()?;
        Ok(index)
    }

    fn check_ids(&self) -> Result<(), IndexError> {
        let mut seen = BTreeSet::new();
        for (u, a) in self.unit_ids.iter().zip(&self.article_ids) {
            if u.len() > u16::MAX as usize || a.len() > u16::MAX as usize {
                return Err(IndexError::IdTooLong);
            }
            if !seen.insert(u.as_str()) {
                return Err(IndexError::DuplicateUnitId(u.clone()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn unit_id(&self, i: usize) -> &str {
        &self.unit_ids[i]
    }

    pub fn article_id(&self, i: usize) -> &str {
        &self.article_ids[i]
    }

    /// Exact dot product of `q` with row `i`.
    pub fn score(&self, q: &[f32], i: usize) -> f64 {
        dot(q, self.row(i))
    }

    /// The `k` rows with the highest dot product against `q`, best first.
    pub fn top_k_units(&self, q: &[f32], k: usize) -> Result<Vec<UnitHit>, IndexError> {
        if q.len() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                got: q.len(),
            });
        }
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        let k = k.min(self.rows());
        let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(k + 1);
        let block = BLOCK_ROWS * self.dim;
        for (b, chunk) in self.matrix.chunks(block).enumerate() {
            let base = b * BLOCK_ROWS;
            for (r, row) in chunk.chunks_exact(self.dim).enumerate() {
                let cand = Worst {
                    score: dot(q, row),
                    row: base + r,
                };
                if heap.len() < k {
                    heap.push(cand);
                } else if cand < *heap.peek().unwrap() {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        let mut best = heap.into_vec();
        best.sort();
        Ok(best
            .into_iter()
            .map(|w| UnitHit {
                row: w.row,
                unit_id: self.unit_ids[w.row].clone(),
                article_id: self.article_ids[w.row].clone(),
                score: w.score,
            })
            .collect())
    }

    /// Serialize in the little-endian `MRAGIDX1` layout: magic, u32 dim,
    /// u64 row count, row-major f32 matrix, then per row a u16-prefixed
    /// unit id followed by a u16-prefixed article id.
    pub fn to_bytes(&self) -> Vec<u8> {
        let ids: usize = self
            .unit_ids
            .iter()
            .chain(&self.article_ids)
            .map(|s| s.len() + 2)
            .sum();
        let mut out = Vec::with_capacity(20 + self.matrix.len() * 4 + ids);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        for x in &self.matrix {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for (u, a) in self.unit_ids.iter().zip(&self.article_ids) {
            for s in [u, a] {
                out.extend_from_slice(&(s.len() as u16).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "header")? != MAGIC {
            return Err(IndexError::BadMagic);
        }
        let dim = u32::from_le_bytes(r.array("dim")?) as usize;
        let rows = u64::from_le_bytes(r.array("row count")?);
        if rows == 0 {
            return Err(IndexError::Empty);
        }
        if dim == 0 {
            return Err(IndexError::ZeroDim);
        }
        let cells = (rows as usize)
            .checked_mul(dim)
            .filter(|c| c.checked_mul(4).is_some_and(|b| b <= bytes.len()))
            .ok_or(IndexError::CorruptLength("matrix"))?;
        let rows = rows as usize;
        let raw = r.take(cells * 4, "matrix")?;
        let matrix = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut unit_ids = Vec::with_capacity(rows);
        let mut article_ids = Vec::with_capacity(rows);
        for _ in 0..rows {
            unit_ids.push(r.string()?);
            article_ids.push(r.string()?);
        }
        if r.pos != bytes.len() {
            return Err(IndexError::CorruptLength("trailing bytes"));
        }
        let index = Self {
            dim,
            unit_ids,
            article_ids,
            matrix,
        };
        index.check_ids()?;
        Ok(index)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(IndexError::CorruptLength(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], IndexError> {
        Ok(self.take(N, what)?.try_into().unwrap())
    }

    fn string(&mut self) -> Result<String, IndexError> {
        let len = u16::from_le_bytes(self.array("string table")?) as usize;
        let raw = self.take(len, "string table")?;
        core::str::from_utf8(raw)
            .map(String::from)
            .map_err(|_| IndexError::BadString)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn entry(u: &str, a: &str, v: &[f32]) -> IndexEntry {
        IndexEntry {
            unit_id: u.into(),
            article_id: a.into(),
            vector: v.to_vec(),
        }
    }

    fn identity3() -> VectorIndex {
        VectorIndex::build(vec![
            entry("u0", "a0", &[1.0, 0.0, 0.0]),
            entry("u1", "a1", &[0.0, 1.0, 0.0]),
            entry("u2", "a2", &[0.0, 0.0, 1.0]),
        ])
        .unwrap()
    }

    #[test]
    fn rows_in_insertion_order() {
        let idx = VectorIndex::build(vec![
            entry("x", "a", &[1.0, 2.0, 3.0, 4.0]),
            entry("y", "a", &[5.0, 6.0, 7.0, 8.0]),
            entry("z", "b", &[9.0, 1.0, 2.0, 3.0]),
        ])
        .unwrap();
        assert_eq!(idx.rows(), 3);
        assert_eq!(idx.row(1), &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(idx.unit_id(2), "z");
        assert_eq!(idx.article_id(1), "a");
    }

    #[test]
    fn build_errors() {
        assert_eq!(VectorIndex::build(vec![]), Err(IndexError::Empty));
        assert_eq!(
            VectorIndex::build(vec![entry("a", "a", &[1.0]), entry("b", "b", &[1.0, 2.0])]),
            Err(IndexError::DimMismatch { expected: 1, got: 2 })
        );
        assert_eq!(
            VectorIndex::build(vec![entry("a", "x", &[1.0]), entry("a", "y", &[2.0])]),
            Err(IndexError::DuplicateUnitId("a".into()))
        );
    }

    #[test]
    fn identity_basis() {
        let idx = identity3();
        let hits = idx.top_k_units(&[1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].row, 0);
        assert_eq!(hits[0].score, 1.0);
        let all = idx.top_k_units(&[0.1, 0.3, 0.2], 3).unwrap();
        assert_eq!(all.iter().map(|h| h.row).collect::<Vec<_>>(), [1, 2, 0]);
        assert_eq!(idx.top_k_units(&[1.0, 1.0, 1.0], 10).unwrap().len(), 3);
    }

    #[test]
    fn ties_prefer_lower_rows() {
        let entries = (0..200)
            .map(|i| entry(&format!("u{i}"), "a", &[1.0, 0.0]))
            .collect();
        let idx = VectorIndex::build(entries).unwrap();
        let hits = idx.top_k_units(&[1.0, 0.0], 5).unwrap();
        assert_eq!(hits.iter().map(|h| h.row).collect::<Vec<_>>(), [0, 1, 2, 3, 4]);
    }

    #[test]
    fn query_errors() {
        let idx = identity3();
        assert_eq!(
            idx.top_k_units(&[1.0], 1),
            Err(IndexError::DimMismatch { expected: 3, got: 1 })
        );
        assert_eq!(idx.top_k_units(&[1.0, 0.0, 0.0], 0), Err(IndexError::InvalidK));
    }

    #[test]
    fn bytes_round_trip_and_corruption() {
        let idx = identity3();
        let bytes = idx.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(VectorIndex::from_bytes(&bytes).unwrap(), idx);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(VectorIndex::from_bytes(&bad), Err(IndexError::BadMagic));
        for cut in [4, 12, 30, bytes.len() - 1] {
            assert!(matches!(
                VectorIndex::from_bytes(&bytes[..cut]),
                Err(IndexError::CorruptLength(_))
            ));
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(VectorIndex::from_bytes(&long), Err(IndexError::CorruptLength(_))));
    }
}
