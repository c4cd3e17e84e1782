//! Exact flat vector index over unit-normalized embeddings.
//!
//! Search is a full scan: every stored vector is scored by dot product with
//! the query (cosine, since both sides are unit length) and the top `k` are
//! returned, ties going to the earlier insertion.
//!
//! On-disk layout, little-endian:
//!
//! ```text
//! "PGIX" | version u16 | dim u32 | count u64
//! count × ( id_len u32 | id utf-8 | label u8 | f32 × dim )
//! crc32 u32 over everything before it
//! ```

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::email::Label;
use crate::embedding::EmbeddingVector;

const MAGIC: &[u8; 4] = b"PGIX";
pub const FORMAT_VERSION: u16 = 1;
pub const UNIT_TOLERANCE: f64 = 1e-6;
const HEADER_LEN: usize = 4 + 2 + 4 + 8;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum IndexError {
    #[error("email id {0:?} already indexed")]
    DuplicateId(String),
    #[error("vector norm {0} is not 1 within tolerance")]
    NotNormalized(f64),
    #[error("query vector has zero norm")]
    ZeroVector,
    #[error("dimension mismatch: index has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("index format mismatch: {0}")]
    FormatVersionMismatch(String),
    #[error("corrupt index file: {0}")]
    CorruptFile(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub email_id: String,
    pub vector: EmbeddingVector,
    pub label: Option<Label>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub email_id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Stored {
    id: String,
    label: Option<Label>,
    vector: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlatIndex {
    dim: usize,
    entries: Vec<Stored>,
    by_id: HashMap<String, usize>,
}

impl FlatIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            by_id: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Indexed ids in insertion order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn label_of(&self, id: &str) -> Option<Label> {
        self.by_id.get(id).and_then(|&i| self.entries[i].label)
    }

    /// Stored vector for `id`, widened back to f64.
    pub fn vector_of(&self, id: &str) -> Option<EmbeddingVector> {
        let stored = &self.entries[*self.by_id.get(id)?];
        EmbeddingVector::new(stored.vector.iter().map(|&x| f64::from(x)).collect()).ok()
    }

    pub fn add(&mut self, entry: IndexEntry) -> Result<(), IndexError> {
        if entry.vector.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: entry.vector.dim(),
            });
        }
        let norm = entry.vector.norm();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(IndexError::NotNormalized(norm));
        }
        if self.by_id.contains_key(&entry.email_id) {
            return Err(IndexError::DuplicateId(entry.email_id));
        }
        self.by_id.insert(entry.email_id.clone(), self.entries.len());
        self.entries.push(Stored {
            id: entry.email_id,
            label: entry.label,
            vector: entry.vector.values().iter().map(|&x| x as f32).collect(),
        });
        Ok(())
    }

    fn score(&self, query: &[f64], stored: &Stored) -> f64 {
        stored.vector.iter().zip(query).map(|(&a, &b)| f64::from(a) * b).sum()
    }

    /// Top-`k` entries by dot product with `query`, skipping `exclude`.
    /// Returns fewer than `k` hits only when the index runs out.
    pub fn search(
        &self,
        query: &EmbeddingVector,
        k: usize,
        exclude: &HashSet<String>,
    ) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let norm = query.norm();
        if norm < 1e-12 {
            return Err(IndexError::ZeroVector);
        }
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(IndexError::NotNormalized(norm));
        }

        let q = query.values();
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| !exclude.contains(&e.id))
            .map(|(i, e)| (self.score(q, e), i))
            .collect();
        let by_rank = |a: &(f64, usize), b: &(f64, usize)| -> Ordering { b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)) };
        let take = k.min(scored.len());
        if take < scored.len() && take > 0 {
            scored.select_nth_unstable_by(take - 1, by_rank);
            scored.truncate(take);
        }
        scored.sort_by(by_rank);
        Ok(scored
            .into_iter()
            .take(take)
            .enumerate()
            .map(|(r, (score, i))| SearchHit {
                email_id: self.entries[i].id.clone(),
                score,
                rank: r + 1,
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.entries.len() * (self.dim * 4 + 16) + 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            buf.extend_from_slice(&(e.id.len() as u32).to_le_bytes());
            buf.extend_from_slice(e.id.as_bytes());
            buf.push(match e.label {
                None => 0,
                Some(Label::Legitimate) => 1,
                Some(Label::Phishing) => 2,
            });
            for x in &e.vector {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    /// Parses an index image. `expected_dim`, when given, must match the
    /// stored dimension.
    pub fn from_bytes(bytes: &[u8], expected_dim: Option<usize>) -> Result<Self, IndexError> {
        let corrupt = |m: &str| IndexError::CorruptFile(m.to_string());
        if bytes.len() < HEADER_LEN + 4 {
            return Err(corrupt("file shorter than header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (payload, tail) = bytes.split_at(bytes.len() - 4);
        let stored_crc = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(payload) != stored_crc {
            return Err(corrupt("checksum mismatch"));
        }

        let mut r = Reader { buf: payload, pos: 4 };
        let version = u16::from_le_bytes(r.take_array()?);
        if version != FORMAT_VERSION {
            return Err(IndexError::FormatVersionMismatch(format!(
                "file version {version}, supported {FORMAT_VERSION}"
            )));
        }
        let dim = u32::from_le_bytes(r.take_array()?) as usize;
        if let Some(want) = expected_dim {
            if want != dim {
                return Err(IndexError::FormatVersionMismatch(format!(
                    "file dimension {dim}, engine configured for {want}"
                )));
            }
        }
        if dim == 0 {
            return Err(corrupt("zero dimension"));
        }
        let count = u64::from_le_bytes(r.take_array()?);

        let mut index = FlatIndex::new(dim);
        for _ in 0..count {
            let id_len = u32::from_le_bytes(r.take_array()?) as usize;
            let id = std::str::from_utf8(r.take(id_len)?)
                .map_err(|_| corrupt("id is not utf-8"))?
                .to_string();
            let label = match r.take(1)?[0] {
                0 => None,
                1 => Some(Label::Legitimate),
                2 => Some(Label::Phishing),
                _ => return Err(corrupt("unknown label byte")),
            };
            let raw = r.take(dim * 4)?;
            let vector: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if index.by_id.insert(id.clone(), index.entries.len()).is_some() {
                return Err(corrupt("duplicate id"));
            }
            index.entries.push(Stored { id, label, vector });
        }
        if r.pos != payload.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        fs::write(path, self.to_bytes()).map_err(|e| IndexError::Io(e.to_string()))
    }

    pub fn load(path: &Path, expected_dim: Option<usize>) -> Result<Self, IndexError> {
        let bytes = fs::read(path).map_err(|e| IndexError::Io(e.to_string()))?;
        Self::from_bytes(&bytes, expected_dim)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| IndexError::CorruptFile("truncated entry".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn take_array<const N: usize>(&mut self) -> Result<[u8; N], IndexError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}
