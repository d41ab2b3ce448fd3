//! Frame embeddings, query embeddings and per-frame captions.
//!
//! Embeddings travel as KFCE files: a 16-byte header (`"KFCE"`, version,
//! `n_frames`, `dim`, all `u32` little-endian) followed by `n_frames * dim`
//! little-endian `f32` values in row-major order. Values are widened to `f64`
//! on load; all arithmetic happens in double precision.
//!
//! Captions are JSON lines, one `{"index": <frame>, "text": <caption>}`
//! record per line.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KFCE_MAGIC: [u8; 4] = *b"KFCE";
pub const KFCE_VERSION: u32 = 1;
pub const KFCE_HEADER_LEN: usize = 16;

/// Longest caption accepted, in bytes.
pub const MAX_CAPTION_BYTES: usize = 512;

/// Rows with a norm at or below this are treated as degenerate.
const ZERO_NORM: f64 = 1e-12;
const UNIT_TOLERANCE: f64 = 1e-6;

/// `n_frames x dim` frame embeddings, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n_frames: usize,
    dim: usize,
    data: Vec<f64>,
    normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(n_frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if n_frames == 0 || dim == 0 {
            return Err(Error::DimZero);
        }
        if data.len() != n_frames * dim {
            return Err(Error::DimMismatch {
                expected: n_frames * dim,
                found: data.len(),
            });
        }
        Ok(Self {
            n_frames,
            dim,
            data,
            normalized: false,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Cosine similarity of two rows of a normalized matrix.
    pub fn similarity(&self, i: usize, j: usize) -> f64 {
        dot(self.row(i), self.row(j))
    }

    /// Scales every row to unit L2 norm.
    pub fn normalize_rows(&self) -> Result<Self> {
        let mut data = self.data.clone();
        for (i, row) in data.chunks_exact_mut(self.dim).enumerate() {
            normalize_in_place(row).ok_or(Error::ZeroRow(i))?;
        }
        Ok(Self {
            n_frames: self.n_frames,
            dim: self.dim,
            data,
            normalized: true,
        })
    }

    /// Marks an already-unit matrix as normalized after checking every row.
    pub fn assume_normalized(mut self) -> Result<Self> {
        for row in self.rows() {
            if (norm(row) - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::NotNormalized);
            }
        }
        self.normalized = true;
        Ok(self)
    }
}

/// Free-function form of [`EmbeddingMatrix::normalize_rows`].
pub fn normalize_rows(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    m.normalize_rows()
}

/// A single query embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryVector {
    data: Vec<f64>,
    normalized: bool,
}

impl QueryVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::DimZero);
        }
        Ok(Self {
            data,
            normalized: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn normalize(&self) -> Result<Self> {
        let mut data = self.data.clone();
        normalize_in_place(&mut data).ok_or(Error::ZeroRow(0))?;
        Ok(Self {
            data,
            normalized: true,
        })
    }

    /// Marks an already-unit query as normalized after checking its norm.
    pub fn assume_normalized(mut self) -> Result<Self> {
        if (norm(&self.data) - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::NotNormalized);
        }
        self.normalized = true;
        Ok(self)
    }

    /// View as a one-row matrix, the shape the query file uses on disk.
    pub fn to_matrix(&self) -> EmbeddingMatrix {
        EmbeddingMatrix {
            n_frames: 1,
            dim: self.data.len(),
            data: self.data.clone(),
            normalized: self.normalized,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn normalize_in_place(v: &mut [f64]) -> Option<()> {
    let n = norm(v);
    if !(n > ZERO_NORM) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(())
}

/// Encodes a KFCE payload. Values are narrowed to `f32`.
pub fn encode_kfce<W: Write>(
    mut out: W,
    n_frames: usize,
    dim: usize,
    values: &[f64],
) -> Result<()> {
    if n_frames == 0 || dim == 0 {
        return Err(Error::DimZero);
    }
    if values.len() != n_frames * dim {
        return Err(Error::DimMismatch {
            expected: n_frames * dim,
            found: values.len(),
        });
    }
    let header_u32 = |v: usize| -> Result<[u8; 4]> {
        u32::try_from(v)
            .map(u32::to_le_bytes)
            .map_err(|_| Error::MalformedHeader(format!("{v} does not fit in u32")))
    };
    out.write_all(&KFCE_MAGIC)?;
    out.write_all(&KFCE_VERSION.to_le_bytes())?;
    out.write_all(&header_u32(n_frames)?)?;
    out.write_all(&header_u32(dim)?)?;
    for &v in values {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Decodes a KFCE payload into `(n_frames, dim, values)`.
pub fn decode_kfce(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < 4 || bytes[..4] != KFCE_MAGIC {
        return Err(Error::MalformedHeader("missing KFCE magic".into()));
    }
    if bytes.len() < KFCE_HEADER_LEN {
        return Err(Error::MalformedHeader(format!(
            "header is {} bytes, expected {KFCE_HEADER_LEN}",
            bytes.len()
        )));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != KFCE_VERSION {
        return Err(Error::MalformedHeader(format!(
            "unsupported version {version}"
        )));
    }
    let n_frames = word(8) as usize;
    let dim = word(12) as usize;
    if n_frames == 0 || dim == 0 {
        return Err(Error::DimZero);
    }
    let expected = n_frames
        .checked_mul(dim)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::MalformedHeader("payload size overflows".into()))?;
    let payload = &bytes[KFCE_HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((n_frames, dim, values))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path)?;
    let (n, dim, values) = decode_kfce(&bytes)?;
    EmbeddingMatrix::new(n, dim, values)
}

pub fn write_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let out = BufWriter::new(fs::File::create(path)?);
    encode_kfce(out, m.n_frames, m.dim, &m.data)
}

/// Loads a query file: a KFCE file holding exactly one row.
pub fn load_query(path: impl AsRef<Path>) -> Result<QueryVector> {
    let m = load_embeddings(path)?;
    if m.n_frames != 1 {
        return Err(Error::MalformedHeader(format!(
            "query file must hold one row, found {}",
            m.n_frames
        )));
    }
    QueryVector::new(m.data)
}

pub fn write_query(q: &QueryVector, path: impl AsRef<Path>) -> Result<()> {
    write_embeddings(&q.to_matrix(), path)
}

/// Per-frame captions keyed by 0-based frame index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CaptionSet {
    entries: BTreeMap<usize, String>,
}

#[derive(Deserialize)]
struct CaptionLine {
    index: i64,
    text: String,
}

#[derive(Serialize)]
struct CaptionRecord<'a> {
    index: usize,
    text: &'a str,
}

impl CaptionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, index: usize, text: impl Into<String>) -> Result<()> {
        let text = text.into();
        if text.len() > MAX_CAPTION_BYTES {
            return Err(Error::CaptionTooLong {
                index,
                len: text.len(),
                limit: MAX_CAPTION_BYTES,
            });
        }
        if self.entries.contains_key(&index) {
            return Err(Error::DuplicateIndex(index));
        }
        self.entries.insert(index, text);
        Ok(())
    }

    pub fn get(&self, index: usize) -> Option<&str> {
        self.entries.get(&index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.entries.iter().map(|(&i, t)| (i, t.as_str()))
    }

    /// Checks that every caption refers to a frame below `n_frames`.
    pub fn validate_against(&self, n_frames: usize) -> Result<()> {
        match self.entries.keys().next_back() {
            Some(&last) if last >= n_frames => Err(Error::IndexOutOfRange {
                index: last,
                n: n_frames,
            }),
            _ => Ok(()),
        }
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut set = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CaptionLine =
                serde_json::from_str(&line).map_err(|_| Error::MalformedLine(lineno))?;
            let index = usize::try_from(rec.index).map_err(|_| Error::NegativeIndex(lineno))?;
            set.insert(index, rec.text)?;
        }
        Ok(set)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for (index, text) in self.iter() {
            serde_json::to_writer(&mut out, &CaptionRecord { index, text })?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn load_captions(path: impl AsRef<Path>) -> Result<CaptionSet> {
    let file = fs::File::open(path)?;
    CaptionSet::parse(BufReader::new(file))
}

pub fn write_captions(captions: &CaptionSet, path: impl AsRef<Path>) -> Result<()> {
    captions.write_jsonl(BufWriter::new(fs::File::create(path)?))
}
