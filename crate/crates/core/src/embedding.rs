//! Embedding interchange format and the similarity kernel.
//!
//! An embedding file is UTF-8 JSON lines. The first line is a header, every
//! following non-blank line is one record:
//!
//! ```text
//! {"header": {"encoder": "clip-vit-b32", "silhouette": "white_on_black", "dims": {"object_rgb": 512}}}
//! {"id": "chair_01", "modality": "object_rgb", "vector": [0.1, -0.4, ...]}
//! ```
//!
//! Vectors may be written unnormalized; [`EmbeddingStore`] normalizes on load.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Silhouette raster convention shared by preprocessing and the encoder.
pub const SILHOUETTE_POLARITY: &str = "white_on_black";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    ObjectRgb,
    ObjectSilhouette,
    QueryText,
    QueryShape,
}

impl Modality {
    pub const ALL: [Modality; 4] = [
        Modality::ObjectRgb,
        Modality::ObjectSilhouette,
        Modality::QueryText,
        Modality::QueryShape,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ObjectRgb => "object_rgb",
            Self::ObjectSilhouette => "object_silhouette",
            Self::QueryText => "query_text",
            Self::QueryShape => "query_shape",
        }
    }

    /// Object-side modalities describe catalog entries; the rest describe scenes.
    pub fn is_object(&self) -> bool {
        matches!(self, Self::ObjectRgb | Self::ObjectSilhouette)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown modality {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum VectorError {
    #[error("zero-norm vector cannot be normalized")]
    ZeroVector,
    #[error("vector contains a non-finite value")]
    NonFinite,
    #[error("vector dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
}

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("embedding file has no header line")]
    MissingHeader,
    #[error("{modality}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        modality: Modality,
        expected: usize,
        got: usize,
    },
    #[error("duplicate record ({modality}, {id})")]
    DuplicateRecord { modality: Modality, id: String },
    #[error("record ({modality}, {id}) is a zero vector")]
    ZeroVector { modality: Modality, id: String },
    #[error("record ({modality}, {id}) contains a non-finite value")]
    NonFinite { modality: Modality, id: String },
    #[error("silhouette polarity mismatch: expected {expected:?}, file declares {found:?}")]
    PolarityMismatch { expected: String, found: String },
}

/// One identified vector with its modality tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub modality: Modality,
    pub vector: Vec<f32>,
}

/// Provenance written as the first line of every embedding file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub encoder: String,
    pub silhouette: String,
    #[serde(default)]
    pub dims: BTreeMap<Modality, usize>,
}

impl EmbeddingHeader {
    pub fn new(encoder: impl Into<String>) -> Self {
        Self {
            encoder: encoder.into(),
            silhouette: SILHOUETTE_POLARITY.to_owned(),
            dims: BTreeMap::new(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: EmbeddingHeader,
}

/// Single-accumulator dot product in ascending index order.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Scales `v` to unit Euclidean length.
///
/// ```
/// let u = samurai::embedding::normalize(&[3.0, 4.0]).unwrap();
/// assert_eq!(u, vec![0.6, 0.8]);
/// ```
pub fn normalize(v: &[f32]) -> Result<Vec<f32>, VectorError> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(VectorError::NonFinite);
    }
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(VectorError::ZeroVector);
    }
    Ok(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f32, VectorError> {
    if a.len() != b.len() {
        return Err(VectorError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(dot(a, b).clamp(-1.0, 1.0))
}

/// Immutable, unit-normalized vectors keyed by `(modality, id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    header: EmbeddingHeader,
    dims: BTreeMap<Modality, usize>,
    vectors: BTreeMap<Modality, BTreeMap<String, Vec<f32>>>,
}

impl EmbeddingStore {
    /// Validates and normalizes `records`. Line numbers in errors are not
    /// available on this path.
    pub fn from_records<I>(header: EmbeddingHeader, records: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = EmbeddingRecord>,
    {
        let mut store = Self::empty(header)?;
        for rec in records {
            store.insert(rec)?;
        }
        Ok(store)
    }

    fn empty(header: EmbeddingHeader) -> Result<Self, EmbeddingError> {
        if header.silhouette != SILHOUETTE_POLARITY {
            return Err(EmbeddingError::PolarityMismatch {
                expected: SILHOUETTE_POLARITY.to_owned(),
                found: header.silhouette,
            });
        }
        Ok(Self {
            header,
            dims: BTreeMap::new(),
            vectors: BTreeMap::new(),
        })
    }

    fn insert(&mut self, rec: EmbeddingRecord) -> Result<(), EmbeddingError> {
        let EmbeddingRecord { id, modality, vector } = rec;
        let got = vector.len();
        let expected = self
            .dims
            .get(&modality)
            .or_else(|| self.header.dims.get(&modality))
            .copied();
        if let Some(expected) = expected {
            if expected != got {
                return Err(EmbeddingError::DimensionMismatch {
                    modality,
                    expected,
                    got,
                });
            }
        }
        let unit = match normalize(&vector) {
            Ok(u) => u,
            Err(VectorError::ZeroVector) => return Err(EmbeddingError::ZeroVector { modality, id }),
            Err(_) => return Err(EmbeddingError::NonFinite { modality, id }),
        };
        match self.vectors.entry(modality).or_default().entry(id) {
            Entry::Occupied(e) => Err(EmbeddingError::DuplicateRecord {
                modality,
                id: e.key().clone(),
            }),
            Entry::Vacant(e) => {
                e.insert(unit);
                self.dims.insert(modality, got);
                Ok(())
            }
        }
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, EmbeddingError> {
        let mut store: Option<Self> = None;
        for (n, line) in reader.lines().enumerate() {
            let line_no = n + 1;
            let line = line.map_err(|e| EmbeddingError::ParseError {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |e: serde_json::Error| EmbeddingError::ParseError {
                line: line_no,
                message: e.to_string(),
            };
            match store.as_mut() {
                None => {
                    let HeaderLine { header } = serde_json::from_str(&line).map_err(|e| {
                        if line.contains("\"header\"") {
                            parse_err(e)
                        } else {
                            EmbeddingError::MissingHeader
                        }
                    })?;
                    store = Some(Self::empty(header)?);
                }
                Some(s) => {
                    let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(parse_err)?;
                    if rec.vector.is_empty() {
                        return Err(EmbeddingError::ParseError {
                            line: line_no,
                            message: format!("record ({}, {}) has an empty vector", rec.modality, rec.id),
                        });
                    }
                    s.insert(rec)?;
                }
            }
        }
        store.ok_or(EmbeddingError::MissingHeader)
    }

    pub fn header(&self) -> &EmbeddingHeader {
        &self.header
    }

    pub fn dim(&self, modality: Modality) -> Option<usize> {
        self.dims.get(&modality).copied()
    }

    pub fn get(&self, modality: Modality, id: &str) -> Option<&[f32]> {
        self.vectors.get(&modality)?.get(id).map(Vec::as_slice)
    }

    pub fn contains(&self, modality: Modality, id: &str) -> bool {
        self.get(modality, id).is_some()
    }

    /// Ids present for `modality`, ascending.
    pub fn ids(&self, modality: Modality) -> impl Iterator<Item = &str> + '_ {
        self.vectors
            .get(&modality)
            .into_iter()
            .flat_map(|m| m.keys().map(String::as_str))
    }

    pub fn len(&self) -> usize {
        self.vectors.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore, EmbeddingError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| EmbeddingError::Io {
        path: path.to_owned(),
        source,
    })?;
    EmbeddingStore::from_reader(BufReader::new(file))
}

/// Writes a header line followed by one line per record, LF-terminated.
pub fn write_embeddings<W: Write>(
    mut out: W,
    header: &EmbeddingHeader,
    records: &[EmbeddingRecord],
) -> std::io::Result<()> {
    let line = serde_json::to_string(&HeaderLine { header: header.clone() })?;
    out.write_all(line.as_bytes())?;
    out.write_all(b"\n")?;
    for rec in records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
