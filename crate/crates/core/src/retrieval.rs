//! Image-to-text and text-to-image recall@k over paired embedding files.
//!
//! Image and text embeddings are matched by id: the ground-truth partner of
//! image `i` is the text carrying the same id. Scores are cosine similarities
//! of L2-normalized vectors, and ties rank the lower index first.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::jsonl::{self, ReadLinesError};

pub const DEFAULT_KS: [usize; 2] = [1, 10];

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot read embeddings {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: expected dimension {expected}, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("embedding {0:?} is a zero vector")]
    ZeroVector(String),
    #[error("duplicate embedding id {0:?}")]
    DuplicateId(String),
    #[error("embedding file is empty")]
    Empty,
    #[error("image dimension {images} differs from text dimension {texts}")]
    DimMismatch { images: usize, texts: usize },
    #[error("image and text id sets differ (e.g. {0:?})")]
    IdSetMismatch(String),
    #[error("similarity matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("k = {k} outside 1..={n}")]
    KOutOfRange { k: usize, n: usize },
}

/// Id-keyed, row-normalized embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    dim: usize,
    vectors: Vec<f64>,
}

impl EmbeddingSet {
    /// Normalizes every row to unit length.
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, RetrievalError> {
        let dim = rows.first().map(Vec::len).ok_or(RetrievalError::Empty)?;
        if ids.len() != rows.len() {
            return Err(RetrievalError::MalformedLine {
                line: ids.len().min(rows.len()) + 1,
                reason: "ids and rows differ in count".into(),
            });
        }
        let mut seen = HashSet::new();
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        for (i, (id, row)) in ids.iter().zip(&rows).enumerate() {
            if row.len() != dim || dim == 0 {
                return Err(RetrievalError::DimensionMismatch {
                    line: i + 1,
                    expected: dim,
                    found: row.len(),
                });
            }
            if !seen.insert(id.as_str()) {
                return Err(RetrievalError::DuplicateId(id.clone()));
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(RetrievalError::ZeroVector(id.clone()));
            }
            vectors.extend(row.iter().map(|v| v / norm));
        }
        Ok(EmbeddingSet { ids, dim, vectors })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingLine {
    id: String,
    vector: Vec<f64>,
}

/// Reads `{"id":..,"vector":[..]}` lines and normalizes each vector.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet, RetrievalError> {
    let lines = jsonl::read_lines(path).map_err(|e| match e {
        ReadLinesError::Io(source) => RetrievalError::Io {
            path: path.to_path_buf(),
            source,
        },
        ReadLinesError::NotUtf8 { line } => RetrievalError::MalformedLine {
            line,
            reason: "not valid UTF-8".into(),
        },
    })?;
    let mut ids = Vec::with_capacity(lines.len());
    let mut rows = Vec::with_capacity(lines.len());
    let mut dim = None;
    for raw in lines {
        let parsed: EmbeddingLine = serde_json::from_str(&raw.text).map_err(|e| RetrievalError::MalformedLine {
            line: raw.number,
            reason: e.to_string(),
        })?;
        if parsed.vector.is_empty() {
            return Err(RetrievalError::MalformedLine {
                line: raw.number,
                reason: "empty vector".into(),
            });
        }
        let expected = *dim.get_or_insert(parsed.vector.len());
        if parsed.vector.len() != expected {
            return Err(RetrievalError::DimensionMismatch {
                line: raw.number,
                expected,
                found: parsed.vector.len(),
            });
        }
        ids.push(parsed.id);
        rows.push(parsed.vector);
    }
    EmbeddingSet::new(ids, rows)
}

/// Dense row-major matrix of similarity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == m), "ragged similarity rows");
        SimilarityMatrix {
            rows: n,
            cols: m,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// Cosine similarities, images as rows. Columns are reordered so that column
/// `i` holds the text sharing image `i`'s id.
pub fn similarity_matrix(images: &EmbeddingSet, texts: &EmbeddingSet) -> Result<SimilarityMatrix, RetrievalError> {
    if images.dim != texts.dim {
        return Err(RetrievalError::DimMismatch {
            images: images.dim,
            texts: texts.dim,
        });
    }
    let text_index: HashMap<&str, usize> = texts.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    if let Some(id) = texts.ids.iter().find(|id| !images.ids.contains(id)) {
        return Err(RetrievalError::IdSetMismatch(id.clone()));
    }
    let order: Vec<usize> = images
        .ids
        .iter()
        .map(|id| {
            text_index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| RetrievalError::IdSetMismatch(id.clone()))
        })
        .collect::<Result<_, _>>()?;

    let n = images.len();
    let m = order.len();
    let mut data = vec![0.0; n * m];
    data.par_chunks_mut(m.max(1)).enumerate().for_each(|(i, row)| {
        let a = images.row(i);
        for (j, &t) in order.iter().enumerate() {
            row[j] = a
                .iter()
                .zip(texts.row(t))
                .map(|(x, y)| x * y)
                .sum::<f64>()
                .clamp(-1.0, 1.0);
        }
    });
    Ok(SimilarityMatrix { rows: n, cols: m, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ImageToText,
    TextToImage,
}

impl Direction {
    pub fn tag(self) -> &'static str {
        match self {
            Direction::ImageToText => "i2t",
            Direction::TextToImage => "t2i",
        }
    }
}

/// Zero-based rank of the ground-truth item for query `q`: the number of
/// candidates scoring strictly higher, plus lower-indexed candidates that tie.
fn true_rank(score: impl Fn(usize) -> f64, q: usize, n: usize) -> usize {
    let target = score(q);
    (0..n)
        .filter(|&j| {
            let s = score(j);
            s > target || (s == target && j < q)
        })
        .count()
}

/// Percentage of queries whose partner ranks within the top `k`.
pub fn recall_at_k(sim: &SimilarityMatrix, k: usize, direction: Direction) -> Result<f64, RetrievalError> {
    if sim.rows != sim.cols {
        return Err(RetrievalError::NotSquare {
            rows: sim.rows,
            cols: sim.cols,
        });
    }
    let n = sim.rows;
    if k == 0 || k > n {
        return Err(RetrievalError::KOutOfRange { k, n });
    }
    let hits = (0..n)
        .into_par_iter()
        .filter(|&q| {
            let rank = match direction {
                Direction::ImageToText => true_rank(|j| sim.get(q, j), q, n),
                Direction::TextToImage => true_rank(|j| sim.get(j, q), q, n),
            };
            rank < k
        })
        .count();
    Ok(100.0 * hits as f64 / n as f64)
}

/// Recall table for both directions at each requested k.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub n_queries: usize,
    pub ks: Vec<usize>,
    pub i2t: Vec<f64>,
    pub t2i: Vec<f64>,
}

impl RetrievalReport {
    pub fn recall(&self, direction: Direction, k: usize) -> Option<f64> {
        let idx = self.ks.iter().position(|&x| x == k)?;
        Some(match direction {
            Direction::ImageToText => self.i2t[idx],
            Direction::TextToImage => self.t2i[idx],
        })
    }

    fn columns(&self) -> impl Iterator<Item = (String, f64)> + '_ {
        let i2t = self.ks.iter().zip(&self.i2t).map(|(k, v)| (format!("i2t@{k}"), *v));
        let t2i = self.ks.iter().zip(&self.t2i).map(|(k, v)| (format!("t2i@{k}"), *v));
        i2t.chain(t2i)
    }

    /// `{"n_queries":n,"i2t@1":..,"i2t@10":..,"t2i@1":..,"t2i@10":..}`
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        map.insert("n_queries".into(), self.n_queries.into());
        for (name, v) in self.columns() {
            map.insert(name, v.into());
        }
        serde_json::Value::Object(map)
    }

    /// Aligned plain-text table, one header row and one value row.
    pub fn render_table(&self) -> String {
        let cols: Vec<(String, f64)> = self.columns().collect();
        let width = cols.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "n");
        for (name, _) in &cols {
            let _ = write!(out, " {name:>width$}");
        }
        out.push('\n');
        let _ = write!(out, "{:<10}", self.n_queries);
        for (_, v) in &cols {
            let _ = write!(out, " {v:>width$.2}");
        }
        out.push('\n');
        out
    }
}

/// Scores both directions at `ks` from a single similarity matrix.
pub fn eval_report(
    images: &EmbeddingSet,
    texts: &EmbeddingSet,
    ks: &[usize],
) -> Result<RetrievalReport, RetrievalError> {
    let sim = similarity_matrix(images, texts)?;
    report_from_similarity(&sim, ks)
}

pub fn report_from_similarity(sim: &SimilarityMatrix, ks: &[usize]) -> Result<RetrievalReport, RetrievalError> {
    let mut report = RetrievalReport {
        n_queries: sim.rows,
        ks: ks.to_vec(),
        i2t: Vec::with_capacity(ks.len()),
        t2i: Vec::with_capacity(ks.len()),
    };
    for &k in ks {
        report.i2t.push(recall_at_k(sim, k, Direction::ImageToText)?);
        report.t2i.push(recall_at_k(sim, k, Direction::TextToImage)?);
    }
    Ok(report)
}
