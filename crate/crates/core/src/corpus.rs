//! Corpus records, aligned pairs and the JSONL manifest that carries them.
//!
//! A manifest line is either a figure record or an aligned pair, told apart by
//! a leading `"kind"` key:
//!
//! ```text
//! {"kind":"record","figure_id":"f1","image_path":"f1.png","caption":"(A) MRI. (B) CT."}
//! {"kind":"pair","pair_id":"f1#0","figure_id":"f1","bbox":[0,0,40,40],"label":"a","text":"MRI.","status":"unique_label"}
//! ```
//!
//! [`save_manifest`] writes records sorted by `figure_id` and pairs sorted by
//! `(figure_id, bbox.x, bbox.y)`, so equal manifests always serialize to the
//! same bytes.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, ReadLinesError};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest not found: {0}")]
    MissingFile(PathBuf),
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("duplicate figure_id {0:?}")]
    DuplicateId(String),
    #[error("duplicate pair_id {0:?}")]
    DuplicatePairId(String),
    #[error("pair {0:?} references a figure_id with no record")]
    DanglingReference(String),
    #[error("record {figure_id:?}: {}", violations.join("; "))]
    InvalidRecord { figure_id: String, violations: Vec<String> },
    #[error("pair {pair_id:?}: {reason}")]
    InvalidPair { pair_id: String, reason: String },
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// One collected image-caption pair plus its provenance metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FigureRecord {
    pub figure_id: String,
    pub image_path: String,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub journal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub article_type: Option<String>,
    /// Caption text preceding the first subcaption label, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_context: Option<String>,
}

impl FigureRecord {
    pub fn new(figure_id: impl Into<String>, image_path: impl Into<String>, caption: impl Into<String>) -> Self {
        FigureRecord {
            figure_id: figure_id.into(),
            image_path: image_path.into(),
            caption: caption.into(),
            journal: None,
            year: None,
            article_type: None,
            shared_context: None,
        }
    }
}

/// Lists every broken [`FigureRecord`] invariant, naming the field at fault.
pub fn validate_record(record: &FigureRecord) -> Vec<String> {
    let mut violations = Vec::new();
    if record.figure_id.is_empty() {
        violations.push("figure_id: must be non-empty".to_owned());
    }
    if record.caption.trim().is_empty() {
        violations.push("caption: must be non-empty after trimming whitespace".to_owned());
    }
    violations
}

/// Axis-aligned pixel box, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl From<[u32; 4]> for BoundingBox {
    fn from([x, y, w, h]: [u32; 4]) -> Self {
        BoundingBox { x, y, w, h }
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        BoundingBox { x, y, w, h }
    }

    pub fn has_positive_area(&self) -> bool {
        self.w > 0 && self.h > 0
    }

    /// Exclusive right edge.
    pub fn right(&self) -> u64 {
        self.x as u64 + self.w as u64
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> u64 {
        self.y as u64 + self.h as u64
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x as f64 + self.w as f64 / 2.0, self.y as f64 + self.h as f64 / 2.0)
    }

    /// Half-open containment: the left/top edges are inside, right/bottom are not.
    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x as f64 && px < self.right() as f64 && py >= self.y as f64 && py < self.bottom() as f64
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.right() <= width as u64 && self.bottom() <= height as u64
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        let x0 = self.x.max(other.x) as u64;
        let y0 = self.y.max(other.y) as u64;
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 <= x0 || y1 <= y0 {
            0
        } else {
            (x1 - x0) * (y1 - y0)
        }
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{},{}]", self.x, self.y, self.w, self.h)
    }
}

/// How a pair's text was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatus {
    /// The region's OCR labels intersect the caption's labels in exactly one letter.
    UniqueLabel,
    /// Zero or several label matches: the region gets the entire caption.
    FallbackWholeCaption,
    /// The figure has a single panel and is paired whole with its caption.
    Singleton,
}

impl PairStatus {
    pub const ALL: [PairStatus; 3] = [
        PairStatus::UniqueLabel,
        PairStatus::FallbackWholeCaption,
        PairStatus::Singleton,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PairStatus::UniqueLabel => "unique_label",
            PairStatus::FallbackWholeCaption => "fallback_whole_caption",
            PairStatus::Singleton => "singleton",
        }
    }
}

impl fmt::Display for PairStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One subfigure (or whole figure) bound to one piece of text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedPair {
    pub pair_id: String,
    pub figure_id: String,
    /// `None` stands for the whole figure.
    pub region: Option<BoundingBox>,
    pub label: Option<char>,
    pub text: String,
    pub status: PairStatus,
}

impl AlignedPair {
    /// Checks the field-presence pattern implied by `status`. Checks that need
    /// the owning record (caption equality) live in [`CorpusManifest::new`].
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.pair_id.is_empty() {
            v.push("pair_id: must be non-empty".to_owned());
        }
        if self.figure_id.is_empty() {
            v.push("figure_id: must be non-empty".to_owned());
        }
        if let Some(b) = self.region {
            if !b.has_positive_area() {
                v.push(format!("bbox: {b} has zero area"));
            }
        }
        if let Some(l) = self.label {
            if !l.is_ascii_lowercase() {
                v.push(format!("label: {l:?} is not a lowercase letter a-z"));
            }
        }
        if self.text.trim().is_empty() {
            v.push("text: must be non-empty".to_owned());
        }
        match self.status {
            PairStatus::Singleton => {
                if self.region.is_some() {
                    v.push("status singleton requires an absent bbox".to_owned());
                }
                if self.label.is_some() {
                    v.push("status singleton requires an absent label".to_owned());
                }
            }
            PairStatus::UniqueLabel => {
                if self.label.is_none() {
                    v.push("status unique_label requires a label".to_owned());
                }
            }
            PairStatus::FallbackWholeCaption => {
                if self.label.is_some() {
                    v.push("status fallback_whole_caption requires an absent label".to_owned());
                }
            }
        }
        v
    }

    fn sort_key(&self) -> (&str, Option<(u32, u32)>, &str) {
        (&self.figure_id, self.region.map(|b| (b.x, b.y)), &self.pair_id)
    }
}

fn cmp_pairs(a: &AlignedPair, b: &AlignedPair) -> Ordering {
    a.sort_key().cmp(&b.sort_key())
}

/// Records and pairs of a corpus, always held in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusManifest {
    records: Vec<FigureRecord>,
    pairs: Vec<AlignedPair>,
}

impl CorpusManifest {
    /// Validates every invariant and sorts into canonical order.
    pub fn new(mut records: Vec<FigureRecord>, mut pairs: Vec<AlignedPair>) -> Result<Self, ManifestError> {
        for r in &records {
            let violations = validate_record(r);
            if !violations.is_empty() {
                return Err(ManifestError::InvalidRecord {
                    figure_id: r.figure_id.clone(),
                    violations,
                });
            }
        }
        records.sort_by(|a, b| a.figure_id.cmp(&b.figure_id));
        if let Some(w) = records.windows(2).find(|w| w[0].figure_id == w[1].figure_id) {
            return Err(ManifestError::DuplicateId(w[0].figure_id.clone()));
        }

        let captions: HashMap<&str, &str> = records
            .iter()
            .map(|r| (r.figure_id.as_str(), r.caption.as_str()))
            .collect();
        let mut seen = BTreeSet::new();
        for p in &pairs {
            if !seen.insert(p.pair_id.as_str()) {
                return Err(ManifestError::DuplicatePairId(p.pair_id.clone()));
            }
            let violations = p.violations();
            if !violations.is_empty() {
                return Err(ManifestError::InvalidPair {
                    pair_id: p.pair_id.clone(),
                    reason: violations.join("; "),
                });
            }
            let caption = captions
                .get(p.figure_id.as_str())
                .ok_or_else(|| ManifestError::DanglingReference(p.pair_id.clone()))?;
            let whole = matches!(p.status, PairStatus::Singleton | PairStatus::FallbackWholeCaption);
            if whole && p.text != *caption {
                return Err(ManifestError::InvalidPair {
                    pair_id: p.pair_id.clone(),
                    reason: format!("status {} requires text equal to the full caption", p.status),
                });
            }
        }
        pairs.sort_by(cmp_pairs);
        Ok(CorpusManifest { records, pairs })
    }

    pub fn empty() -> Self {
        CorpusManifest::default()
    }

    pub fn records(&self) -> &[FigureRecord] {
        &self.records
    }

    pub fn pairs(&self) -> &[AlignedPair] {
        &self.pairs
    }

    pub fn record(&self, figure_id: &str) -> Option<&FigureRecord> {
        self.records
            .binary_search_by(|r| r.figure_id.as_str().cmp(figure_id))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Pairs belonging to one figure, in canonical order.
    pub fn pairs_of<'a>(&'a self, figure_id: &'a str) -> impl Iterator<Item = &'a AlignedPair> + 'a {
        self.pairs.iter().filter(move |p| p.figure_id == figure_id)
    }

    pub fn into_parts(self) -> (Vec<FigureRecord>, Vec<AlignedPair>) {
        (self.records, self.pairs)
    }
}

#[derive(Serialize)]
struct Tagged<'a, T> {
    kind: &'static str,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairLine {
    pair_id: String,
    figure_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    text: String,
    status: PairStatus,
}

impl From<&AlignedPair> for PairLine {
    fn from(p: &AlignedPair) -> Self {
        PairLine {
            pair_id: p.pair_id.clone(),
            figure_id: p.figure_id.clone(),
            bbox: p.region,
            label: p.label.map(String::from),
            text: p.text.clone(),
            status: p.status,
        }
    }
}

impl PairLine {
    fn into_pair(self) -> Result<AlignedPair, String> {
        let label = match self.label {
            None => None,
            Some(s) => {
                let mut chars = s.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) if c.is_ascii_lowercase() => Some(c),
                    _ => return Err(format!("label {s:?} is not a single lowercase letter")),
                }
            }
        };
        Ok(AlignedPair {
            pair_id: self.pair_id,
            figure_id: self.figure_id,
            region: self.bbox,
            label,
            text: self.text,
            status: self.status,
        })
    }
}

enum ManifestLine {
    Record(FigureRecord),
    Pair(AlignedPair),
}

fn parse_line(text: &str) -> Result<ManifestLine, String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| format!("invalid JSON: {e}"))?;
    let serde_json::Value::Object(mut obj) = value else {
        return Err("expected a JSON object".to_owned());
    };
    let kind = match obj.shift_remove("kind") {
        Some(serde_json::Value::String(k)) => k,
        Some(_) => return Err("\"kind\" must be a string".to_owned()),
        None => return Err("missing \"kind\"".to_owned()),
    };
    let body = serde_json::Value::Object(obj);
    match kind.as_str() {
        "record" => {
            let record: FigureRecord = serde_json::from_value(body).map_err(|e| format!("bad record: {e}"))?;
            let violations = validate_record(&record);
            if !violations.is_empty() {
                return Err(violations.join("; "));
            }
            Ok(ManifestLine::Record(record))
        }
        "pair" => {
            let line: PairLine = serde_json::from_value(body).map_err(|e| format!("bad pair: {e}"))?;
            let pair = line.into_pair()?;
            let violations = pair.violations();
            if !violations.is_empty() {
                return Err(violations.join("; "));
            }
            Ok(ManifestLine::Pair(pair))
        }
        other => Err(format!("unknown kind {other:?}")),
    }
}

/// Reads a manifest, validates every invariant and normalizes ordering.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest, ManifestError> {
    if !path.exists() {
        return Err(ManifestError::MissingFile(path.to_path_buf()));
    }
    let lines = jsonl::read_lines(path).map_err(|e| match e {
        ReadLinesError::Io(source) => ManifestError::IoFailure {
            path: path.to_path_buf(),
            source,
        },
        ReadLinesError::NotUtf8 { line } => ManifestError::MalformedLine {
            line,
            reason: "not valid UTF-8".to_owned(),
        },
    })?;

    let mut records = Vec::new();
    let mut pairs = Vec::new();
    for raw in lines {
        match parse_line(&raw.text) {
            Ok(ManifestLine::Record(r)) => records.push(r),
            Ok(ManifestLine::Pair(p)) => pairs.push(p),
            Err(reason) => {
                return Err(ManifestError::MalformedLine {
                    line: raw.number,
                    reason,
                })
            }
        }
    }
    CorpusManifest::new(records, pairs)
}

/// Writes the canonical form: records then pairs, one compact object per line.
pub fn save_manifest(manifest: &CorpusManifest, path: &Path) -> Result<(), ManifestError> {
    let records = manifest.records.iter().map(|r| {
        serde_json::to_value(Tagged {
            kind: "record",
            body: r,
        })
        .expect("record serializes")
    });
    let pairs = manifest.pairs.iter().map(|p| {
        serde_json::to_value(Tagged {
            kind: "pair",
            body: &PairLine::from(p),
        })
        .expect("pair serializes")
    });
    jsonl::write_lines(path, records.chain(pairs)).map_err(|source| ManifestError::IoFailure {
        path: path.to_path_buf(),
        source,
    })
}
