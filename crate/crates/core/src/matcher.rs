//! Binds subfigures to subcaptions through OCR-detected panel letters.
//!
//! Each region collects the single-letter OCR tokens whose box center falls
//! inside it. Intersecting those letters with the caption's label inventory
//! decides the pair: exactly one common letter selects that subcaption,
//! anything else pairs the region with the whole caption.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption::SubcaptionSegment;
use crate::corpus::{AlignedPair, BoundingBox, PairStatus};
use crate::jsonl::{self, ReadLinesError};
use crate::splitter::SubfigureRegion;

pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("regions and tokens belong to more than one figure")]
    MixedFigureIds,
    #[error("figure has no regions to match")]
    EmptyRegions,
    #[error("cannot read OCR file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("OCR line {line}: {reason}")]
    SchemaViolation { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcrToken {
    pub figure_id: String,
    pub text: String,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionLabelSet {
    pub region: SubfigureRegion,
    pub candidate_labels: BTreeSet<char>,
}

/// Reduces an OCR token to a panel letter, if it looks like one.
pub fn normalize_token(token: &OcrToken, min_confidence: f64) -> Option<char> {
    if token.confidence < min_confidence {
        return None;
    }
    let core = token.text.trim_matches(|c: char| !c.is_alphanumeric());
    let mut chars = core.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => Some(c.to_ascii_lowercase()),
        _ => None,
    }
}

fn distance_sq(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    dx * dx + dy * dy
}

/// Distributes normalized token letters over the regions that contain them.
///
/// A token center inside several (overlapping) regions goes to the region
/// whose center is nearest, ties to the lower `order_index`. Output follows
/// `order_index`.
pub fn assign_tokens(
    regions: &[SubfigureRegion],
    tokens: &[OcrToken],
    min_confidence: f64,
) -> Result<Vec<RegionLabelSet>, MatchError> {
    let ids: HashSet<&str> = regions
        .iter()
        .map(|r| r.figure_id.as_str())
        .chain(tokens.iter().map(|t| t.figure_id.as_str()))
        .collect();
    if ids.len() > 1 {
        return Err(MatchError::MixedFigureIds);
    }

    let mut ordered: Vec<&SubfigureRegion> = regions.iter().collect();
    ordered.sort_by_key(|r| r.order_index);
    let mut sets: Vec<RegionLabelSet> = ordered
        .iter()
        .map(|r| RegionLabelSet {
            region: (*r).clone(),
            candidate_labels: BTreeSet::new(),
        })
        .collect();

    for token in tokens {
        let Some(letter) = normalize_token(token, min_confidence) else {
            continue;
        };
        let center = token.bbox.center();
        let best = ordered
            .iter()
            .enumerate()
            .filter(|(_, r)| r.bbox.contains_point(center.0, center.1))
            .min_by(|(_, a), (_, b)| {
                distance_sq(center, a.bbox.center())
                    .total_cmp(&distance_sq(center, b.bbox.center()))
                    .then(a.order_index.cmp(&b.order_index))
            });
        if let Some((slot, _)) = best {
            sets[slot].candidate_labels.insert(letter);
        }
    }
    Ok(sets)
}

/// Applies the matching rule to every region of one figure.
///
/// A figure with a single region and an unlabeled caption becomes one
/// whole-figure `singleton` pair. Otherwise each region yields exactly one
/// pair, with `pair_id = figure_id#order_index`.
pub fn match_subfigures(
    label_sets: &[RegionLabelSet],
    segments: &[SubcaptionSegment],
    full_caption: &str,
) -> Result<Vec<AlignedPair>, MatchError> {
    let first = label_sets.first().ok_or(MatchError::EmptyRegions)?;
    if label_sets.iter().any(|s| s.region.figure_id != first.region.figure_id) {
        return Err(MatchError::MixedFigureIds);
    }
    let figure_id = &first.region.figure_id;

    let by_label: HashMap<char, &SubcaptionSegment> = segments.iter().filter_map(|s| s.label.map(|l| (l, s))).collect();

    if label_sets.len() == 1 && by_label.is_empty() {
        return Ok(vec![AlignedPair {
            pair_id: format!("{figure_id}#{}", first.region.order_index),
            figure_id: figure_id.clone(),
            region: None,
            label: None,
            text: full_caption.to_owned(),
            status: PairStatus::Singleton,
        }]);
    }

    let mut ordered: Vec<&RegionLabelSet> = label_sets.iter().collect();
    ordered.sort_by_key(|s| s.region.order_index);
    let pairs = ordered
        .into_iter()
        .map(|set| {
            let mut hits = set.candidate_labels.iter().filter(|l| by_label.contains_key(l));
            let (label, text, status) = match (hits.next(), hits.next()) {
                (Some(&l), None) => (Some(l), by_label[&l].text.clone(), PairStatus::UniqueLabel),
                _ => (None, full_caption.to_owned(), PairStatus::FallbackWholeCaption),
            };
            AlignedPair {
                pair_id: format!("{figure_id}#{}", set.region.order_index),
                figure_id: figure_id.clone(),
                region: Some(set.region.bbox),
                label,
                text,
                status,
            }
        })
        .collect();
    Ok(pairs)
}

// ---------------------------------------------------------------------------
// OCR interchange

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcrTokenLine {
    pub text: String,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub confidence: f64,
}

/// One line of an OCR file: all tokens recognized in one figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcrEntry {
    pub figure_id: String,
    pub tokens: Vec<OcrTokenLine>,
}

impl OcrEntry {
    fn check(&self) -> Result<(), String> {
        if self.figure_id.is_empty() {
            return Err("figure_id must be non-empty".into());
        }
        for (i, t) in self.tokens.iter().enumerate() {
            if t.text.is_empty() {
                return Err(format!("token {i} has empty text"));
            }
            if t.w == 0 || t.h == 0 {
                return Err(format!("token {i} has zero area"));
            }
            if !(0.0..=1.0).contains(&t.confidence) {
                return Err(format!("token {i} confidence {} outside [0,1]", t.confidence));
            }
        }
        Ok(())
    }

    pub fn into_tokens(self) -> Vec<OcrToken> {
        let figure_id = self.figure_id;
        self.tokens
            .into_iter()
            .map(|t| OcrToken {
                figure_id: figure_id.clone(),
                text: t.text,
                bbox: BoundingBox::new(t.x, t.y, t.w, t.h),
                confidence: t.confidence,
            })
            .collect()
    }
}

/// Reads an OCR file into tokens grouped by figure.
pub fn read_ocr(path: &Path) -> Result<HashMap<String, Vec<OcrToken>>, MatchError> {
    let lines = jsonl::read_lines(path).map_err(|e| match e {
        ReadLinesError::Io(source) => MatchError::Io {
            path: path.to_path_buf(),
            source,
        },
        ReadLinesError::NotUtf8 { line } => MatchError::SchemaViolation {
            line,
            reason: "not valid UTF-8".into(),
        },
    })?;
    let mut out = HashMap::new();
    for raw in lines {
        let violation = |reason: String| MatchError::SchemaViolation {
            line: raw.number,
            reason,
        };
        let entry: OcrEntry = serde_json::from_str(&raw.text).map_err(|e| violation(e.to_string()))?;
        entry.check().map_err(violation)?;
        if out.contains_key(&entry.figure_id) {
            return Err(violation(format!("figure {:?} listed twice", entry.figure_id)));
        }
        out.insert(entry.figure_id.clone(), entry.into_tokens());
    }
    Ok(out)
}
