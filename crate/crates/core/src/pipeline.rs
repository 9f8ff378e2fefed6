//! Corpus-level orchestration: keyword filter, subfigure regions, caption
//! parsing and label matching, written out as a canonical manifest plus a
//! statistics sidecar.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption::parse_caption;
use crate::corpus::{self, AlignedPair, CorpusManifest, FigureRecord, ManifestError, PairStatus};
use crate::matcher::{self, MatchError, OcrToken};
use crate::splitter::{self, DetectionEntry, GrayImage, SplitError, SplitterParams, SubfigureRegion};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Detections(#[from] SplitError),
    #[error(transparent)]
    Ocr(#[from] MatchError),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Configuration problems as opposed to bad input data.
    pub fn is_config_error(&self) -> bool {
        matches!(self, PipelineError::Config(_))
    }
}

fn default_min_score() -> f64 {
    splitter::DEFAULT_MIN_SCORE
}

fn default_min_confidence() -> f64 {
    matcher::DEFAULT_MIN_CONFIDENCE
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub input_manifest: PathBuf,
    /// Root that record `image_path`s are relative to.
    #[serde(default)]
    pub images_dir: Option<PathBuf>,
    /// When set, regions come from this file instead of the gutter splitter.
    #[serde(default)]
    pub detections_file: Option<PathBuf>,
    pub ocr_file: PathBuf,
    pub output_manifest: PathBuf,
    #[serde(default)]
    pub keyword: Option<String>,
    #[serde(default = "default_min_score")]
    pub min_score: f64,
    #[serde(default = "default_min_confidence")]
    pub min_confidence: f64,
    #[serde(default)]
    pub splitter: SplitterParams,
    #[serde(default = "default_true")]
    pub case_insensitive_keyword: bool,
    /// Keep only records of this article type; records without one pass.
    #[serde(default)]
    pub article_type: Option<String>,
}

impl PipelineConfig {
    pub fn new(input_manifest: PathBuf, ocr_file: PathBuf, output_manifest: PathBuf) -> Self {
        PipelineConfig {
            input_manifest,
            images_dir: None,
            detections_file: None,
            ocr_file,
            output_manifest,
            keyword: None,
            min_score: default_min_score(),
            min_confidence: default_min_confidence(),
            splitter: SplitterParams::default(),
            case_insensitive_keyword: true,
            article_type: None,
        }
    }

    /// Reads a JSON config; relative paths resolve against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.input_manifest);
        resolve(&mut cfg.ocr_file);
        resolve(&mut cfg.output_manifest);
        cfg.images_dir.as_mut().map(resolve);
        cfg.detections_file.as_mut().map(resolve);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let same = self.output_manifest == self.input_manifest
            || matches!(
                (fs::canonicalize(&self.output_manifest), fs::canonicalize(&self.input_manifest)),
                (Ok(a), Ok(b)) if a == b
            );
        if same {
            return Err(PipelineError::Config(
                "output_manifest must differ from input_manifest".into(),
            ));
        }
        if self.detections_file.is_none() && self.images_dir.is_none() {
            return Err(PipelineError::Config(
                "either detections_file or images_dir (for the built-in splitter) is required".into(),
            ));
        }
        for (name, v) in [("min_score", self.min_score), ("min_confidence", self.min_confidence)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(PipelineError::Config(format!("{name} must lie in [0,1], got {v}")));
            }
        }
        self.splitter
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub records_in: usize,
    pub records_after_filter: usize,
    pub compound_count: usize,
    pub singleton_count: usize,
    pub pairs_out: usize,
    pub compound_fraction: f64,
    pub expansion_ratio: f64,
    pub status_histogram: BTreeMap<String, usize>,
    pub flagged_captions: usize,
    pub skipped_records: usize,
    /// Extra regions bound to a subcaption another region of the same figure already took.
    pub duplicate_label_matches: usize,
    /// Parenthesized letters left in caption text for not being segment-initial.
    pub inline_markers_rejected: usize,
}

/// Keeps records whose caption contains `keyword`; no keyword keeps everything.
pub fn filter_corpus(records: &[FigureRecord], keyword: Option<&str>, case_insensitive: bool) -> Vec<FigureRecord> {
    let Some(keyword) = keyword else {
        return records.to_vec();
    };
    let needle = if case_insensitive {
        keyword.to_lowercase()
    } else {
        keyword.to_owned()
    };
    records
        .iter()
        .filter(|r| {
            if case_insensitive {
                r.caption.to_lowercase().contains(&needle)
            } else {
                r.caption.contains(&needle)
            }
        })
        .cloned()
        .collect()
}

/// Keeps records whose `article_type` matches case-insensitively, or is unknown.
pub fn filter_article_type(records: Vec<FigureRecord>, article_type: Option<&str>) -> Vec<FigureRecord> {
    let Some(wanted) = article_type else {
        return records;
    };
    let wanted = wanted.to_lowercase();
    records
        .into_iter()
        .filter(|r| r.article_type.as_ref().is_none_or(|t| t.to_lowercase() == wanted))
        .collect()
}

pub fn compute_stats(manifest: &CorpusManifest, records_in: usize) -> PipelineStats {
    let records = manifest.records().len();
    let pairs = manifest.pairs();

    let mut regions_per_figure: HashMap<&str, usize> = HashMap::new();
    let mut label_uses: HashMap<(&str, char), usize> = HashMap::new();
    let mut status_histogram: BTreeMap<String, usize> =
        PairStatus::ALL.iter().map(|s| (s.as_str().to_owned(), 0)).collect();
    for p in pairs {
        if p.region.is_some() {
            *regions_per_figure.entry(&p.figure_id).or_default() += 1;
        }
        if let (PairStatus::UniqueLabel, Some(l)) = (p.status, p.label) {
            *label_uses.entry((&p.figure_id, l)).or_default() += 1;
        }
        *status_histogram
            .get_mut(p.status.as_str())
            .expect("all statuses present") += 1;
    }
    let compound_count = regions_per_figure.values().filter(|&&n| n >= 2).count();

    let (flagged_captions, inline_markers_rejected) = manifest
        .records()
        .par_iter()
        .map(|r| {
            let parse = parse_caption(&r.caption);
            (usize::from(parse.is_flagged()), parse.inline_rejected)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));

    let ratio = |num: usize| if records == 0 { 0.0 } else { num as f64 / records as f64 };
    PipelineStats {
        records_in,
        records_after_filter: records,
        compound_count,
        singleton_count: records - compound_count,
        pairs_out: pairs.len(),
        compound_fraction: ratio(compound_count),
        expansion_ratio: ratio(pairs.len()),
        status_histogram,
        flagged_captions,
        skipped_records: 0,
        duplicate_label_matches: label_uses.values().map(|&n| n - 1).sum(),
        inline_markers_rejected,
    }
}

/// `out.jsonl` -> `out.stats.json`, in the same directory.
pub fn stats_sidecar_path(output_manifest: &Path) -> PathBuf {
    output_manifest.with_extension("stats.json")
}

pub fn write_stats(stats: &PipelineStats, path: &Path) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(stats).expect("stats serialize");
    text.push('\n');
    fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Where subfigure regions come from.
pub enum RegionSource<'a> {
    Detections {
        entries: HashMap<String, DetectionEntry>,
        images_dir: Option<&'a Path>,
        min_score: f64,
    },
    Splitter {
        images_dir: &'a Path,
        params: SplitterParams,
    },
}

impl RegionSource<'_> {
    fn regions(&self, record: &FigureRecord) -> Result<Vec<SubfigureRegion>, String> {
        match self {
            RegionSource::Detections {
                entries,
                images_dir,
                min_score,
            } => {
                let Some(entry) = entries.get(&record.figure_id) else {
                    return Ok(Vec::new());
                };
                let dims = images_dir
                    .and_then(|dir| image::image_dimensions(dir.join(&record.image_path)).ok())
                    .unwrap_or((entry.image_width, entry.image_height));
                entry.to_regions(dims, *min_score).map_err(|e| e.to_string())
            }
            RegionSource::Splitter { images_dir, params } => {
                let image = GrayImage::open(&images_dir.join(&record.image_path)).map_err(|e| e.to_string())?;
                splitter::split_compound(&record.figure_id, &image, params).map_err(|e| e.to_string())
            }
        }
    }
}

/// Output of aligning a batch of records.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub records: Vec<FigureRecord>,
    pub pairs: Vec<AlignedPair>,
    /// `(figure_id, reason)` for every record that was skipped.
    pub skipped: Vec<(String, String)>,
}

fn singleton(record: &FigureRecord) -> AlignedPair {
    AlignedPair {
        pair_id: format!("{}#0", record.figure_id),
        figure_id: record.figure_id.clone(),
        region: None,
        label: None,
        text: record.caption.clone(),
        status: PairStatus::Singleton,
    }
}

fn align_record(
    record: &FigureRecord,
    source: &RegionSource<'_>,
    ocr: &HashMap<String, Vec<OcrToken>>,
    min_confidence: f64,
) -> Result<(FigureRecord, Vec<AlignedPair>), String> {
    let regions = source.regions(record)?;
    let parse = parse_caption(&record.caption);
    let mut out = record.clone();
    out.shared_context = parse.preamble.clone();

    if regions.len() <= 1 {
        return Ok((out, vec![singleton(record)]));
    }
    let tokens = ocr.get(&record.figure_id).map(Vec::as_slice).unwrap_or(&[]);
    let label_sets = matcher::assign_tokens(&regions, tokens, min_confidence).map_err(|e| e.to_string())?;
    let pairs = matcher::match_subfigures(&label_sets, &parse.segments, &record.caption).map_err(|e| e.to_string())?;
    Ok((out, pairs))
}

/// Aligns every record independently; failures are collected, not fatal.
/// Output order does not depend on scheduling.
pub fn align_records(
    records: &[FigureRecord],
    source: &RegionSource<'_>,
    ocr: &HashMap<String, Vec<OcrToken>>,
    min_confidence: f64,
) -> Alignment {
    let results: Vec<_> = records
        .par_iter()
        .map(|r| align_record(r, source, ocr, min_confidence))
        .collect();
    let mut alignment = Alignment {
        records: Vec::with_capacity(records.len()),
        pairs: Vec::new(),
        skipped: Vec::new(),
    };
    for (record, result) in records.iter().zip(results) {
        match result {
            Ok((r, pairs)) => {
                alignment.records.push(r);
                alignment.pairs.extend(pairs);
            }
            Err(reason) => {
                log::warn!("skipping figure {}: {reason}", record.figure_id);
                alignment.skipped.push((record.figure_id.clone(), reason));
            }
        }
    }
    alignment
}

/// Runs the whole alignment and writes the manifest and its stats sidecar.
pub fn run_pipeline(config: &PipelineConfig) -> Result<(CorpusManifest, PipelineStats), PipelineError> {
    config.validate()?;
    let input = corpus::load_manifest(&config.input_manifest)?;
    let records_in = input.records().len();
    let (records, _) = input.into_parts();

    let filtered = filter_corpus(&records, config.keyword.as_deref(), config.case_insensitive_keyword);
    let filtered = filter_article_type(filtered, config.article_type.as_deref());

    let source = match &config.detections_file {
        Some(path) => RegionSource::Detections {
            entries: splitter::read_detections(path)?
                .into_iter()
                .map(|e| (e.figure_id.clone(), e))
                .collect(),
            images_dir: config.images_dir.as_deref(),
            min_score: config.min_score,
        },
        None => RegionSource::Splitter {
            images_dir: config.images_dir.as_deref().expect("validated"),
            params: config.splitter,
        },
    };
    let ocr = matcher::read_ocr(&config.ocr_file)?;

    let alignment = align_records(&filtered, &source, &ocr, config.min_confidence);
    let manifest = CorpusManifest::new(alignment.records, alignment.pairs)?;
    corpus::save_manifest(&manifest, &config.output_manifest)?;

    let mut stats = compute_stats(&manifest, records_in);
    stats.skipped_records = alignment.skipped.len();
    write_stats(&stats, &stats_sidecar_path(&config.output_manifest))?;
    Ok((manifest, stats))
}

// ---------------------------------------------------------------------------
// Caption segment export

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentOut {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub text: String,
    pub span: [usize; 2],
}

/// One line of a segments file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionSegments {
    pub figure_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shared_context: Option<String>,
    pub flagged: bool,
    pub segments: Vec<SegmentOut>,
}

pub fn caption_segments(record: &FigureRecord) -> CaptionSegments {
    let parse = parse_caption(&record.caption);
    CaptionSegments {
        figure_id: record.figure_id.clone(),
        shared_context: parse.preamble.clone(),
        flagged: parse.is_flagged(),
        segments: parse
            .segments
            .into_iter()
            .map(|s| SegmentOut {
                label: s.label.map(String::from),
                text: s.text,
                span: [s.span.start, s.span.end],
            })
            .collect(),
    }
}

pub fn write_segments(manifest: &CorpusManifest, path: &Path) -> Result<(), PipelineError> {
    let lines: Vec<CaptionSegments> = manifest.records().par_iter().map(caption_segments).collect();
    crate::jsonl::write_lines(path, &lines).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}
