//! Subfigure regions: ingested from detector output, or cut out of the image
//! along near-white gutters.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::BoundingBox;
use crate::jsonl::{self, ReadLinesError};

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("image must have positive size and width*height pixels (got {width}x{height}, {len} pixels)")]
    InvalidImage { width: u32, height: u32, len: usize },
    #[error("cannot read image {path}: {reason}")]
    ImageLoad { path: PathBuf, reason: String },
    #[error("invalid splitter parameters: {0}")]
    InvalidParams(String),
    #[error("detections file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("detections line {line}: {reason}")]
    SchemaViolation { line: usize, reason: String },
    #[error("detections reference unknown figure {0:?}")]
    UnknownFigure(String),
    #[error("figure {figure_id:?}: detections declare {declared:?} but the image is {actual:?}")]
    DimensionMismatch {
        figure_id: String,
        declared: (u32, u32),
        actual: (u32, u32),
    },
    #[error("figure {figure_id:?}: box {bbox} lies outside the image")]
    OutOfBounds { figure_id: String, bbox: BoundingBox },
    #[error("regions belong to more than one figure")]
    MixedFigureIds,
}

/// Row-major 8-bit luminance image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, SplitError> {
        if width == 0 || height == 0 || pixels.len() as u64 != width as u64 * height as u64 {
            return Err(SplitError::InvalidImage {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(GrayImage { width, height, pixels })
    }

    /// Every pixel set to `value`.
    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self, SplitError> {
        GrayImage::new(width, height, vec![value; width as usize * height as usize])
    }

    /// Loads any supported raster format and converts it to luminance.
    pub fn open(path: &Path) -> Result<Self, SplitError> {
        let img = image::open(path).map_err(|e| SplitError::ImageLoad {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let luma = img.to_luma8();
        let (w, h) = luma.dimensions();
        GrayImage::new(w, h, luma.into_raw())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        self.pixels[y as usize * self.width as usize + x as usize] = value;
    }

    /// Fills `bbox` (clipped to the image) with `value`.
    pub fn fill_rect(&mut self, bbox: BoundingBox, value: u8) {
        let x1 = bbox.right().min(self.width as u64) as u32;
        let y1 = bbox.bottom().min(self.height as u64) as u32;
        for y in bbox.y..y1 {
            for x in bbox.x..x1 {
                self.set(x, y, value);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitterParams {
    /// Pixels at or above this luminance count as white.
    pub white_threshold: u8,
    pub min_gutter_px: u32,
    pub min_panel_px: u32,
    pub max_recursion_depth: u32,
}

impl Default for SplitterParams {
    fn default() -> Self {
        SplitterParams {
            white_threshold: 245,
            min_gutter_px: 6,
            min_panel_px: 32,
            max_recursion_depth: 6,
        }
    }
}

impl SplitterParams {
    pub fn validate(&self) -> Result<(), SplitError> {
        if self.white_threshold == 0 {
            return Err(SplitError::InvalidParams("white_threshold must be at least 1".into()));
        }
        if self.min_gutter_px == 0 {
            return Err(SplitError::InvalidParams("min_gutter_px must be at least 1".into()));
        }
        if self.min_panel_px == 0 {
            return Err(SplitError::InvalidParams("min_panel_px must be at least 1".into()));
        }
        Ok(())
    }
}

/// One panel of a figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubfigureRegion {
    pub figure_id: String,
    pub bbox: BoundingBox,
    /// Detector confidence; 1.0 for gutter splits.
    pub score: f64,
    /// Reading order, row-major by box origin.
    pub order_index: usize,
}

fn reading_order(a: &BoundingBox, b: &BoundingBox) -> std::cmp::Ordering {
    (a.y, a.x, a.h, a.w).cmp(&(b.y, b.x, b.h, b.w))
}

fn into_regions(figure_id: &str, mut boxes: Vec<(BoundingBox, f64)>) -> Vec<SubfigureRegion> {
    boxes.sort_by(|a, b| reading_order(&a.0, &b.0));
    boxes
        .into_iter()
        .enumerate()
        .map(|(order_index, (bbox, score))| SubfigureRegion {
            figure_id: figure_id.to_owned(),
            bbox,
            score,
            order_index,
        })
        .collect()
}

/// True iff the figure has at least two panels.
pub fn is_compound(regions: &[SubfigureRegion]) -> Result<bool, SplitError> {
    if let Some(first) = regions.first() {
        if regions.iter().any(|r| r.figure_id != first.figure_id) {
            return Err(SplitError::MixedFigureIds);
        }
    }
    Ok(regions.len() >= 2)
}

// ---------------------------------------------------------------------------
// Gutter splitter

/// Summed-area table of non-white pixels.
struct InkTable {
    stride: usize,
    sums: Vec<u32>,
}

impl InkTable {
    fn new(image: &GrayImage, white_threshold: u8) -> Self {
        let w = image.width as usize;
        let h = image.height as usize;
        let stride = w + 1;
        let mut sums = vec![0u32; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += u32::from(image.pixels[y * w + x] < white_threshold);
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        InkTable { stride, sums }
    }

    /// Non-white pixel count in `[x0,x1) x [y0,y1)`.
    fn count(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> u32 {
        let s = self.stride;
        let at = |x: u32, y: u32| self.sums[y as usize * s + x as usize];
        at(x1, y1) + at(x0, y0) - at(x0, y1) - at(x1, y0)
    }

    fn column_is_white(&self, x: u32, r: &Rect) -> bool {
        self.count(x, r.y0, x + 1, r.y1) == 0
    }

    fn row_is_white(&self, y: u32, r: &Rect) -> bool {
        self.count(r.x0, y, r.x1, y + 1) == 0
    }

    /// Shrinks `r` to the bounding box of its non-white pixels.
    fn tighten(&self, r: Rect) -> Option<Rect> {
        if self.count(r.x0, r.y0, r.x1, r.y1) == 0 {
            return None;
        }
        let x0 = (r.x0..r.x1).find(|&x| !self.column_is_white(x, &r))?;
        let x1 = (r.x0..r.x1).rev().find(|&x| !self.column_is_white(x, &r))? + 1;
        let y0 = (r.y0..r.y1).find(|&y| !self.row_is_white(y, &r))?;
        let y1 = (r.y0..r.y1).rev().find(|&y| !self.row_is_white(y, &r))? + 1;
        Some(Rect { x0, y0, x1, y1 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rect {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

impl Rect {
    fn to_box(self) -> BoundingBox {
        BoundingBox::new(self.x0, self.y0, self.x1 - self.x0, self.y1 - self.y0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Axis {
    // Declared first so it wins length ties.
    Vertical,
    Horizontal,
}

#[derive(Debug, Clone, Copy)]
struct Gutter {
    axis: Axis,
    start: u32,
    len: u32,
}

impl Gutter {
    fn midpoint(&self) -> u32 {
        self.start + self.len / 2
    }

    /// Sorts best-first: longest, then vertical, then smaller coordinate.
    fn rank(&self) -> (std::cmp::Reverse<u32>, Axis, u32) {
        (std::cmp::Reverse(self.len), self.axis, self.start)
    }
}

/// Maximal runs of `true` in `lines` as `(offset, length)`.
fn runs(lines: impl Iterator<Item = bool>) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    let mut start = None;
    let mut i = 0u32;
    for white in lines {
        match (white, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - s));
                start = None;
            }
            _ => {}
        }
        i += 1;
    }
    if let Some(s) = start {
        out.push((s, i - s));
    }
    out
}

struct Splitter<'a> {
    ink: InkTable,
    params: &'a SplitterParams,
}

impl Splitter<'_> {
    fn best_gutter(&self, r: &Rect) -> Option<Gutter> {
        let p = self.params;
        let vertical = runs((r.x0..r.x1).map(|x| self.ink.column_is_white(x, r)))
            .into_iter()
            .map(|(s, len)| Gutter {
                axis: Axis::Vertical,
                start: r.x0 + s,
                len,
            });
        let horizontal = runs((r.y0..r.y1).map(|y| self.ink.row_is_white(y, r)))
            .into_iter()
            .map(|(s, len)| Gutter {
                axis: Axis::Horizontal,
                start: r.y0 + s,
                len,
            });
        vertical
            .chain(horizontal)
            .filter(|g| g.len >= p.min_gutter_px)
            .filter(|g| {
                let mid = g.midpoint();
                let (lo, hi) = match g.axis {
                    Axis::Vertical => (r.x0, r.x1),
                    Axis::Horizontal => (r.y0, r.y1),
                };
                mid - lo >= p.min_panel_px && hi - mid >= p.min_panel_px
            })
            .min_by_key(|g| g.rank())
    }

    fn split(&self, r: Rect, depth: u32, out: &mut Vec<Rect>) {
        let Some(r) = self.ink.tighten(r) else {
            return;
        };
        if depth < self.params.max_recursion_depth {
            if let Some(g) = self.best_gutter(&r) {
                let mid = g.midpoint();
                let (a, b) = match g.axis {
                    Axis::Vertical => (Rect { x1: mid, ..r }, Rect { x0: mid, ..r }),
                    Axis::Horizontal => (Rect { y1: mid, ..r }, Rect { y0: mid, ..r }),
                };
                self.split(a, depth + 1, out);
                self.split(b, depth + 1, out);
                return;
            }
        }
        out.push(r);
    }
}

/// Recursively cuts `image` along its longest near-white gutters.
///
/// Leaves are tightened to their non-white content and returned in reading
/// order with score 1.0. An all-white image yields one full-image region.
pub fn split_compound(
    figure_id: &str,
    image: &GrayImage,
    params: &SplitterParams,
) -> Result<Vec<SubfigureRegion>, SplitError> {
    params.validate()?;
    let splitter = Splitter {
        ink: InkTable::new(image, params.white_threshold),
        params,
    };
    let full = Rect {
        x0: 0,
        y0: 0,
        x1: image.width,
        y1: image.height,
    };
    let mut leaves = Vec::new();
    splitter.split(full, 0, &mut leaves);
    if leaves.is_empty() {
        leaves.push(full);
    }
    Ok(into_regions(
        figure_id,
        leaves.into_iter().map(|r| (r.to_box(), 1.0)).collect(),
    ))
}

// ---------------------------------------------------------------------------
// Detector interchange

/// Boxes with IoU above this against a higher-scoring box are discarded on ingest.
pub const MAX_OVERLAP_IOU: f64 = 0.2;
pub const DEFAULT_MIN_SCORE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectedBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub score: f64,
}

impl DetectedBox {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::new(self.x, self.y, self.w, self.h)
    }
}

/// One line of a detections file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionEntry {
    pub figure_id: String,
    pub image_width: u32,
    pub image_height: u32,
    pub regions: Vec<DetectedBox>,
}

impl DetectionEntry {
    pub fn from_regions(figure_id: &str, width: u32, height: u32, regions: &[SubfigureRegion]) -> Self {
        DetectionEntry {
            figure_id: figure_id.to_owned(),
            image_width: width,
            image_height: height,
            regions: regions
                .iter()
                .map(|r| DetectedBox {
                    x: r.bbox.x,
                    y: r.bbox.y,
                    w: r.bbox.w,
                    h: r.bbox.h,
                    score: r.score,
                })
                .collect(),
        }
    }

    fn check(&self) -> Result<(), String> {
        if self.figure_id.is_empty() {
            return Err("figure_id must be non-empty".into());
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err("image dimensions must be positive".into());
        }
        for (i, r) in self.regions.iter().enumerate() {
            if r.w == 0 || r.h == 0 {
                return Err(format!("region {i} has zero area"));
            }
            if !(0.0..=1.0).contains(&r.score) {
                return Err(format!("region {i} score {} outside [0,1]", r.score));
            }
        }
        Ok(())
    }

    /// Applies the score threshold, bounds check and overlap suppression,
    /// then assigns reading order. `dims` is the figure's known image size.
    pub fn to_regions(&self, dims: (u32, u32), min_score: f64) -> Result<Vec<SubfigureRegion>, SplitError> {
        let declared = (self.image_width, self.image_height);
        if declared != dims {
            return Err(SplitError::DimensionMismatch {
                figure_id: self.figure_id.clone(),
                declared,
                actual: dims,
            });
        }
        let mut kept: Vec<(BoundingBox, f64)> = Vec::new();
        for r in self.regions.iter().filter(|r| r.score >= min_score) {
            let bbox = r.bbox();
            if !bbox.fits_within(dims.0, dims.1) {
                return Err(SplitError::OutOfBounds {
                    figure_id: self.figure_id.clone(),
                    bbox,
                });
            }
            kept.push((bbox, r.score));
        }

        kept.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| reading_order(&a.0, &b.0)));
        let mut survivors: Vec<(BoundingBox, f64)> = Vec::with_capacity(kept.len());
        for (bbox, score) in kept {
            if let Some((other, _)) = survivors.iter().find(|(o, _)| o.iou(&bbox) > MAX_OVERLAP_IOU) {
                log::warn!(
                    "figure {}: dropping box {} (score {score}) overlapping {}",
                    self.figure_id,
                    bbox,
                    other
                );
                continue;
            }
            survivors.push((bbox, score));
        }
        Ok(into_regions(&self.figure_id, survivors))
    }
}

/// Parses and schema-checks a detections file without resolving figures.
pub fn read_detections(path: &Path) -> Result<Vec<DetectionEntry>, SplitError> {
    let lines = jsonl::read_lines(path).map_err(|e| match e {
        ReadLinesError::Io(source) => SplitError::Io {
            path: path.to_path_buf(),
            source,
        },
        ReadLinesError::NotUtf8 { line } => SplitError::SchemaViolation {
            line,
            reason: "not valid UTF-8".into(),
        },
    })?;
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(lines.len());
    for raw in lines {
        let violation = |reason: String| SplitError::SchemaViolation {
            line: raw.number,
            reason,
        };
        let entry: DetectionEntry = serde_json::from_str(&raw.text).map_err(|e| violation(e.to_string()))?;
        entry.check().map_err(violation)?;
        if !seen.insert(entry.figure_id.clone()) {
            return Err(violation(format!("figure {:?} listed twice", entry.figure_id)));
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Reads a detections file into reading-ordered regions for every figure.
pub fn ingest_detections(
    detections_file: &Path,
    image_dims: &HashMap<String, (u32, u32)>,
    min_score: f64,
) -> Result<Vec<SubfigureRegion>, SplitError> {
    let mut out = Vec::new();
    for entry in read_detections(detections_file)? {
        let dims = *image_dims
            .get(&entry.figure_id)
            .ok_or_else(|| SplitError::UnknownFigure(entry.figure_id.clone()))?;
        out.extend(entry.to_regions(dims, min_score)?);
    }
    Ok(out)
}

/// Runs the gutter splitter on an image file and packages the result as a
/// detections line.
pub fn split_image_file(figure_id: &str, path: &Path, params: &SplitterParams) -> Result<DetectionEntry, SplitError> {
    let image = GrayImage::open(path)?;
    let regions = split_compound(figure_id, &image, params)?;
    Ok(DetectionEntry::from_regions(
        figure_id,
        image.width(),
        image.height(),
        &regions,
    ))
}

pub fn write_detections(path: &Path, entries: &[DetectionEntry]) -> Result<(), SplitError> {
    jsonl::write_lines(path, entries).map_err(|source| SplitError::Io {
        path: path.to_path_buf(),
        source,
    })
}
