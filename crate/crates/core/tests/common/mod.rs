//! Test-only generators and brute-force oracles shared by the integration
//! suites. The oracles never call into the code they check; the runners in
//! `checks` do, and compare the two.

#![allow(dead_code)]

pub mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Deserialize;
use subfig_core::corpus::{AlignedPair, BoundingBox, FigureRecord, PairStatus};
use subfig_core::splitter::GrayImage;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

// ---------------------------------------------------------------------------
// Caption golden suite

#[derive(Debug, Deserialize)]
pub struct GoldenCaption {
    pub id: String,
    pub form: String,
    pub caption: String,
    pub segments: Vec<(Option<char>, String)>,
    #[serde(default)]
    pub flags: Vec<String>,
    #[serde(default)]
    pub preamble: Option<String>,
    #[serde(default)]
    pub inline_rejected: usize,
}

pub fn golden_captions() -> Vec<GoldenCaption> {
    std::fs::read_to_string(fixture("caption_golden.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

// ---------------------------------------------------------------------------
// Grid composites

/// Independent IoU over `[x, y, w, h]` boxes.
pub fn iou_oracle(a: [u32; 4], b: [u32; 4]) -> f64 {
    let (ax1, ay1) = (a[0] + a[2], a[1] + a[3]);
    let (bx1, by1) = (b[0] + b[2], b[1] + b[3]);
    // Row by row: each shared row contributes the shared column span.
    let shared_rows = (a[1].max(b[1])..ay1.min(by1)).count() as u64;
    let shared_cols = (a[0].max(b[0])..ax1.min(bx1)).count() as u64;
    let inter = shared_rows * shared_cols;
    let union = a[2] as u64 * a[3] as u64 + b[2] as u64 * b[3] as u64 - inter;
    inter as f64 / union as f64
}

pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub panel_min: u32,
    pub panel_max: u32,
    pub gutter_min: u32,
    pub gutter_max: u32,
}

/// White canvas with `rows x cols` dark textured panels separated by white
/// gutters. Returns the image and the panel boxes in reading order.
pub fn grid_composite<R: Rng>(rng: &mut R, spec: &GridSpec) -> (GrayImage, Vec<BoundingBox>) {
    let widths: Vec<u32> = (0..spec.cols)
        .map(|_| rng.gen_range(spec.panel_min..=spec.panel_max))
        .collect();
    let heights: Vec<u32> = (0..spec.rows)
        .map(|_| rng.gen_range(spec.panel_min..=spec.panel_max))
        .collect();
    let col_gaps: Vec<u32> = (1..spec.cols)
        .map(|_| rng.gen_range(spec.gutter_min..=spec.gutter_max))
        .collect();
    let row_gaps: Vec<u32> = (1..spec.rows)
        .map(|_| rng.gen_range(spec.gutter_min..=spec.gutter_max))
        .collect();
    let margin: [u32; 4] = [0; 4].map(|_| rng.gen_range(0..=15));

    let xs = offsets(margin[0], &widths, &col_gaps);
    let ys = offsets(margin[1], &heights, &row_gaps);
    let width = xs.last().unwrap() + widths.last().unwrap() + margin[2];
    let height = ys.last().unwrap() + heights.last().unwrap() + margin[3];

    let mut pixels = vec![255u8; (width * height) as usize];
    let mut truth = Vec::new();
    for (r, &y0) in ys.iter().enumerate() {
        for (c, &x0) in xs.iter().enumerate() {
            let (w, h) = (widths[c], heights[r]);
            let base = rng.gen_range(0..=150u8);
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    pixels[(y * width + x) as usize] = base + rng.gen_range(0..=80u8);
                }
            }
            truth.push(BoundingBox::new(x0, y0, w, h));
        }
    }
    (GrayImage::new(width, height, pixels).unwrap(), truth)
}

fn offsets(start: u32, sizes: &[u32], gaps: &[u32]) -> Vec<u32> {
    let mut out = vec![start];
    for (s, g) in sizes.iter().zip(gaps) {
        out.push(out.last().unwrap() + s + g);
    }
    out
}

// ---------------------------------------------------------------------------
// Matching rule

/// Direct statement of the rule for one region: the letters shared by the
/// region and the caption decide, one shared letter selects its subcaption.
pub fn expected_status(candidates: &[char], caption_labels: &[char], regions: usize) -> (PairStatus, Option<char>) {
    if regions == 1 && caption_labels.is_empty() {
        return (PairStatus::Singleton, None);
    }
    let mut shared = Vec::new();
    for c in 'a'..='z' {
        if candidates.contains(&c) && caption_labels.contains(&c) {
            shared.push(c);
        }
    }
    if shared.len() == 1 {
        (PairStatus::UniqueLabel, Some(shared[0]))
    } else {
        (PairStatus::FallbackWholeCaption, None)
    }
}

pub fn letters_of(mask: u32, alphabet: &[char]) -> Vec<char> {
    alphabet
        .iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, c)| *c)
        .collect()
}

// ---------------------------------------------------------------------------
// Retrieval

pub fn dot_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Full-sort recall: rank every candidate, locate the partner.
pub fn recall_full_sort(sim: &[Vec<f64>], k: usize, transpose: bool) -> f64 {
    let n = sim.len();
    let score = |q: usize, j: usize| if transpose { sim[j][q] } else { sim[q][j] };
    let mut hits = 0;
    for q in 0..n {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| score(q, b).partial_cmp(&score(q, a)).unwrap().then(a.cmp(&b)));
        let pos = order.iter().position(|&j| j == q).unwrap();
        if pos < k {
            hits += 1;
        }
    }
    100.0 * hits as f64 / n as f64
}

pub fn random_unit_rows<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Random manifests

const CAPTION_POOL: [&str; 8] = [
    "Brain MRI of patient.",
    "(A) MRI. (B) CT.",
    "Axial \"FLAIR\" image \\ with backslash.",
    "Gliome cérébral — coupe axiale.",
    "脑部MRI图像",
    "Tab\tand newline\nin caption.",
    "Emoji 🧠 brain.",
    "  padded caption  ",
];

/// A valid manifest's contents in arbitrary order.
pub fn random_manifest_parts<R: Rng>(rng: &mut R) -> (Vec<FigureRecord>, Vec<AlignedPair>) {
    let n = rng.gen_range(0..8);
    let mut ids: Vec<String> = (0..n)
        .map(|i| format!("fig-{:03}-{}", rng.gen_range(0..1000), i))
        .collect();
    ids.shuffle(rng);
    let mut records = Vec::new();
    let mut pairs = Vec::new();
    for id in &ids {
        let mut r = FigureRecord::new(id.clone(), format!("img/{id}.png"), *CAPTION_POOL.choose(rng).unwrap());
        if rng.gen_bool(0.5) {
            r.journal = Some("BMC Medical Imaging".into());
        }
        if rng.gen_bool(0.5) {
            r.year = Some(rng.gen_range(1937..=2018));
        }
        if rng.gen_bool(0.3) {
            r.article_type = Some("case report".into());
        }
        if rng.gen_bool(0.2) {
            r.shared_context = Some("Figure 1.".into());
        }
        let k = rng.gen_range(0..4);
        if k == 1 && rng.gen_bool(0.5) {
            pairs.push(AlignedPair {
                pair_id: format!("{id}#0"),
                figure_id: id.clone(),
                region: None,
                label: None,
                text: r.caption.clone(),
                status: PairStatus::Singleton,
            });
        } else {
            for j in 0..k {
                let region = Some(BoundingBox::new(
                    rng.gen_range(0..500),
                    rng.gen_range(0..500),
                    rng.gen_range(1..200),
                    rng.gen_range(1..200),
                ));
                let pair = if rng.gen_bool(0.5) {
                    AlignedPair {
                        pair_id: format!("{id}#{j}"),
                        figure_id: id.clone(),
                        region,
                        label: Some(rng.gen_range(b'a'..=b'z') as char),
                        text: format!("subcaption {j} of {id}"),
                        status: PairStatus::UniqueLabel,
                    }
                } else {
                    AlignedPair {
                        pair_id: format!("{id}#{j}"),
                        figure_id: id.clone(),
                        region,
                        label: None,
                        text: r.caption.clone(),
                        status: PairStatus::FallbackWholeCaption,
                    }
                };
                pairs.push(pair);
            }
        }
        records.push(r);
    }
    pairs.shuffle(rng);
    (records, pairs)
}

pub fn status_counts(pairs: &[AlignedPair]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for p in pairs {
        *m.entry(p.status.as_str().to_owned()).or_insert(0) += 1;
    }
    m
}

/// Malformed manifest fixtures and the 1-based line that breaks each one,
/// counted by hand (blank lines included).
pub const MALFORMED_CASES: [(&str, usize); 9] = [
    ("truncated_json.jsonl", 3),
    ("missing_kind.jsonl", 4),
    ("unknown_kind.jsonl", 2),
    ("unknown_field.jsonl", 1),
    ("bad_status.jsonl", 3),
    ("year_as_string.jsonl", 4),
    ("short_region.jsonl", 2),
    ("empty_figure_id.jsonl", 2),
    ("not_an_object.jsonl", 2),
];
