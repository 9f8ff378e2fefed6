//! Deterministic synthetic corpus: 200 "brain" figures, 86 of them compound,
//! plus 20 off-topic records the keyword filter must drop.
//!
//! Every figure carries its expected pairs, derived from how it was built
//! (which letters went into the caption, which tokens into each panel) and
//! the matching rule in `super::expected_status`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use subfig_core::corpus::{save_manifest, BoundingBox, CorpusManifest, FigureRecord, PairStatus};
use subfig_core::matcher::{OcrEntry, OcrTokenLine};
use subfig_core::splitter::{DetectedBox, DetectionEntry};

pub const SEED: u64 = 0x5EED_0043;
pub const BRAIN_FIGURES: usize = 200;
pub const COMPOUND_FIGURES: usize = 86;
pub const OFF_TOPIC: usize = 20;
const WIDTH: u32 = 640;
const HEIGHT: u32 = 480;
const GUTTER: u32 = 20;
const MARGIN: u32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedPair {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<char>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedFigure {
    pub figure_id: String,
    pub compound: bool,
    pub flagged: bool,
    pub pairs: Vec<ExpectedPair>,
}

pub struct SynthCorpus {
    pub records: Vec<FigureRecord>,
    pub detections: Vec<DetectionEntry>,
    pub ocr: Vec<OcrEntry>,
    pub expected: Vec<ExpectedFigure>,
}

const MODALITIES: [&str; 6] = [
    "Axial T2-weighted MRI of the brain",
    "Non-contrast CT of the brain",
    "Coronal FLAIR image of the brain",
    "Digital subtraction angiography of the brain",
    "Diffusion-weighted brain MRI",
    "Intraoperative photograph of the brain surface",
];
const FINDINGS: [&str; 6] = [
    "showing a ring-enhancing lesion",
    "demonstrating perilesional edema",
    "revealing an aneurysm of the middle cerebral artery",
    "with midline shift",
    "after resection",
    "at three-month follow-up",
];

#[derive(Debug, Clone, Copy)]
enum Style {
    Paren,
    TrailingParen,
    Dot,
    Colon,
    Combined,
    Range,
    Preamble,
    Unlabeled,
    Duplicate,
}

const STYLES: [Style; 9] = [
    Style::Paren,
    Style::TrailingParen,
    Style::Dot,
    Style::Colon,
    Style::Combined,
    Style::Range,
    Style::Preamble,
    Style::Unlabeled,
    Style::Duplicate,
];

struct BuiltCaption {
    text: String,
    /// Letter -> subcaption text, empty when the caption counts as unlabeled.
    segments: BTreeMap<char, String>,
    flagged: bool,
}

fn phrase<R: Rng>(rng: &mut R) -> String {
    format!("{} {}.", MODALITIES.choose(rng).unwrap(), FINDINGS.choose(rng).unwrap())
}

fn marker(style: Style, letter: char, upper: bool) -> String {
    let l = if upper { letter.to_ascii_uppercase() } else { letter };
    match style {
        Style::TrailingParen => format!("{l})"),
        Style::Dot => format!("{l}."),
        Style::Colon => format!("{l}:"),
        _ => format!("({l})"),
    }
}

fn build_caption<R: Rng>(rng: &mut R, style: Style, n: usize) -> BuiltCaption {
    let letters: Vec<char> = ('a'..).take(n).collect();
    let upper = rng.gen_bool(0.5);
    let mut segments = BTreeMap::new();
    let mut parts: Vec<String> = Vec::new();
    let mut flagged = false;
    match style {
        Style::Unlabeled => {
            parts.push(format!("{} Composite of {n} views.", phrase(rng)));
        }
        Style::Duplicate => {
            for _ in 0..n {
                parts.push(format!("{} {}", marker(Style::Paren, 'a', upper), phrase(rng)));
            }
            flagged = n >= 2;
            if !flagged {
                let t = phrase(rng);
                segments.insert('a', t.clone());
                parts = vec![format!("(a) {t}")];
            }
        }
        Style::Combined if n >= 3 => {
            let shared = phrase(rng);
            parts.push(format!("({}, {}) {shared}", letters[0], letters[1]));
            segments.insert(letters[0], shared.clone());
            segments.insert(letters[1], shared);
            for &l in &letters[2..] {
                let t = phrase(rng);
                parts.push(format!("{} {t}", marker(Style::Paren, l, upper)));
                segments.insert(l, t);
            }
        }
        Style::Range if n >= 3 => {
            let shared = phrase(rng);
            parts.push(format!("({}–{}) {shared}", letters[0], letters[2]));
            for &l in &letters[..3] {
                segments.insert(l, shared.clone());
            }
            for &l in &letters[3..] {
                let t = phrase(rng);
                parts.push(format!("{} {t}", marker(Style::Paren, l, upper)));
                segments.insert(l, t);
            }
        }
        Style::Preamble => {
            parts.push(format!("Figure {}. Brain imaging findings.", rng.gen_range(1..9)));
            for &l in &letters {
                let t = phrase(rng);
                parts.push(format!("{} {t}", marker(Style::Paren, l, upper)));
                segments.insert(l, t);
            }
        }
        _ => {
            let effective = match style {
                Style::Combined | Style::Range => Style::Paren,
                s => s,
            };
            for &l in &letters {
                let t = phrase(rng);
                parts.push(format!("{} {t}", marker(effective, l, upper)));
                segments.insert(l, t);
            }
        }
    }
    BuiltCaption {
        text: parts.join(" "),
        segments,
        flagged,
    }
}

fn grid(n: usize) -> Vec<BoundingBox> {
    let (rows, cols) = match n {
        2 => (1, 2),
        3 => (1, 3),
        4 => (2, 2),
        _ => unreachable!(),
    };
    let w = (WIDTH - 2 * MARGIN - (cols - 1) * GUTTER) / cols;
    let h = (HEIGHT - 2 * MARGIN - (rows - 1) * GUTTER) / rows;
    let mut out = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            out.push(BoundingBox::new(
                MARGIN + c * (w + GUTTER),
                MARGIN + r * (h + GUTTER),
                w,
                h,
            ));
        }
    }
    out
}

fn token(text: &str, x: u32, y: u32, confidence: f64) -> OcrTokenLine {
    OcrTokenLine {
        text: text.into(),
        x,
        y,
        w: 14,
        h: 16,
        confidence,
    }
}

fn letter_text<R: Rng>(rng: &mut R, l: char) -> String {
    let u = l.to_ascii_uppercase();
    [
        format!("{u}"),
        format!("{l}"),
        format!("({l})"),
        format!("{l})"),
        format!("{u}."),
        format!("({u})"),
    ]
    .choose(rng)
    .unwrap()
    .clone()
}

fn det(b: BoundingBox, score: f64) -> DetectedBox {
    DetectedBox {
        x: b.x,
        y: b.y,
        w: b.w,
        h: b.h,
        score,
    }
}

pub fn corpus200() -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let total = BRAIN_FIGURES + OFF_TOPIC;
    let mut kinds: Vec<u8> = std::iter::repeat_n(2, COMPOUND_FIGURES)
        .chain(std::iter::repeat_n(1, BRAIN_FIGURES - COMPOUND_FIGURES))
        .chain(std::iter::repeat_n(0, OFF_TOPIC))
        .collect();
    kinds.shuffle(&mut rng);

    let mut corpus = SynthCorpus {
        records: Vec::new(),
        detections: Vec::new(),
        ocr: Vec::new(),
        expected: Vec::new(),
    };
    let mut singleton_variant = 0usize;
    for (i, kind) in kinds.into_iter().enumerate().take(total) {
        let figure_id = format!("pmc-{i:04}");
        let image_path = format!("{figure_id}.png");
        let entry = |regions| DetectionEntry {
            figure_id: figure_id.clone(),
            image_width: WIDTH,
            image_height: HEIGHT,
            regions,
        };

        if kind == 0 {
            let mut r = FigureRecord::new(&figure_id, &image_path, "Knee X-ray showing a tibial plateau fracture.");
            r.article_type = Some("case report".into());
            if i % 2 == 0 {
                corpus
                    .detections
                    .push(entry(grid(2).into_iter().map(|b| det(b, 0.9)).collect()));
            }
            corpus.records.push(r);
            continue;
        }

        let n = if kind == 2 {
            rng.gen_range(2..=4)
        } else {
            rng.gen_range(1..=3)
        };
        let style = *STYLES.choose(&mut rng).unwrap();
        let caption = build_caption(&mut rng, style, n);
        let mut record = FigureRecord::new(&figure_id, &image_path, caption.text.clone());
        record.year = Some(rng.gen_range(1937..=2018));
        if rng.gen_bool(0.5) {
            record.journal = Some("Brain tumor research and treatment".into());
        }
        corpus.records.push(record);

        if kind == 1 {
            let full = BoundingBox::new(0, 0, WIDTH, HEIGHT);
            match singleton_variant % 4 {
                0 => corpus.detections.push(entry(vec![det(full, 0.95)])),
                1 => {}
                2 => corpus.detections.push(entry(vec![])),
                _ => corpus.detections.push(entry(vec![
                    det(BoundingBox::new(20, 20, 300, 200), 0.8),
                    det(BoundingBox::new(400, 300, 100, 100), 0.3),
                ])),
            }
            singleton_variant += 1;
            if rng.gen_bool(0.5) {
                corpus.ocr.push(OcrEntry {
                    figure_id: figure_id.clone(),
                    tokens: vec![token("A", 25, 25, 0.99)],
                });
            }
            corpus.expected.push(ExpectedFigure {
                figure_id,
                compound: false,
                flagged: caption.flagged,
                pairs: vec![ExpectedPair {
                    status: PairStatus::Singleton.as_str().into(),
                    label: None,
                    text: caption.text,
                }],
            });
            continue;
        }

        let boxes = grid(n);
        let letters: Vec<char> = ('a'..).take(n).collect();
        let caption_labels: Vec<char> = caption.segments.keys().copied().collect();
        let mut regions: Vec<DetectedBox> = boxes.iter().map(|b| det(*b, rng.gen_range(0.6..0.99))).collect();
        if rng.gen_bool(0.3) {
            // Low-score box: removed by the score threshold.
            regions.push(det(BoundingBox::new(MARGIN, MARGIN, 50, 50), rng.gen_range(0.05..0.45)));
        }
        if rng.gen_bool(0.3) {
            // Near-duplicate of panel 0 with a lower score: removed as an overlap.
            let b = boxes[0];
            let s = regions[0].score - 0.05;
            regions.push(det(BoundingBox::new(b.x + 4, b.y + 4, b.w - 4, b.h - 4), s));
        }
        regions.shuffle(&mut rng);
        corpus.detections.push(entry(regions));

        let mut tokens = Vec::new();
        let mut pairs = Vec::new();
        for (k, b) in boxes.iter().enumerate() {
            let own = letters[k];
            let (x, y) = (b.x + 3, b.y + 3);
            let candidates: Vec<char> = match rng.gen_range(0..10) {
                0 => vec![],
                1 => {
                    tokens.push(token(&letter_text(&mut rng, own), x, y, 0.3));
                    vec![]
                }
                2 => {
                    tokens.push(token("z", x, y, 0.9));
                    vec!['z']
                }
                3 => {
                    let other = letters[(k + 1) % n];
                    tokens.push(token(&letter_text(&mut rng, own), x, y, 0.9));
                    tokens.push(token(&letter_text(&mut rng, other), x + 40, y, 0.9));
                    vec![own, other]
                }
                4 => {
                    tokens.push(token("MRI", x + 60, y + 60, 0.97));
                    tokens.push(token(&letter_text(&mut rng, own), x, y, 0.9));
                    vec![own]
                }
                _ => {
                    tokens.push(token(&letter_text(&mut rng, own), x, y, rng.gen_range(0.6..1.0)));
                    vec![own]
                }
            };
            let (status, label) = super::expected_status(&candidates, &caption_labels, n);
            let text = match label {
                Some(l) => caption.segments[&l].clone(),
                None => caption.text.clone(),
            };
            pairs.push(ExpectedPair {
                status: status.as_str().into(),
                label,
                text,
            });
        }
        if rng.gen_bool(0.3) {
            // Token centered in the first vertical gutter: belongs to no panel.
            tokens.push(token("a", boxes[0].x + boxes[0].w + 2, 100, 0.99));
        }
        corpus.ocr.push(OcrEntry {
            figure_id: figure_id.clone(),
            tokens,
        });
        corpus.expected.push(ExpectedFigure {
            figure_id,
            compound: true,
            flagged: caption.flagged,
            pairs,
        });
    }
    corpus
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) {
    let mut f = fs::File::create(path).unwrap();
    for item in items {
        serde_json::to_writer(&mut f, item).unwrap();
        f.write_all(b"\n").unwrap();
    }
}

/// Writes `manifest.jsonl`, `detections.jsonl`, `ocr.jsonl` and `expected.jsonl`.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let manifest = CorpusManifest::new(corpus.records.clone(), vec![]).unwrap();
    save_manifest(&manifest, &dir.join("manifest.jsonl")).unwrap();
    write_jsonl(&dir.join("detections.jsonl"), &corpus.detections);
    write_jsonl(&dir.join("ocr.jsonl"), &corpus.ocr);
    write_jsonl(&dir.join("expected.jsonl"), &corpus.expected);
}

pub fn read_expected(dir: &Path) -> Vec<ExpectedFigure> {
    fs::read_to_string(dir.join("expected.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}
