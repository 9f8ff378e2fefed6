//! Subcaption label grammar and caption segmentation.
//!
//! A label marker is one of `(X)`, `X)`, `X.` or `X:` where `X` is a single
//! letter, a comma/ampersand list of letters (`a, b`, `A & B`) or an
//! ascending range of at most eight letters joined by `-`, `–` or `~`.
//! Markers are only recognized at segment-initial positions:
//!
//! - the start of the caption,
//! - directly after another marker (whitespace aside),
//! - after sentence-ending punctuation (`.`, `!`, `?`, `;`, `:`). The bare
//!   forms additionally need whitespace between that punctuation and the
//!   marker, so abbreviations such as `e.g.` do not produce a `g.` label.
//!
//! A parenthesized marker anywhere else (`lesion (a) persists`) is left in
//! the text and counted in [`CaptionParse::inline_rejected`].

use std::collections::BTreeSet;
use std::ops::Range;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CaptionError {
    #[error("unparsable label body {0:?}")]
    UnparsableBody(String),
}

/// Longest label body (in bytes) the scanner will consider.
const MAX_BODY_BYTES: usize = 24;
const MAX_RANGE_LETTERS: u8 = 8;
const RANGE_OPS: [char; 3] = ['-', '–', '~'];
const LIST_SEPS: [char; 2] = [',', '&'];
const SENTENCE_END: [char; 5] = ['.', '!', '?', ';', ':'];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMarker {
    pub byte_offset: usize,
    pub marker_len: usize,
    /// Lowercase, strictly ascending, never empty.
    pub letters: Vec<char>,
}

impl LabelMarker {
    pub fn end(&self) -> usize {
        self.byte_offset + self.marker_len
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubcaptionSegment {
    pub label: Option<char>,
    /// Marker stripped and whitespace trimmed.
    pub text: String,
    /// Location of `text` in the original caption.
    pub span: Range<usize>,
}

/// Full result of parsing one caption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionParse {
    pub markers: Vec<LabelMarker>,
    pub segments: Vec<SubcaptionSegment>,
    /// Text before the first marker, trimmed; `None` when empty.
    pub preamble: Option<String>,
    /// Two markers produced the same letter; the caption was treated as unlabeled.
    pub duplicate_label: bool,
    /// At least one marker was followed directly by another marker or the end.
    pub empty_segment: bool,
    /// Parenthesized label candidates skipped for not being segment-initial.
    pub inline_rejected: usize,
}

impl CaptionParse {
    pub fn is_flagged(&self) -> bool {
        self.duplicate_label || self.empty_segment
    }

    /// Letters that label at least one segment.
    pub fn labels(&self) -> BTreeSet<char> {
        self.segments.iter().filter_map(|s| s.label).collect()
    }
}

fn single_letter(part: &str) -> Option<char> {
    let mut chars = part.trim().chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => Some(c.to_ascii_lowercase()),
        _ => None,
    }
}

/// Expands the inside of a marker (`b`, `A, B`, `a–c`) into its letters.
pub fn expand_range(raw_label_body: &str) -> Result<Vec<char>, CaptionError> {
    let fail = || CaptionError::UnparsableBody(raw_label_body.to_owned());
    let body = raw_label_body.trim();
    if body.is_empty() {
        return Err(fail());
    }

    if body.contains(RANGE_OPS) {
        if body.contains(LIST_SEPS) {
            return Err(fail());
        }
        let mut parts = body.split(RANGE_OPS);
        let (Some(lo), Some(hi), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(fail());
        };
        let lo = single_letter(lo).ok_or_else(fail)?;
        let hi = single_letter(hi).ok_or_else(fail)?;
        if lo >= hi || (hi as u8 - lo as u8 + 1) > MAX_RANGE_LETTERS {
            return Err(fail());
        }
        return Ok((lo..=hi).collect());
    }

    let mut letters = BTreeSet::new();
    for part in body.split(LIST_SEPS) {
        letters.insert(single_letter(part).ok_or_else(fail)?);
    }
    Ok(letters.into_iter().collect())
}

fn is_body_char(c: char) -> bool {
    c.is_ascii_alphabetic() || c == ' ' || RANGE_OPS.contains(&c) || LIST_SEPS.contains(&c)
}

/// Tries to read a marker starting at byte `at`. Returns its length and letters.
fn marker_at(caption: &str, at: usize) -> Option<(usize, Vec<char>)> {
    let rest = &caption[at..];
    let first = rest.chars().next()?;

    let (body, terminator_end) = if first == '(' {
        let close = rest[1..].find(')')? + 1;
        if close - 1 > MAX_BODY_BYTES {
            return None;
        }
        let body = &rest[1..close];
        if !body.chars().all(is_body_char) {
            return None;
        }
        (body, close + 1)
    } else if first.is_ascii_alphabetic() {
        let (t, _) = rest
            .char_indices()
            .take_while(|(i, _)| *i <= MAX_BODY_BYTES)
            .find(|(_, c)| !is_body_char(*c))?;
        if !matches!(rest[t..].chars().next(), Some(')' | '.' | ':')) {
            return None;
        }
        (&rest[..t], t + 1)
    } else {
        return None;
    };

    let letters = expand_range(body).ok()?;
    match rest[terminator_end..].chars().next() {
        None => {}
        Some(next) if first == '(' && !next.is_alphanumeric() => {}
        Some(next) if next.is_whitespace() => {}
        Some(_) => return None,
    }
    Some((terminator_end, letters))
}

fn scan(caption: &str) -> (Vec<LabelMarker>, usize) {
    let mut markers = Vec::new();
    let mut inline_rejected = 0;
    // Segment-initial state for the next non-whitespace character.
    let mut after_marker = true;
    let mut after_stop = false;
    let mut saw_space = false;

    let mut i = 0;
    while i < caption.len() {
        let c = caption[i..].chars().next().expect("index on char boundary");
        if c.is_whitespace() {
            saw_space = true;
            i += c.len_utf8();
            continue;
        }
        let initial = after_marker || (after_stop && (saw_space || c == '('));
        if let Some((len, letters)) = marker_at(caption, i).filter(|_| initial) {
            markers.push(LabelMarker {
                byte_offset: i,
                marker_len: len,
                letters,
            });
            i += len;
            after_marker = true;
            after_stop = false;
            saw_space = false;
            continue;
        }
        if !initial && c == '(' && marker_at(caption, i).is_some() {
            inline_rejected += 1;
        }
        after_marker = false;
        after_stop = SENTENCE_END.contains(&c);
        saw_space = false;
        i += c.len_utf8();
    }
    (markers, inline_rejected)
}

/// Finds every label marker, in ascending byte order.
pub fn scan_labels(caption: &str) -> Vec<LabelMarker> {
    scan(caption).0
}

fn trimmed(caption: &str, range: Range<usize>) -> (String, Range<usize>) {
    let raw = &caption[range.clone()];
    let lead = raw.len() - raw.trim_start().len();
    let text = raw.trim();
    let start = range.start + lead;
    (text.to_owned(), start..start + text.len())
}

fn unlabeled(caption: &str) -> SubcaptionSegment {
    let (text, span) = trimmed(caption, 0..caption.len());
    SubcaptionSegment {
        label: None,
        text,
        span,
    }
}

pub fn parse_caption(caption: &str) -> CaptionParse {
    let (markers, inline_rejected) = scan(caption);
    let mut parse = CaptionParse {
        markers,
        segments: Vec::new(),
        preamble: None,
        duplicate_label: false,
        empty_segment: false,
        inline_rejected,
    };
    if parse.markers.is_empty() {
        parse.segments.push(unlabeled(caption));
        return parse;
    }

    let mut seen = BTreeSet::new();
    for m in &parse.markers {
        for &l in &m.letters {
            if !seen.insert(l) {
                parse.duplicate_label = true;
            }
        }
    }
    if parse.duplicate_label {
        parse.segments.push(unlabeled(caption));
        return parse;
    }

    let (preamble, _) = trimmed(caption, 0..parse.markers[0].byte_offset);
    parse.preamble = (!preamble.is_empty()).then_some(preamble);

    for (k, m) in parse.markers.iter().enumerate() {
        let end = parse.markers.get(k + 1).map_or(caption.len(), |next| next.byte_offset);
        let (text, span) = trimmed(caption, m.end()..end);
        if text.is_empty() {
            parse.empty_segment = true;
            continue;
        }
        for &l in &m.letters {
            parse.segments.push(SubcaptionSegment {
                label: Some(l),
                text: text.clone(),
                span: span.clone(),
            });
        }
    }
    if parse.segments.is_empty() {
        // Only markers and whitespace: nothing to pair against but the caption itself.
        parse.segments.push(unlabeled(caption));
    }
    parse
}

/// Splits a caption into labeled subcaptions; one unlabeled segment if none.
pub fn segment_caption(caption: &str) -> Vec<SubcaptionSegment> {
    parse_caption(caption).segments
}
