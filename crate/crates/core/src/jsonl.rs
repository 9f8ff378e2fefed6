//! Line-level helpers shared by the JSONL readers and writers.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

/// One non-blank line of a JSONL file with its 1-based line number.
pub(crate) struct RawLine {
    pub number: usize,
    pub text: String,
}

pub(crate) enum ReadLinesError {
    Io(io::Error),
    NotUtf8 { line: usize },
}

/// Reads `path` and splits it on `\n`. Whitespace-only lines are skipped but
/// still counted, so reported line numbers match what an editor shows.
pub(crate) fn read_lines(path: &Path) -> Result<Vec<RawLine>, ReadLinesError> {
    let bytes = fs::read(path).map_err(ReadLinesError::Io)?;
    let mut out = Vec::new();
    for (idx, chunk) in bytes.split(|b| *b == b'\n').enumerate() {
        let text = std::str::from_utf8(chunk).map_err(|_| ReadLinesError::NotUtf8 { line: idx + 1 })?;
        if text.trim().is_empty() {
            continue;
        }
        out.push(RawLine {
            number: idx + 1,
            text: text.to_owned(),
        });
    }
    Ok(out)
}

/// Serializes each item as compact JSON on its own `\n`-terminated line.
pub(crate) fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> io::Result<()> {
    let file = fs::File::create(path)?;
    let mut writer = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut writer, &item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}
