//! `manifest.jsonl`: one JSON object per sample, in dataset order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::write_file;
use crate::dataset::Split;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub clip_id: String,
    /// Relative to the manifest's directory.
    pub path: String,
    pub label: usize,
    pub split: Split,
    #[serde(default)]
    pub augmented: bool,
    /// CRC-32 of the whole feature file, 8 lowercase hex digits.
    pub checksum: String,
}

pub fn checksum_hex(bytes: &[u8]) -> String {
    format!("{:08x}", crc32fast::hash(bytes))
}

/// Parses manifest text; each entry is either a record or the error for
/// that line, tagged with its 1-based line number. Blank lines are skipped.
pub fn parse_manifest_lines(text: &str) -> Vec<(usize, std::result::Result<ManifestRecord, String>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, serde_json::from_str(l).map_err(|e| e.to_string())))
        .collect()
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest_lines(&text)
        .into_iter()
        .map(|(line, r)| r.map_err(|msg| Error::format(path, format!("line {line}: {msg}"))))
        .collect()
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("manifest record serializes"));
        text.push('\n');
    }
    write_file(path, text.as_bytes())
}
