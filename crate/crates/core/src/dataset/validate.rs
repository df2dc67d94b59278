//! Dataset integrity checks. Validation never stops at the first problem;
//! everything found is collected into a [`ValidationReport`].

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::binio::read_file;
use crate::dataset::manifest::{checksum_hex, parse_manifest_lines};
use crate::dataset::{decode_sample, Sample, Split, CLASS_NAMES, NUM_CLASSES};

/// A class is flagged as imbalanced when its count is below this fraction
/// of the largest class in the same split.
pub const IMBALANCE_RATIO: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    Manifest,
    DuplicateClipId,
    MissingFile,
    ChecksumMismatch,
    Unreadable,
    MetadataMismatch,
    LabelOutOfRange,
    StreamShapeMismatch,
    InconsistentShape,
    NonFinite,
    AugmentedOutsideTrain,
}

impl fmt::Display for FindingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("kind serializes");
        f.write_str(s.as_str().unwrap_or("unknown"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub clip_id: Option<String>,
    pub kind: FindingKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub records: usize,
    pub findings: Vec<Finding>,
    pub class_counts: BTreeMap<Split, [usize; NUM_CLASSES]>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has(&self, kind: FindingKind) -> bool {
        self.findings.iter().any(|f| f.kind == kind)
    }

    /// Classes in `split` whose count is under [`IMBALANCE_RATIO`] of the
    /// largest class.
    pub fn underrepresented(&self, split: Split) -> Vec<usize> {
        let Some(counts) = self.class_counts.get(&split) else {
            return Vec::new();
        };
        let max = *counts.iter().max().unwrap_or(&0);
        (0..NUM_CLASSES)
            .filter(|&c| (counts[c] as f64) < IMBALANCE_RATIO * max as f64)
            .collect()
    }

    fn push(&mut self, clip_id: Option<&str>, kind: FindingKind, message: impl Into<String>) {
        self.findings.push(Finding {
            clip_id: clip_id.map(str::to_owned),
            kind,
            message: message.into(),
        });
    }

    fn count(&mut self, split: Split, label: usize) {
        if label < NUM_CLASSES {
            self.class_counts.entry(split).or_default()[label] += 1;
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "records: {}", self.records)?;
        writeln!(f, "{:<6} {:>9} {:>9} {:>9} {:>9}", "split", CLASS_NAMES[0], CLASS_NAMES[1], CLASS_NAMES[2], CLASS_NAMES[3])?;
        for (split, counts) in &self.class_counts {
            let low = self.underrepresented(*split);
            write!(f, "{:<6}", split.to_string())?;
            for (c, n) in counts.iter().enumerate() {
                let mark = if low.contains(&c) { "*" } else { " " };
                write!(f, " {:>8}{mark}", n)?;
            }
            writeln!(f)?;
        }
        if self.class_counts.keys().any(|&s| !self.underrepresented(s).is_empty()) {
            writeln!(f, "* below {:.0}% of the largest class in its split", IMBALANCE_RATIO * 100.0)?;
        }
        if self.findings.is_empty() {
            writeln!(f, "no findings")?;
        }
        for x in &self.findings {
            writeln!(f, "{} [{}] {}", x.clip_id.as_deref().unwrap_or("-"), x.kind, x.message)?;
        }
        Ok(())
    }
}

struct ShapeTracker {
    shape: Option<(usize, usize, String)>,
}

impl ShapeTracker {
    fn check(&mut self, s: &Sample, report: &mut ValidationReport) {
        let here = (s.scene.frames, s.scene.dim);
        match &self.shape {
            None => self.shape = Some((here.0, here.1, s.clip_id.clone())),
            Some((t, d, first)) if (*t, *d) != here => {
                let msg = format!("{} × {} differs from {first} ({t} × {d})", here.0, here.1);
                report.push(Some(&s.clip_id), FindingKind::InconsistentShape, msg);
            }
            Some(_) => {}
        }
    }
}

fn sample_findings(s: &Sample, report: &mut ValidationReport, shapes: &mut ShapeTracker) {
    for (kind, msg) in s.problems() {
        report.push(Some(&s.clip_id), kind, msg);
    }
    if s.augmented && s.split != Split::Train {
        report.push(Some(&s.clip_id), FindingKind::AugmentedOutsideTrain, format!("augmented sample in {} split", s.split));
    }
    shapes.check(s, report);
}

/// Checks in-memory samples.
pub fn validate_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen = HashSet::new();
    let mut shapes = ShapeTracker { shape: None };
    for s in samples {
        report.records += 1;
        if !seen.insert(s.clip_id.clone()) {
            report.push(Some(&s.clip_id), FindingKind::DuplicateClipId, "clip_id appears more than once");
        }
        report.count(s.split, s.label);
        sample_findings(s, &mut report, &mut shapes);
    }
    report
}

/// Checks a manifest and every feature file it references.
pub fn validate_dataset(manifest_path: &Path) -> ValidationReport {
    let mut report = ValidationReport::default();
    let text = match std::fs::read_to_string(manifest_path) {
        Ok(t) => t,
        Err(e) => {
            report.push(None, FindingKind::Manifest, format!("{}: {e}", manifest_path.display()));
            return report;
        }
    };
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen = HashSet::new();
    let mut shapes = ShapeTracker { shape: None };
    for (line, parsed) in parse_manifest_lines(&text) {
        let r = match parsed {
            Ok(r) => r,
            Err(msg) => {
                report.push(None, FindingKind::Manifest, format!("line {line}: {msg}"));
                continue;
            }
        };
        report.records += 1;
        let id = Some(r.clip_id.as_str());
        if !seen.insert(r.clip_id.clone()) {
            report.push(id, FindingKind::DuplicateClipId, format!("line {line}: clip_id appears more than once"));
        }
        if r.label >= NUM_CLASSES {
            report.push(id, FindingKind::LabelOutOfRange, format!("manifest label {} outside 0..{NUM_CLASSES}", r.label));
        }
        report.count(r.split, r.label);
        if r.augmented && r.split != Split::Train {
            report.push(id, FindingKind::AugmentedOutsideTrain, format!("augmented sample in {} split", r.split));
        }

        let path = base.join(&r.path);
        let bytes = match read_file(&path) {
            Ok(b) => b,
            Err(_) if !path.exists() => {
                report.push(id, FindingKind::MissingFile, format!("{} does not exist", path.display()));
                continue;
            }
            Err(e) => {
                report.push(id, FindingKind::Unreadable, e.to_string());
                continue;
            }
        };
        let actual = checksum_hex(&bytes);
        if !actual.eq_ignore_ascii_case(&r.checksum) {
            report.push(id, FindingKind::ChecksumMismatch, format!("manifest says {}, file hashes to {actual}", r.checksum));
        }
        let sample = match decode_sample(&bytes, &path) {
            Ok(s) => s,
            Err(e) => {
                report.push(id, FindingKind::Unreadable, e.to_string());
                continue;
            }
        };
        if sample.clip_id != r.clip_id
            || sample.label != r.label
            || sample.split != r.split
            || sample.augmented != r.augmented
        {
            report.push(
                id,
                FindingKind::MetadataMismatch,
                format!(
                    "file header has clip {}, label {}, split {}, augmented {}",
                    sample.clip_id, sample.label, sample.split, sample.augmented
                ),
            );
        }
        let mut inner = ValidationReport::default();
        sample_findings(&sample, &mut inner, &mut shapes);
        for f in inner.findings {
            // already reported from the manifest side
            if f.kind == FindingKind::AugmentedOutsideTrain
                || (f.kind == FindingKind::LabelOutOfRange && r.label >= NUM_CLASSES)
            {
                continue;
            }
            report.push(id, f.kind, f.message);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, FeatureSequence, MANIFEST_FILE};

    fn sample(id: &str, label: usize, split: Split) -> Sample {
        let seq = || FeatureSequence::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        Sample { clip_id: id.into(), label, split, augmented: false, scene: seq(), face: seq() }
    }

    fn written(samples: Vec<Sample>) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let m = Dataset::from_samples(samples).write(dir.path()).unwrap();
        (dir, m)
    }

    #[test]
    fn clean_dataset() {
        let (_d, m) = written(vec![sample("a", 0, Split::Train), sample("b", 1, Split::Train)]);
        let r = validate_dataset(&m);
        assert!(r.is_clean(), "{r}");
        assert_eq!(r.records, 2);
        assert_eq!(r.class_counts[&Split::Train], [1, 1, 0, 0]);
        assert_eq!(r.underrepresented(Split::Train), vec![2, 3]);
    }

    #[test]
    fn finds_each_problem_kind() {
        let (dir, m) = written(vec![sample("a", 0, Split::Train), sample("b", 1, Split::Val)]);
        let mut text = std::fs::read_to_string(&m).unwrap();
        text = text.replace("\"label\":1", "\"label\":7");
        text.push_str(&text.lines().next().unwrap().to_string());
        text.push('\n');
        text.push_str(r#"{"clip_id":"z","path":"z.vbfs","label":0,"split":"train","augmented":false,"checksum":"00000000"}"#);
        text.push_str("\nnot json\n");
        std::fs::write(&m, text).unwrap();
        let a = dir.path().join("a.vbfs");
        let mut bytes = std::fs::read(&a).unwrap();
        let n = bytes.len();
        bytes[n - 6] ^= 0xff;
        std::fs::write(&a, bytes).unwrap();

        let r = validate_dataset(&m);
        for kind in [
            FindingKind::LabelOutOfRange,
            FindingKind::DuplicateClipId,
            FindingKind::MissingFile,
            FindingKind::Manifest,
            FindingKind::ChecksumMismatch,
            FindingKind::Unreadable,
            FindingKind::MetadataMismatch,
        ] {
            assert!(r.has(kind), "missing {kind}: {r}");
        }
        let label = r.findings.iter().find(|f| f.kind == FindingKind::LabelOutOfRange).unwrap();
        assert_eq!(label.clip_id.as_deref(), Some("b"));
    }

    #[test]
    fn in_memory_checks() {
        let mut bad = sample("x", 0, Split::Test);
        bad.augmented = true;
        bad.face.values[0] = f32::INFINITY;
        let mut other = sample("y", 0, Split::Train);
        other.scene = FeatureSequence::new(1, 4, vec![0.0; 4]).unwrap();
        other.face = other.scene.clone();
        let r = validate_samples([&bad, &other]);
        assert!(r.has(FindingKind::NonFinite));
        assert!(r.has(FindingKind::AugmentedOutsideTrain));
        assert!(r.has(FindingKind::InconsistentShape));
    }

    #[test]
    fn unreadable_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let r = validate_dataset(&dir.path().join(MANIFEST_FILE));
        assert!(r.has(FindingKind::Manifest));
    }
}
