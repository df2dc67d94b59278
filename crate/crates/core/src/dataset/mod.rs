//! Feature datasets: per-sample `VBFS` files indexed by a JSON-lines
//! manifest.

pub mod manifest;
pub mod synthetic;
pub mod validate;
pub mod vbfs;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use manifest::{read_manifest, write_manifest, ManifestRecord, MANIFEST_FILE};
pub use synthetic::{gen_synthetic, SynthConfig};
pub use validate::{validate_dataset, validate_samples, Finding, FindingKind, ValidationReport};
pub use vbfs::{decode_sample, encode_sample, read_sample, sample_file_name, write_sample, write_sample_to};

pub const NUM_CLASSES: usize = 4;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["Very Low", "Low", "High", "Very High"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Split::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?} (train|val|test)"))),
        }
    }
}

/// One stream's `frames × dim` per-frame features, stored at 32-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(frames: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != frames * dim {
            return Err(Error::Validation(format!(
                "feature sequence {frames} × {dim} needs {} values, got {}",
                frames * dim,
                values.len()
            )));
        }
        Ok(Self { frames, dim, values })
    }

    /// Narrows a `T × D` tensor to 32-bit storage.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::shape("feature sequence", format!("expected T × D, got {:?}", t.shape())));
        }
        Self::new(t.shape()[0], t.shape()[1], t.data().iter().map(|&v| v as f32).collect())
    }

    /// Widens to a `T × D` f64 tensor.
    pub fn to_tensor(&self) -> Result<Tensor> {
        if self.frames == 0 {
            return Err(Error::EmptySequence("feature sequence has no frames".into()));
        }
        Tensor::matrix(self.frames, self.dim, self.values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub clip_id: String,
    pub label: usize,
    pub split: Split,
    pub augmented: bool,
    pub scene: FeatureSequence,
    pub face: FeatureSequence,
}

impl Sample {
    /// Problems with this sample, empty when it is well formed.
    pub fn problems(&self) -> Vec<(FindingKind, String)> {
        let mut out = Vec::new();
        if self.scene.frames != self.face.frames || self.scene.dim != self.face.dim {
            out.push((
                FindingKind::StreamShapeMismatch,
                format!(
                    "scene is {} × {}, face is {} × {}",
                    self.scene.frames, self.scene.dim, self.face.frames, self.face.dim
                ),
            ));
        }
        if self.label >= NUM_CLASSES {
            out.push((
                FindingKind::LabelOutOfRange,
                format!("label {} outside 0..{NUM_CLASSES}", self.label),
            ));
        }
        if !self.scene.all_finite() || !self.face.all_finite() {
            out.push((FindingKind::NonFinite, "feature values contain NaN or infinity".into()));
        }
        if self.scene.frames == 0 || self.scene.dim == 0 {
            out.push((FindingKind::StreamShapeMismatch, "empty feature sequence".into()));
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        match self.problems().into_iter().next() {
            None => Ok(()),
            Some((_, msg)) => Err(Error::Validation(format!("{}: {msg}", self.clip_id))),
        }
    }

    pub fn tensors(&self) -> Result<(Tensor, Tensor)> {
        Ok((self.scene.to_tensor()?, self.face.to_tensor()?))
    }
}

#[derive(Debug, Clone)]
pub enum SampleSource {
    Memory(Arc<Sample>),
    File(PathBuf),
}

/// Metadata for one sample plus where to fetch its features from.
#[derive(Debug, Clone)]
pub struct SampleHandle {
    pub clip_id: String,
    pub label: usize,
    pub split: Split,
    pub augmented: bool,
    pub source: SampleSource,
}

impl SampleHandle {
    pub fn load(&self) -> Result<Arc<Sample>> {
        match &self.source {
            SampleSource::Memory(s) => Ok(Arc::clone(s)),
            SampleSource::File(path) => {
                let s = read_sample(path)?;
                if s.clip_id != self.clip_id || s.label != self.label || s.split != self.split {
                    return Err(Error::Validation(format!(
                        "{}: header (clip {}, label {}, split {}) disagrees with manifest",
                        path.display(),
                        s.clip_id,
                        s.label,
                        s.split
                    )));
                }
                Ok(Arc::new(s))
            }
        }
    }
}

/// Samples in manifest order.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    records: Vec<SampleHandle>,
}

impl Dataset {
    pub fn from_samples(samples: Vec<Sample>) -> Self {
        let records = samples
            .into_iter()
            .map(|s| SampleHandle {
                clip_id: s.clip_id.clone(),
                label: s.label,
                split: s.split,
                augmented: s.augmented,
                source: SampleSource::Memory(Arc::new(s)),
            })
            .collect();
        Self { records }
    }

    pub fn records(&self) -> &[SampleHandle] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&SampleHandle> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn label_histogram(&self, split: Split) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for r in self.records.iter().filter(|r| r.split == split) {
            if r.label < NUM_CLASSES {
                h[r.label] += 1;
            }
        }
        h
    }

    /// Writes every sample as a `VBFS` file under `dir` plus a manifest;
    /// returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut records = Vec::with_capacity(self.records.len());
        let mut names = HashSet::new();
        for h in &self.records {
            let sample = h.load()?;
            let name = sample_file_name(&sample.clip_id);
            if !names.insert(name.clone()) {
                return Err(Error::Validation(format!(
                    "clip {:?} maps to an already used file name {name}",
                    sample.clip_id
                )));
            }
            let bytes = encode_sample(&sample)?;
            let path = dir.join(&name);
            crate::binio::write_file(&path, &bytes)?;
            records.push(ManifestRecord {
                clip_id: sample.clip_id.clone(),
                path: name,
                label: sample.label,
                split: sample.split,
                augmented: sample.augmented,
                checksum: manifest::checksum_hex(&bytes),
            });
        }
        let manifest = dir.join(MANIFEST_FILE);
        write_manifest(&manifest, &records)?;
        Ok(manifest)
    }
}

/// Reads a manifest into file-backed handles. Feature files are opened
/// lazily; their presence is checked up front.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let records = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen = HashSet::new();
    let mut handles = Vec::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.clip_id.clone()) {
            return Err(Error::Validation(format!("duplicate clip_id {:?}", r.clip_id)));
        }
        if r.label >= NUM_CLASSES {
            return Err(Error::Validation(format!(
                "{}: label {} outside 0..{NUM_CLASSES}",
                r.clip_id, r.label
            )));
        }
        let path = base.join(&r.path);
        if !path.is_file() {
            return Err(Error::Validation(format!(
                "{}: feature file {} does not exist",
                r.clip_id,
                path.display()
            )));
        }
        handles.push(SampleHandle {
            clip_id: r.clip_id,
            label: r.label,
            split: r.split,
            augmented: r.augmented,
            source: SampleSource::File(path),
        });
    }
    Ok(Dataset { records: handles })
}
