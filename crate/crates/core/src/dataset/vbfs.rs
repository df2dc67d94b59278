//! `VBFS` sample files.
//!
//! ```text
//! magic      b"VBFS"
//! version    u16
//! frames     u16   (T)
//! dim        u32   (D)
//! label      u8
//! split      u8    0 train, 1 val, 2 test
//! augmented  u8    0 or 1
//! clip_id    u16 length + UTF-8
//! scene      f32 × T·D, row-major
//! face       f32 × T·D, row-major
//! crc32      u32 over every preceding byte
//! ```
//!
//! Little-endian throughout.

use std::path::{Path, PathBuf};

use crate::binio::{read_file, write_file, ByteReader, ByteWriter};
use crate::dataset::{FeatureSequence, Sample, Split};
use crate::error::{Error, Result};

pub const SAMPLE_MAGIC: [u8; 4] = *b"VBFS";
pub const SAMPLE_VERSION: u16 = 1;

/// Bytes before the feature payload for a clip id of `id_len` bytes.
pub const fn header_len(id_len: usize) -> usize {
    4 + 2 + 2 + 4 + 1 + 1 + 1 + 2 + id_len
}

pub const TRAILER_LEN: usize = 4;

pub fn encode_sample(s: &Sample) -> Result<Vec<u8>> {
    s.check()?;
    if s.clip_id.is_empty() || s.clip_id.len() > u16::MAX as usize {
        return Err(Error::Validation(format!(
            "clip_id must be 1..={} bytes, got {}",
            u16::MAX,
            s.clip_id.len()
        )));
    }
    let (frames, dim) = (s.scene.frames, s.scene.dim);
    if frames > u16::MAX as usize || dim > u32::MAX as usize {
        return Err(Error::Validation(format!("{frames} × {dim} does not fit the header fields")));
    }
    let mut w = ByteWriter {
        buf: Vec::with_capacity(header_len(s.clip_id.len()) + 8 * frames * dim + TRAILER_LEN),
    };
    w.bytes(&SAMPLE_MAGIC);
    w.u16(SAMPLE_VERSION);
    w.u16(frames as u16);
    w.u32(dim as u32);
    w.u8(s.label as u8);
    w.u8(s.split.code());
    w.u8(u8::from(s.augmented));
    w.u16(s.clip_id.len() as u16);
    w.bytes(s.clip_id.as_bytes());
    for &v in s.scene.values.iter().chain(&s.face.values) {
        w.f32(v);
    }
    Ok(w.finish_with_crc())
}

pub fn decode_sample(bytes: &[u8], path: &Path) -> Result<Sample> {
    let mut r = ByteReader::new(bytes, path);
    let magic = r.magic()?;
    if magic != SAMPLE_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: SAMPLE_MAGIC,
            found: magic,
        });
    }
    let version = r.u16()?;
    if version != SAMPLE_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: u32::from(version),
            supported: u32::from(SAMPLE_VERSION),
        });
    }
    let frames = r.u16()? as usize;
    let dim = r.u32()? as usize;
    let label = r.u8()? as usize;
    let split_code = r.u8()?;
    let augmented = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(Error::format(path, format!("augmented flag {other} is not 0/1"))),
    };
    let id_len = r.u16()? as usize;
    let clip_id = r.utf8(id_len)?;
    let n = frames * dim;
    r.require(2 * n * 4 + TRAILER_LEN)?;
    let read_stream = |r: &mut ByteReader<'_>| -> Result<Vec<f32>> {
        (0..n).map(|_| r.f32()).collect()
    };
    let scene = read_stream(&mut r)?;
    let face = read_stream(&mut r)?;
    r.verify_crc_trailer()?;

    let split = Split::from_code(split_code)
        .ok_or_else(|| Error::format(path, format!("unknown split code {split_code}")))?;
    Ok(Sample {
        clip_id,
        label,
        split,
        augmented,
        scene: FeatureSequence::new(frames, dim, scene)?,
        face: FeatureSequence::new(frames, dim, face)?,
    })
}

/// File name used for a clip: the id with anything outside
/// `[A-Za-z0-9._-]` replaced by `_`, plus `.vbfs`.
pub fn sample_file_name(clip_id: &str) -> String {
    let stem: String = clip_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect();
    format!("{stem}.vbfs")
}

pub fn write_sample_to(s: &Sample, path: &Path) -> Result<()> {
    write_file(path, &encode_sample(s)?)
}

/// Writes `s` into `dir` under [`sample_file_name`] and returns the path.
pub fn write_sample(s: &Sample, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(sample_file_name(&s.clip_id));
    write_sample_to(s, &path)?;
    Ok(path)
}

pub fn read_sample(path: &Path) -> Result<Sample> {
    decode_sample(&read_file(path)?, path)
}
