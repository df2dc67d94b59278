//! `VBNC` checkpoint container.
//!
//! ```text
//! magic      b"VBNC"
//! version    u32
//! config     u32 length + UTF-8 key = value text
//! count      u32
//! per parameter:
//!   name     u16 length + UTF-8
//!   rank     u8
//!   dims     u32 × rank
//!   values   f64 × product(dims), row-major
//! crc32      u32 over every preceding byte
//! ```
//!
//! All integers and floats are little-endian. No timestamps are stored, so
//! identical models serialize to identical bytes.

use std::path::Path;

use crate::binio::{read_file, write_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::model::{ModelConfig, VibedModel};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VBNC";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn to_bytes(model: &VibedModel) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(&CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    let config = model.config.to_kv().render();
    w.u32(config.len() as u32);
    w.bytes(config.as_bytes());
    w.u32(model.params.len() as u32);
    for (_, p) in model.params.iter() {
        w.u16(p.name.len() as u16);
        w.bytes(p.name.as_bytes());
        w.u8(p.value.rank() as u8);
        for &d in p.value.shape() {
            w.u32(d as u32);
        }
        for &v in p.value.data() {
            w.f64(v);
        }
    }
    w.finish_with_crc()
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<VibedModel> {
    let mut r = ByteReader::new(bytes, path);
    let magic = r.magic()?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let config_len = r.u32()? as usize;
    let config_text = r.utf8(config_len)?;
    let config = ModelConfig::from_kv(&KvMap::parse(&config_text)?)?;
    let count = r.u32()? as usize;

    let mut loaded = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = r.utf8(name_len)?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        r.require(n * 8)?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f64()?);
        }
        let value = Tensor::new(shape, data)
            .map_err(|e| Error::format(path, format!("parameter {name}: {e}")))?;
        loaded.push((name, value));
    }
    r.verify_crc_trailer()?;

    let mut model = VibedModel::new(config)?;
    if loaded.len() != model.params.len() {
        return Err(Error::format(
            path,
            format!(
                "checkpoint holds {} parameters, configuration expects {}",
                loaded.len(),
                model.params.len()
            ),
        ));
    }
    for (name, value) in loaded {
        let id = model
            .params
            .find(&name)
            .ok_or_else(|| Error::format(path, format!("unknown parameter {name:?}")))?;
        model
            .params
            .get_mut(id)
            .set_value(value)
            .map_err(|e| Error::format(path, format!("parameter {name}: {e}")))?;
    }
    Ok(model)
}

pub fn save(model: &VibedModel, path: &Path) -> Result<()> {
    write_file(path, &to_bytes(model))
}

pub fn load(path: &Path) -> Result<VibedModel> {
    from_bytes(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn toy() -> VibedModel {
        VibedModel::new(ModelConfig {
            variant: Variant::Transformer,
            seq_len: 3,
            feature_dim: 4,
            hidden: 4,
            mlp_hidden: 6,
            heads: 2,
            d_ff: 5,
            pe_max_len: 8,
            seed: 3,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn roundtrip_preserves_config_and_values() {
        let mut model = toy();
        model.params.get_mut(model.head.b2).value.fill(0.125);
        let bytes = to_bytes(&model);
        assert_eq!(&bytes[..4], b"VBNC");
        let back = from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.config, model.config);
        for ((_, a), (_, b)) in model.params.iter().zip(back.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
        }
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = to_bytes(&toy());
        let n = bytes.len();
        bytes[n - 20] ^= 0x40;
        assert!(matches!(
            from_bytes(&bytes, Path::new("mem")),
            Err(Error::Checksum { .. })
        ));
        let bytes = to_bytes(&toy());
        assert!(matches!(
            from_bytes(&bytes[..bytes.len() / 2], Path::new("mem")),
            Err(Error::Truncated { .. })
        ));
        let mut bytes = to_bytes(&toy());
        bytes[4] = 9;
        assert!(matches!(
            from_bytes(&bytes, Path::new("mem")),
            Err(Error::UnsupportedVersion { found: 9, supported: 1, .. })
        ));
    }
}
