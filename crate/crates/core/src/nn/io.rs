//! Model files.
//!
//! Layout: magic `DZNN`, file version (u32), encoding version (u32), config
//! length (u32) and JSON config, parameter count (u64), parameters as
//! little-endian f32 in declared tensor order, then a CRC-32 of everything
//! before it. Integers are little-endian.

use std::path::Path;

use super::model::{Model, ModelConfig};
use super::NnError;
use crate::encode::ENCODING_VERSION;

pub const MAGIC: &[u8; 4] = b"DZNN";
pub const MODEL_FILE_VERSION: u32 = 1;

pub fn to_bytes(model: &Model<f32>) -> Vec<u8> {
    let config = serde_json::to_vec(model.config()).expect("config serializes");
    let mut out = Vec::with_capacity(32 + config.len() + model.params.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&MODEL_FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&ENCODING_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for p in &model.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(NnError::Corrupt("unexpected end of data"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model<f32>, NnError> {
    if bytes.len() < 4 {
        return Err(NnError::Checksum);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(NnError::Checksum);
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(NnError::Corrupt("not a model file"));
    }
    let version = r.u32()?;
    if version != MODEL_FILE_VERSION {
        return Err(NnError::FileVersion(version));
    }
    let encoding = r.u32()?;
    if encoding != ENCODING_VERSION {
        return Err(NnError::EncodingVersion(encoding));
    }
    let len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(len)?).map_err(|_| NnError::Corrupt("bad config"))?;
    let mut model = Model::<f32>::zeroed(config)?;
    let count = r.u64()? as usize;
    if count != model.params.len() {
        return Err(NnError::Corrupt("parameter count does not match the config"));
    }
    let raw = r.take(count * 4)?;
    for (p, chunk) in model.params.iter_mut().zip(raw.chunks_exact(4)) {
        *p = f32::from_le_bytes(chunk.try_into().unwrap());
    }
    if r.pos != body.len() {
        return Err(NnError::Corrupt("trailing data"));
    }
    Ok(model)
}

/// Write through a temporary file so a crash never leaves half a model.
pub fn save_model(model: &Model<f32>, path: impl AsRef<Path>) -> Result<(), NnError> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, to_bytes(model))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model<f32>, NnError> {
    from_bytes(&std::fs::read(path)?)
}
