//! Versioned binary checkpoint: magic, version, TOML config block, then
//! named little-endian f64 tensors in [`EncoderParams::shapes`] order.

use std::path::Path;

use super::{EncoderConfig, EncoderModel, EncoderParams};
use crate::error::{Error, Result};
use crate::io::{atomic_write, read_bytes, ByteReader};
use crate::rng::seeded;

const MAGIC: &[u8; 5] = b"WAENC";
const VERSION: u32 = 1;

pub fn checkpoint_bytes(model: &EncoderModel) -> Result<Vec<u8>> {
    let config = toml::to_string(model.config())
        .map_err(|e| Error::format(format!("serializing encoder config: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    let shapes = model.params().shapes();
    out.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for ((name, shape), (_, data)) in shapes.iter().zip(model.params().tensors()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(shape.len() as u8);
        for d in shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<EncoderModel> {
    let mut r = ByteReader::new(bytes);
    if r.take(5)? != MAGIC {
        return Err(Error::format("not an encoder checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(format!(
            "checkpoint version {version}, expected {VERSION}"
        )));
    }
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?)
        .map_err(|_| Error::format("checkpoint config is not UTF-8"))?;
    let config: EncoderConfig =
        toml::from_str(text).map_err(|e| Error::format(format!("checkpoint config: {e}")))?;
    config.validate()?;

    let mut params = EncoderParams::init(&config, &mut seeded(0, "shape"));
    let expected = params.shapes();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::format(format!(
            "checkpoint has {count} tensors, config implies {}",
            expected.len()
        )));
    }
    for ((name, shape), (_, slot)) in expected.iter().zip(params.tensors_mut()) {
        let n = r.u32()? as usize;
        let found = std::str::from_utf8(r.take(n)?).map_err(|_| Error::format("tensor name"))?;
        if found != name {
            return Err(Error::format(format!(
                "expected tensor {name}, found {found}"
            )));
        }
        let ndim = r.u8()? as usize;
        let dims = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(Error::format(format!(
                "tensor {name} has shape {dims:?}, config implies {shape:?}"
            )));
        }
        slot.copy_from_slice(&r.f64s(slot.len())?);
    }
    if !r.is_empty() {
        return Err(Error::format("trailing bytes after checkpoint"));
    }
    EncoderModel::from_parts(config, params)
}

pub fn save_checkpoint(model: &EncoderModel, path: &Path) -> Result<()> {
    atomic_write(path, &checkpoint_bytes(model)?)
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderModel> {
    checkpoint_from_bytes(&read_bytes(path)?)
}
