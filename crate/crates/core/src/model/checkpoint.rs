//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "DEPTHCMP"
//! version u32
//! config  u32 length + UTF-8 `key = value` echo of the model config
//! count   u32 number of tensors
//! record  u32 name length + UTF-8 name
//!         u32 rank + rank × u32 dims
//!         product(dims) × f32 values
//! ```

use super::config::ModelConfig;
use super::network::Model;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"DEPTHCMP";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Serialize the model. Values are stored as `f32`, so a save-load cycle
/// rounds parameters to single precision; saving the loaded model again
/// reproduces the same bytes.
pub fn save_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(64 + 4 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, &model.config().to_echo())?;
    put_u32(&mut out, model.params().len())?;
    for (name, t) in model.params().iter() {
        put_str(&mut out, name)?;
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Checkpoint(format!("{what} is not valid UTF-8")))
    }
}

/// Rebuild a model from checkpoint bytes. The architecture comes from the
/// embedded config; every tensor must match it in name and shape.
pub fn load_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    let config = ModelConfig::from_echo(&r.string("config")?)?;
    let mut model = Model::new(config)?;
    let count = r.u32("tensor count")?;
    if count != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "{count} tensors stored but the configured model has {}",
            model.params().len()
        )));
    }
    for i in 0..count {
        let name = r.string("tensor name")?;
        if name != model.params().names()[i] {
            return Err(Error::Checkpoint(format!("tensor {i} is {name:?}, expected {:?}", model.params().names()[i])));
        }
        let rank = r.u32("rank")?;
        let shape = (0..rank).map(|_| r.u32("dimension")).collect::<Result<Vec<_>>>()?;
        let t = &mut model.params_mut().tensors_mut()[i];
        if shape != t.shape() {
            return Err(Error::Checkpoint(format!("{name}: stored shape {shape:?}, expected {:?}", t.shape())));
        }
        let raw = r.take(4 * t.len(), &name)?;
        for (dst, b) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}
