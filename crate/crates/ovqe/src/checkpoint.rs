//! Binary weight container.
//!
//! Layout (all integers little-endian `u32`):
//! magic `OVQEWGT\0`, version, channels, temporal radius, propagation
//! rounds, OFAE blocks, offset groups, parameter count, then per
//! parameter: name length, UTF-8 name, rank, dims, `f32` LE payload.

use std::fs;
use std::path::Path;

use ovqe_core::nn::{ModelConfig, Param, Weights};

use crate::error::{Error, InModule, Result};

pub const MAGIC: &[u8; 8] = b"OVQEWGT\0";
pub const VERSION: u32 = 1;

fn put(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} does not fit the container")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(weights: &Weights<f32>) -> Result<Vec<u8>> {
    let c = weights.config();
    let mut buf = Vec::with_capacity(64 + 4 * weights.param_count());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [c.channels, c.temporal_radius, c.propagation_rounds, c.ofae_blocks, c.offset_groups] {
        put(&mut buf, v)?;
    }
    put(&mut buf, weights.params().len())?;
    for p in weights.params() {
        put(&mut buf, p.name.len())?;
        buf.extend_from_slice(p.name.as_bytes());
        put(&mut buf, p.shape.len())?;
        for &d in &p.shape {
            put(&mut buf, d)?;
        }
        for v in &p.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

/// Decodes a container, rejecting it if its architecture differs from
/// `expected`. The returned weights carry `expected`'s seed.
pub fn decode(bytes: &[u8], expected: &ModelConfig) -> Result<Weights<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not an OVQE weight file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported container version {version}")));
    }
    let found = ModelConfig {
        channels: r.u32()?,
        temporal_radius: r.u32()?,
        propagation_rounds: r.u32()?,
        ofae_blocks: r.u32()?,
        offset_groups: r.u32()?,
        seed: expected.seed,
    };
    if !found.same_architecture(expected) {
        return Err(Error::Checkpoint(format!("checkpoint config {found:?} does not match requested {expected:?}")));
    }
    let count = r.u32()?;
    let mut params = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| {
            Error::Checkpoint(format!("parameter {name} has an overflowing shape"))
        })?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("payload too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(Param { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Weights::from_params(&found, params).in_module("ovqe_net")
}

pub fn save_weights(weights: &Weights<f32>, path: &Path) -> Result<()> {
    fs::write(path, encode(weights)?).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path, expected: &ModelConfig) -> Result<Weights<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, expected).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
