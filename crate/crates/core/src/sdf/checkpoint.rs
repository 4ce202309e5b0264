//! Self-describing model checkpoints.
//!
//! ```text
//! magic "RPSN", version u32 = 1
//! config_len u32, config as UTF-8 JSON
//! tensor_count u32
//! per tensor: name_len u32, name, rows u32, cols u32, rows × cols f32
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{Read, Write};

use super::net::{ModelParams, Tensor};
use super::{ModelConfig, StochasticSdf};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RPSN";
const VERSION: u32 = 1;

pub fn write_checkpoint(w: &mut impl Write, model: &StochasticSdf) -> Result<()> {
    let config = serde_json::to_vec(&model.config)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config);
    buf.extend_from_slice(&(model.params.tensors.len() as u32).to_le_bytes());
    for t in &model.params.tensors {
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.extend_from_slice(&(t.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for v in &t.data {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<StochasticSdf> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = c.u32()?;
    let config: ModelConfig = serde_json::from_slice(c.take(len)?)
        .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    let count = c.u32()?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = c.u32()?;
        let name = String::from_utf8(c.take(len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rows = c.u32()?;
        let cols = c.u32()?;
        let raw = c.take(rows * cols * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        tensors.push(Tensor { name, rows, cols, data });
    }
    if c.pos != buf.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    StochasticSdf::new(config, ModelParams { tensors }).map_err(|e| Error::Format(e.to_string()))
}
