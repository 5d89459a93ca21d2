//! Versioned model checkpoint container.
//!
//! All integers are `u32` little-endian.
//!
//! ```text
//! "FTBC" | version=1 | config_len | config JSON (ModelConfig, UTF-8)
//! tensor_count
//! per tensor: name_len | name (UTF-8) | ndim | dims[ndim] | prod(dims) x f32 LE
//! ```
//!
//! Tensors appear in parameter-layout order. Values are stored as `f32`, so a
//! loaded model is the trained one rounded to single precision.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, ParamLayout};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FTBC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(params: &ModelParams) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION as usize);
    let config = serde_json::to_vec(params.config())?;
    put_u32(&mut out, config.len());
    out.extend_from_slice(&config);
    let layout = params.layout();
    put_u32(&mut out, layout.blocks.len());
    for block in &layout.blocks {
        put_u32(&mut out, block.name.len());
        out.extend_from_slice(block.name.as_bytes());
        put_u32(&mut out, block.shape.len());
        for &d in &block.shape {
            put_u32(&mut out, d);
        }
        for &v in &params.values()[block.range()] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.bytes.len() - self.pos < n {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<ModelParams, String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err("bad magic".into());
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(format!("unsupported version {version}"));
    }
    let n = c.u32()?;
    let config: ModelConfig =
        serde_json::from_slice(c.take(n)?).map_err(|e| format!("config: {e}"))?;
    config.validate().map_err(|e| e.to_string())?;
    let layout = ParamLayout::new(&config);
    let count = c.u32()?;
    if count != layout.blocks.len() {
        return Err(format!(
            "{count} tensors, config implies {}",
            layout.blocks.len()
        ));
    }
    let mut values = Vec::with_capacity(layout.total_len());
    for block in &layout.blocks {
        let n = c.u32()?;
        let name = std::str::from_utf8(c.take(n)?).map_err(|e| e.to_string())?;
        if name != block.name {
            return Err(format!("tensor {name:?} where {:?} was expected", block.name));
        }
        let ndim = c.u32()?;
        let shape = (0..ndim).map(|_| c.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
        if shape != block.shape {
            return Err(format!("tensor {name} has shape {shape:?}, expected {:?}", block.shape));
        }
        for chunk in c.take(block.len() * 4)?.chunks_exact(4) {
            values.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
        }
    }
    if c.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - c.pos));
    }
    ModelParams::from_values(config, values).map_err(|e| e.to_string())
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(params)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|message| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    })
}
