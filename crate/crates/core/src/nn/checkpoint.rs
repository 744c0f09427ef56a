//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "AOIMLP\0\x01"
//! version    u32
//! seed       u64
//! n_layers   u32
//! n_layers x { input_dim u32, output_dim u32, activation u8 }
//! n_layers x { weights f64[input_dim * output_dim], biases f64[output_dim] }
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{Activation, Dense, LayerSpec, Mlp};

pub const MAGIC: &[u8; 8] = b"AOIMLP\0\x01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a model checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is incompatible with supported version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated at byte offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("unknown activation code {code} at byte offset {offset}")]
    BadActivation { offset: usize, code: u8 },
    #[error("invalid layer layout at byte offset {offset}: {reason}")]
    Layout { offset: usize, reason: String },
    #[error("{0} trailing bytes after the last parameter")]
    Trailing(usize),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub fn to_bytes(model: &Mlp) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + model.num_params() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&model.seed().to_le_bytes());
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        out.extend_from_slice(&(layer.spec.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(layer.spec.output_dim as u32).to_le_bytes());
        out.push(layer.spec.activation.code());
    }
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let rest = self.buf.len() - self.pos;
        if rest < n {
            return Err(CheckpointError::Truncated {
                offset: self.buf.len(),
                needed: n - rest,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<Mlp, CheckpointError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let seed = r.u64()?;
    let n_layers = r.u32()? as usize;
    let mut specs = Vec::with_capacity(n_layers.min(1024));
    for _ in 0..n_layers {
        let input_dim = r.u32()? as usize;
        let output_dim = r.u32()? as usize;
        let offset = r.pos;
        let code = r.u8()?;
        let activation =
            Activation::from_code(code).ok_or(CheckpointError::BadActivation { offset, code })?;
        specs.push(LayerSpec::new(input_dim, output_dim, activation));
    }
    let spec_end = r.pos;
    super::validate_specs(&specs).map_err(|e| CheckpointError::Layout {
        offset: spec_end,
        reason: e.to_string(),
    })?;
    let mut layers = Vec::with_capacity(n_layers);
    for spec in specs {
        let weights = r.f64s(spec.input_dim * spec.output_dim)?;
        let biases = r.f64s(spec.output_dim)?;
        layers.push(Dense {
            spec,
            weights,
            biases,
        });
    }
    if r.pos != buf.len() {
        return Err(CheckpointError::Trailing(buf.len() - r.pos));
    }
    Mlp::from_layers(layers, seed).map_err(|e| CheckpointError::Layout {
        offset: spec_end,
        reason: e.to_string(),
    })
}

pub fn save_checkpoint(model: &Mlp, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Mlp, CheckpointError> {
    from_bytes(&fs::read(path)?)
}
