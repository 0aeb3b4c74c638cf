//! Binary model state files.
//!
//! Layout, all little-endian: magic `FMAM`, `u32` version, the configuration
//! (`base_dim u32`, `levels u32`, `depths levels x u32`, `state u32`,
//! `patch u32`, `seed u64`), the name table (`count u32`, then per entry
//! `name_len u32`, UTF-8 name, `rank u32`, `rank x u32` extents) and finally
//! every tensor's `f64` values in name-table order.

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const STATE_MAGIC: &[u8; 4] = b"FMAM";
pub const STATE_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode(model: &Model) -> Vec<u8> {
    let cfg = &model.config;
    let mut buf = Vec::with_capacity(64 + 8 * model.params.scalar_count());
    buf.extend_from_slice(STATE_MAGIC);
    buf.extend_from_slice(&STATE_VERSION.to_le_bytes());
    put_u32(&mut buf, cfg.base_dim);
    put_u32(&mut buf, cfg.levels);
    for &d in &cfg.depths {
        put_u32(&mut buf, d);
    }
    put_u32(&mut buf, cfg.state);
    put_u32(&mut buf, cfg.patch);
    buf.extend_from_slice(&cfg.seed.to_le_bytes());
    put_u32(&mut buf, model.params.len());
    for (name, t) in model.params.iter() {
        put_u32(&mut buf, name.len());
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, t.rank());
        for &d in t.shape() {
            put_u32(&mut buf, d);
        }
    }
    for (_, t) in model.params.iter() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Model> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    let magic = r.take(4, "magic")?;
    if magic != STATE_MAGIC {
        r.pos = 0;
        return Err(r.err(format!("bad magic {magic:?}, not a model state file")));
    }
    let version = r.u32("version")? as u32;
    if version != STATE_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            expected: STATE_VERSION,
        });
    }
    let base_dim = r.u32("base_dim")?;
    let levels = r.u32("levels")?;
    if levels > 16 {
        return Err(r.err(format!("implausible level count {levels}")));
    }
    let depths = (0..levels)
        .map(|_| r.u32("depths"))
        .collect::<Result<Vec<_>>>()?;
    let state = r.u32("state")?;
    let patch = r.u32("patch")?;
    let seed = r.u64("seed")?;
    let config = ModelConfig {
        base_dim,
        depths,
        state,
        patch,
        levels,
        seed,
    };

    let count = r.u32("name count")?;
    let mut table = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| r.err("parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")?;
        if rank > 4 {
            return Err(r.err(format!("rank {rank} of {name} exceeds 4")));
        }
        let shape = (0..rank)
            .map(|_| r.u32("extent"))
            .collect::<Result<Vec<_>>>()?;
        table.push((name, shape));
    }
    let mut params = ParamStore::new();
    for (name, shape) in table {
        let len: usize = shape.iter().product();
        let raw = r.take(len * 8, &format!("values of {name}"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(name, Tensor::new(&shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Model { config, params })
}

pub fn save_state(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode(model)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a state file and checks it against its own configuration.
pub fn load_state(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let model = decode(&bytes, path)?;
    model.verify()?;
    Ok(model)
}

/// Reads a state file and checks its parameters against `config` instead
/// of the configuration recorded in the file.
pub fn load_state_for(path: &Path, config: &ModelConfig) -> Result<Model> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let stored = decode(&bytes, path)?;
    let model = Model {
        config: config.clone(),
        params: stored.params,
    };
    model.verify()?;
    Ok(model)
}
