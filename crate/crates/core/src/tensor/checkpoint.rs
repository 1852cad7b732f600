//! Binary checkpoint format.
//!
//! Layout (little-endian): magic `ADTS`, format version `u32`, then records
//! of `name_len u32, name (UTF-8), rank u32, dims u32 × rank, f32 × prod(dims)`
//! until end of file. Values are stored as `f32` and widened to `f64` on load;
//! parameters produced by this crate are always `f32`-representable, so a
//! save/load round trip is exact for them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ADTS";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(w: &mut W, store: &ParamStore) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, store: &ParamStore) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, store).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) struct Cursor<'a> {
    pub(crate) buf: &'a [u8],
    pub(crate) pos: usize,
    pub(crate) path: &'a Path,
}

impl<'a> Cursor<'a> {
    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                offset: self.pos as u64,
                message: format!("truncated {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses a checkpoint from bytes; `path` is only used in error messages.
pub fn read_checkpoint<R: Read>(r: &mut R, path: &Path) -> Result<ParamStore> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { buf: &buf, pos: 0, path };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: "bad magic, expected ADTS".into(),
        });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let mut store = ParamStore::new();
    while c.pos < buf.len() {
        let start = c.pos;
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?).map_err(|_| Error::Format {
            path: path.to_path_buf(),
            offset: start as u64,
            message: "parameter name is not UTF-8".into(),
        })?;
        let rank = c.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = c.take(n * 4, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if store.insert(name, Tensor::new(shape, data)?).is_some() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: start as u64,
                message: format!("duplicate parameter {name}"),
            });
        }
    }
    Ok(store)
}

/// Loads a checkpoint and validates it against `template`: every stored
/// name must exist in the template with the same shape. Names absent from
/// the file are simply missing from the result.
pub fn load_checkpoint(path: &Path, template: &ParamStore) -> Result<ParamStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let store = read_checkpoint(&mut BufReader::new(file), path)?;
    let unknown: Vec<String> = store
        .names()
        .filter(|n| !template.contains(n))
        .map(str::to_string)
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownParameters(unknown));
    }
    for (name, t) in store.iter() {
        let expected = template.require(name)?;
        if expected.shape() != t.shape() {
            return Err(Error::ParameterShape {
                name: name.to_string(),
                expected: expected.shape().to_vec(),
                found: t.shape().to_vec(),
            });
        }
    }
    Ok(store)
}
