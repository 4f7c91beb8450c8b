//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "CAMFORGE"
//! 8       4     format version (u32, currently 1)
//! 12      4     blob count (u32)
//! ...           blobs, each:
//!                 u32 name length, then that many UTF-8 bytes
//!                 u32 ndims (always 4), then ndims u32 dims (n, c, h, w)
//!                 prod(dims) f32 values, little-endian
//! ```
//!
//! Blobs appear in parameter-store insertion order, so a given model
//! always serializes byte-identically.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"CAMFORGE";
pub const FORMAT_VERSION: u32 = 1;

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(store.len() as u32).to_le_bytes()).map_err(io)?;
    for (_, entry) in store.iter() {
        let name = entry.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(name).map_err(io)?;
        let s = entry.value.shape();
        w.write_all(&4u32.to_le_bytes()).map_err(io)?;
        for d in [s.n, s.c, s.h, s.w] {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        for &v in entry.value.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads every named blob from a checkpoint file.
pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::data(format!(
            "{} is not a model checkpoint (bad magic)",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf).map_err(io)?;
    let version = u32::from_le_bytes(u32buf);
    if version != FORMAT_VERSION {
        return Err(Error::data(format!(
            "unsupported checkpoint format version {version}"
        )));
    }
    r.read_exact(&mut u32buf).map_err(io)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut blobs = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u32buf).map_err(io)?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::data("checkpoint parameter name is not UTF-8".to_string()))?;
        r.read_exact(&mut u32buf).map_err(io)?;
        let ndims = u32::from_le_bytes(u32buf) as usize;
        if ndims != 4 {
            return Err(Error::data(format!(
                "checkpoint parameter {name} has {ndims} dims, expected 4"
            )));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            r.read_exact(&mut u32buf).map_err(io)?;
            *d = u32::from_le_bytes(u32buf) as usize;
        }
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let mut data = vec![0f32; shape.count()];
        let mut f32buf = [0u8; 4];
        for v in &mut data {
            r.read_exact(&mut f32buf).map_err(io)?;
            *v = f32::from_le_bytes(f32buf);
        }
        blobs.push((name, Tensor::from_vec(shape, data)?));
    }
    Ok(blobs)
}

/// Loads a checkpoint into an existing store (names and shapes must match).
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<()> {
    store.load_named(load(path)?)
}
