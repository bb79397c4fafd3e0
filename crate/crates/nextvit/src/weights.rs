//! NVTW weight container: magic "NVTW", version byte, little-endian entry
//! table. Entries are written in key order, so save -> load -> save is
//! byte-identical. Dtype 0 (32-bit LE float) is the only code defined.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::{ParamArray, ParamSet};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"NVTW";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;

/// Serialize a parameter set into the container byte format.
pub fn write_weights(params: &ParamSet<f32>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, arr) in params.iter() {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(DTYPE_F32);
        buf.push(arr.dims.len() as u8);
        for &d in &arr.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &arr.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::TruncatedFile);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let s = self.take(2)?;
        Ok(u16::from_le_bytes([s[0], s[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let s = self.take(4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    }
}

/// Parse the container byte format. Validates magic, version, dtype codes,
/// name uniqueness and that every declared size is fully present.
pub fn read_weights(bytes: &[u8]) -> Result<ParamSet<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    let count = r.u32()?;
    let mut set = ParamSet::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::ParseError("entry name is not UTF-8".into()))?
            .to_string();
        if set.contains(&name) {
            return Err(Error::DuplicateName(name));
        }
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::DtypeUnsupported(dtype));
        }
        let ndim = r.u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32()? as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = r.take(numel * 4)?;
        let data: Vec<f32> =
            raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        set.insert(name, ParamArray::new(dims, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::ParseError(format!(
            "{} trailing bytes after the last entry",
            bytes.len() - r.pos
        )));
    }
    Ok(set)
}

pub fn save_weights(params: &ParamSet<f32>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_weights(params))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ParamSet<f32>> {
    let bytes = fs::read(path)?;
    read_weights(&bytes)
}

/// Input tensors for `infer` reuse the container: one rank-4 entry named
/// "input".
pub fn save_input_tensor(x: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let s = x.shape();
    let mut set = ParamSet::new();
    let arr = ParamArray::new(vec![s.n, s.c, s.h, s.w], x.data().to_vec())?;
    set.insert("input", arr);
    save_weights(&set, path)
}

pub fn load_input_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let set = load_weights(path)?;
    let arr = set.get("input")?;
    let shape = match arr.dims.as_slice() {
        [n, c, h, w] => Shape { n: *n, c: *c, h: *h, w: *w },
        _ => return Err(Error::ParamDims("input".into(), arr.dims.clone())),
    };
    Tensor::from_vec(shape, arr.data.clone())
}
