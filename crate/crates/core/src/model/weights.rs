//! `ECOW` parameter blobs.
//!
//! Layout (little-endian): magic `ECOW`, `u32` version, `u64` array count,
//! then per array `u16` name length, name bytes, `u8` rank, `u32` per
//! dimension, and the values as `f64`.

use std::path::Path;

use super::Model;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Layer;

pub const MAGIC: &[u8; 4] = b"ECOW";
pub const VERSION: u32 = 1;

pub fn encode<S: Scalar>(model: &Model<S>) -> Vec<u8> {
    let mut arrays = Vec::new();
    model.visit_params(&mut |p| arrays.push((p.name.clone(), p.shape.clone(), p.value.clone())));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(arrays.len() as u64).to_le_bytes());
    for (name, shape, values) in arrays {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(shape.len() as u8);
        for d in &shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// One decoded array.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn decode(bytes: &[u8]) -> Result<Vec<StoredArray>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected ECOW"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = r.u64("array count")?;
    let mut arrays = Vec::new();
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::format(at as u64, "name is not UTF-8"))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8, "values")?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push(StoredArray {
            name,
            shape,
            values,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(
            r.pos as u64,
            "trailing bytes after last array",
        ));
    }
    Ok(arrays)
}

/// Loads decoded arrays into `model`; names and shapes must match in order.
pub fn apply<S: Scalar>(model: &mut Model<S>, arrays: &[StoredArray]) -> Result<()> {
    let inventory = model.param_inventory();
    if inventory.len() != arrays.len() {
        return Err(Error::invalid(
            "weights",
            format!(
                "model has {} arrays, file has {}",
                inventory.len(),
                arrays.len()
            ),
        ));
    }
    for ((name, shape, _), a) in inventory.iter().zip(arrays) {
        if *name != a.name || *shape != a.shape {
            return Err(Error::invalid(
                "weights",
                format!(
                    "array {} {:?} does not match model {} {:?}",
                    a.name, a.shape, name, shape
                ),
            ));
        }
    }
    let mut it = arrays.iter();
    model.visit_params_mut(&mut |p| {
        let a = it.next().expect("checked above");
        for (v, &x) in p.value.iter_mut().zip(&a.values) {
            *v = S::lit(x);
        }
    });
    Ok(())
}

pub fn save<S: Scalar>(model: &Model<S>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_into<S: Scalar>(model: &mut Model<S>, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    apply(model, &decode(&bytes)?)
}
