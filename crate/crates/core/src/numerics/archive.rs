//! Binary parameter archive.
//!
//! Layout (all integers little-endian `u32`, values little-endian `f32`):
//!
//! ```text
//! magic "MRTP" | version | header_len | header (UTF-8 JSON)
//! count | count × { name_len | name | ndim | dims... | values... }
//! ```
//!
//! Values are stored at 32-bit precision; loading then saving reproduces the
//! file byte for byte.

use std::fs;
use std::path::Path;

use super::param::ParamStore;
use super::tensor::Tensor;
use crate::error::{MrtError, Result};

const MAGIC: &[u8; 4] = b"MRTP";
const VERSION: u32 = 1;

/// Cursor over a byte buffer that reports parse errors with their offset.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> MrtError {
        MrtError::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    pub(crate) fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.bytes(4, what)?;
        Ok(f32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Decoded archive contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub header: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Archive {
    pub fn new(header: serde_json::Value) -> Self {
        Archive {
            header,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.push((name.into(), value));
    }

    /// Adds every parameter of `store` under `prefix`.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore) {
        for p in store.iter() {
            self.push(format!("{prefix}{}", p.name), p.value.clone());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Loads values for every parameter of `store` from entries under `prefix`.
    pub fn load_store(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        for p in store.iter_mut() {
            let name = format!("{prefix}{}", p.name);
            let t = self
                .get(&name)
                .ok_or_else(|| MrtError::invalid(format!("archive lacks parameter {name}")))?;
            p.value.same_shape("load parameter", t)?;
            p.value = t.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        let header = serde_json::to_vec(&self.header)?;
        put_u32(&mut out, header.len() as u32);
        out.extend_from_slice(&header);
        put_u32(&mut out, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.shape().len() as u32);
            for &d in t.shape() {
                put_u32(&mut out, d as u32);
            }
            for &v in t.data() {
                put_f32(&mut out, v as f32);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        if r.bytes(4, "magic")? != MAGIC {
            return Err(MrtError::Parse {
                offset: 0,
                message: "not a parameter archive (bad magic)".into(),
            });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.error(format!("unsupported archive version {version}")));
        }
        let header_len = r.u32("header length")? as usize;
        let header_at = r.offset();
        let header = serde_json::from_slice(r.bytes(header_len, "header")?).map_err(|e| {
            MrtError::Parse {
                offset: header_at,
                message: format!("bad header JSON: {e}"),
            }
        })?;
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.bytes(name_len, "name")?)
                .map_err(|_| r.error("tensor name is not UTF-8"))?
                .to_string();
            let ndim = r.u32("rank")? as usize;
            let shape = (0..ndim)
                .map(|_| r.u32("dimension").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let at = r.offset();
            let data = (0..n)
                .map(|_| r.f32("values").map(f64::from))
                .collect::<Result<Vec<_>>>()?;
            let t = Tensor::new(shape, data).map_err(|e| MrtError::Parse {
                offset: at,
                message: format!("tensor {name}: {e}"),
            })?;
            tensors.push((name, t));
        }
        if r.remaining() != 0 {
            return Err(r.error("trailing bytes after last tensor"));
        }
        Ok(Archive { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
