//! Tensor files.
//!
//! Two encodings are supported: FROSTT `.tns` text and a little-endian
//! binary cache (`.ftb`):
//!
//! ```text
//! "FTNS"  u32 version  u32 order  u64 nnz
//! u32 dims[order]  u32 indices[nnz * order]  f32 values[nnz]
//! ```

use std::fs;
use std::path::Path;

use ftensor_core::coo::MAX_EXTENT;
use ftensor_core::{format_tns, parse_tns, CooTensor};

use crate::error::{io_err, Error, Result};

const MAGIC: &[u8; 4] = b"FTNS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Text,
    Binary,
}

impl Encoding {
    /// `.ftb` is binary; everything else is treated as text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ftb") => Encoding::Binary,
            _ => Encoding::Text,
        }
    }
}

pub fn load_tns(path: impl AsRef<Path>, dims: Option<&[usize]>) -> Result<CooTensor> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_tns(&text, dims).map_err(|e| match e {
        ftensor_core::Error::Parse { line, msg } => Error::Format { path: path.into(), msg: format!("line {line}: {msg}") },
        other => other.into(),
    })
}

pub fn save_tns(t: &CooTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_tns(t)).map_err(io_err(path))
}

pub fn encode_binary(t: &CooTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * t.order() + 4 * t.indices().len() + 4 * t.nnz());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.order() as u32).to_le_bytes());
    out.extend_from_slice(&(t.nnz() as u64).to_le_bytes());
    for &d in t.dims() {
        // An extent of exactly 2^32 is stored as 0.
        out.extend_from_slice(&(d as u64 as u32).to_le_bytes());
    }
    for &i in t.indices() {
        out.extend_from_slice(&i.to_le_bytes());
    }
    for &v in t.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> std::result::Result<CooTensor, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let order = r.u32()? as usize;
    let nnz = usize::try_from(r.u64()?).map_err(|_| "nnz does not fit in memory".to_string())?;
    let ncoords = nnz.checked_mul(order).ok_or("size overflow")?;
    let expected = ncoords
        .checked_add(nnz)
        .and_then(|n| n.checked_add(order))
        .and_then(|n| n.checked_mul(4))
        .ok_or("size overflow")?;
    if r.remaining() != expected {
        return Err(format!("expected {expected} payload bytes, found {}", r.remaining()));
    }
    let dims = (0..order)
        .map(|_| match r.u32()? {
            0 => usize::try_from(MAX_EXTENT).map_err(|_| "extent 2^32 does not fit in usize".to_string()),
            d => Ok(d as usize),
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let indices = (0..ncoords).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
    let values = (0..nnz).map(|_| r.u32().map(f32::from_bits)).collect::<std::result::Result<Vec<_>, _>>()?;
    CooTensor::new(dims, indices, values).map_err(|e| e.to_string())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.remaining() < n {
            return Err("truncated file".into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_binary(path: impl AsRef<Path>) -> Result<CooTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_binary(&bytes).map_err(|msg| Error::Format { path: path.into(), msg })
}

pub fn save_binary(t: &CooTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_binary(t)).map_err(io_err(path))
}

/// Loads either encoding, chosen by extension.
pub fn load_any(path: impl AsRef<Path>) -> Result<CooTensor> {
    let path = path.as_ref();
    match Encoding::from_path(path) {
        Encoding::Binary => load_binary(path),
        Encoding::Text => load_tns(path, None),
    }
}

pub fn save_any(t: &CooTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match Encoding::from_path(path) {
        Encoding::Binary => save_binary(t, path),
        Encoding::Text => save_tns(t, path),
    }
}
