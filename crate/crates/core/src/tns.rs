//! FROSTT `.tns` text encoding.
//!
//! Data lines are `i_1 ... i_N value` with 1-based indices separated by ASCII
//! whitespace; lines starting with `#` are comments. Values are written in
//! the shortest decimal form that round-trips to the same `f32`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::coo::{CooTensor, MAX_EXTENT};
use crate::error::{Error, Result};

/// Parses FROSTT text. Extents are the per-mode maxima unless `dims` is
/// given, in which case every index must fit inside it.
pub fn parse_tns(text: &str, dims: Option<&[usize]>) -> Result<CooTensor> {
    let mut order: Option<usize> = dims.map(|d| d.len());
    let mut indices: Vec<u32> = Vec::new();
    let mut values: Vec<f32> = Vec::new();
    let mut maxima: Vec<usize> = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_ascii_whitespace().collect();
        if fields.len() < 2 {
            return Err(Error::Parse { line: line_no, msg: format!("expected indices and a value, got {trimmed:?}") });
        }
        let arity = fields.len() - 1;
        match order {
            None => order = Some(arity),
            Some(o) if o != arity => {
                return Err(Error::Parse { line: line_no, msg: format!("expected {o} indices, found {arity}") });
            }
            _ => {}
        }
        if maxima.is_empty() {
            maxima = alloc::vec![0; arity];
        }
        for (mode, field) in fields[..arity].iter().enumerate() {
            let one_based: u64 = field
                .parse()
                .map_err(|_| Error::Parse { line: line_no, msg: format!("invalid index {field:?}") })?;
            if one_based < 1 {
                return Err(Error::Parse { line: line_no, msg: "indices are 1-based".into() });
            }
            if one_based > MAX_EXTENT {
                return Err(Error::Parse { line: line_no, msg: format!("index {one_based} exceeds 32-bit range") });
            }
            let zero_based = (one_based - 1) as usize;
            if let Some(d) = dims {
                if zero_based >= d[mode] {
                    return Err(Error::IndexOutOfRange { mode, coord: zero_based as u64, extent: d[mode] });
                }
            }
            maxima[mode] = maxima[mode].max(zero_based + 1);
            indices.push(zero_based as u32);
        }
        let value: f32 = fields[arity]
            .parse()
            .map_err(|_| Error::Parse { line: line_no, msg: format!("invalid value {:?}", fields[arity]) })?;
        values.push(value);
    }

    if values.is_empty() {
        return Err(Error::Empty);
    }
    let dims = dims.map_or(maxima, |d| d.to_vec());
    CooTensor::new(dims, indices, values)
}

/// Writes the tensor as FROSTT text in its current row order.
pub fn format_tns(t: &CooTensor) -> String {
    let mut out = String::with_capacity(t.nnz() * (t.order() * 4 + 12));
    for (c, v) in t.iter() {
        for &i in c {
            let _ = write!(out, "{} ", i as u64 + 1);
        }
        let _ = writeln!(out, "{v}");
    }
    out
}
