//! Binary feature-matrix files.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `FMAT`                   |
//! | 4      | 4    | version, `u32` = 1             |
//! | 8      | 8    | rows, `u64`                    |
//! | 16     | 8    | cols, `u64`                    |
//! | 24     | 8·rc | entries, `f64`, row-major      |

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const MAGIC: &[u8; 4] = b"FMAT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

pub fn encode(m: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

fn u64_at(bytes: &[u8], offset: usize) -> u64 {
    u64::from_le_bytes(bytes[offset..offset + 8].try_into().expect("8-byte slice"))
}

/// Parses a complete file image. Errors name the byte offset where the file
/// stops matching the layout.
pub fn decode(bytes: &[u8]) -> Result<DenseMatrix> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let found = &bytes[..bytes.len().min(4)];
        return Err(format_err(0, format!("bad magic: expected \"FMAT\", found {found:02x?}")));
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            bytes.len(),
            format!("truncated header: expected {HEADER_LEN} bytes, found {}", bytes.len()),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4-byte slice"));
    if version != VERSION {
        return Err(format_err(4, format!("unsupported version {version} (expected {VERSION})")));
    }
    let rows = u64_at(bytes, 8);
    let cols = u64_at(bytes, 16);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| format_err(8, format!("dimensions {rows}x{cols} overflow")))?;
    if bytes.len() as u64 != expected {
        let offset = if (bytes.len() as u64) < expected {
            bytes.len()
        } else {
            expected as usize
        };
        return Err(format_err(
            offset,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let data: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(format_err(HEADER_LEN + 8 * i, format!("non-finite entry {}", data[i])));
    }
    DenseMatrix::new(rows, cols, data)
}

pub fn write<W: Write>(mut w: W, m: &DenseMatrix) -> Result<()> {
    w.write_all(&encode(m))?;
    Ok(())
}

pub fn read<R: Read>(mut r: R) -> Result<DenseMatrix> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn save(path: &Path, m: &DenseMatrix) -> Result<()> {
    fs::write(path, encode(m))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<DenseMatrix> {
    decode(&fs::read(path)?)
}
