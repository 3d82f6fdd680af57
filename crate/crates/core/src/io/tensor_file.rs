//! Self-describing little-endian tensor files.
//!
//! ```text
//! offset  size       field
//! 0       4          magic "CTNS"
//! 4       2          version (u16) = 1
//! 6       1          dtype: 0 = f32, 1 = f64
//! 7       1          ndim (1..=3)
//! 8       4 * ndim   dims (u32 each)
//! ...     elem * N   row-major payload
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::error::Result;
use crate::linalg::Tensor;

pub const MAGIC: &[u8; 4] = b"CTNS";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected \"CTNS\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported tensor file version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),
    #[error("unsupported number of dims {0} (expected 1 to 3)")]
    BadRank(u8),
    #[error("truncated {section}: expected {expected} bytes, found {actual}")]
    Truncated {
        section: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("tensor contains a non-finite value")]
    NonFinite,
}

pub fn encode_tensor(t: &Tensor, dtype: DType) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.ndim() + dtype.size() * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype as u8);
    out.push(t.ndim() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match dtype {
        DType::F64 => t
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        DType::F32 => t
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
    out
}

fn take<'a>(
    bytes: &'a [u8],
    at: usize,
    len: usize,
    section: &'static str,
) -> Result<&'a [u8], FormatError> {
    let actual = bytes.len().saturating_sub(at);
    if actual < len {
        return Err(FormatError::Truncated {
            section,
            expected: len,
            actual,
        });
    }
    Ok(&bytes[at..at + len])
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, FormatError> {
    let magic = take(bytes, 0, 4, "magic")?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            found: magic.to_vec(),
        });
    }
    let version = u16::from_le_bytes(take(bytes, 4, 2, "header")?.try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let header = take(bytes, 6, 2, "header")?;
    let dtype = match header[0] {
        0 => DType::F32,
        1 => DType::F64,
        other => return Err(FormatError::UnsupportedDtype(other)),
    };
    let ndim = header[1];
    if !(1..=3).contains(&ndim) {
        return Err(FormatError::BadRank(ndim));
    }
    let dim_bytes = take(bytes, 8, 4 * ndim as usize, "dims")?;
    let dims: Vec<usize> = dim_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let start = 8 + dim_bytes.len();
    let payload = take(bytes, start, count * dtype.size(), "payload")?;
    let trailing = bytes.len() - start - payload.len();
    if trailing != 0 {
        return Err(FormatError::TrailingBytes(trailing));
    }
    let data: Vec<f64> = match dtype {
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect(),
    };
    Tensor::new(dims, data).map_err(|_| FormatError::NonFinite)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    Ok(decode_tensor(&bytes)?)
}

/// Writes `t` as f64 via a sibling temp file and a rename.
pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_atomic(path.as_ref(), &encode_tensor(t, DType::F64))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    if let Err(e) = fs::write(&tmp, bytes).and_then(|()| fs::rename(&tmp, path)) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}
