//! Binary matrix files.
//!
//! Layout: magic `LPRR`, format version (`u32` LE), dtype tag (one byte),
//! rows and cols (`u64` LE), then the row-major payload in little-endian.
//! Tag 0 is binary32 and tag 1 is binary64. Several records may follow each
//! other in one file; checkpoints use that to store one record per tensor.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use pillar_rerank_core::Matrix;

pub const MAGIC: [u8; 4] = *b"LPRR";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 8 + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic bytes {0:02x?}, expected \"LPRR\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {found} (this build reads version {VERSION})")]
    VersionMismatch { found: u32 },
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("truncated {what}: expected {expected} bytes, found {found}")]
    Truncated {
        what: &'static str,
        expected: u64,
        found: u64,
    },
    #[error("dimensions {rows} x {cols} overflow the addressable size")]
    DimensionOverflow { rows: u64, cols: u64 },
    #[error("{0} trailing bytes after the last matrix")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Serializes `m` into `out`.
pub fn encode(m: &Matrix, dtype: Dtype, out: &mut Vec<u8>) {
    out.reserve(HEADER_LEN + m.as_slice().len() * dtype.width());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype.tag());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    match dtype {
        Dtype::F32 => {
            for &v in m.as_slice() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Dtype::F64 => {
            for &v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
    if bytes.len() < n {
        return Err(FormatError::Truncated {
            what,
            expected: n as u64,
            found: bytes.len() as u64,
        });
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

/// Parses one record from the front of `bytes` and advances past it.
pub fn decode_one(bytes: &mut &[u8]) -> Result<(Matrix, Dtype), FormatError> {
    if bytes.len() < HEADER_LEN {
        // Report a wrong magic before a short header when both apply.
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(FormatError::Truncated {
            what: "header",
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = take(bytes, 4, "header")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(take(bytes, 4, "header")?.try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::VersionMismatch { found: version });
    }
    let tag = take(bytes, 1, "header")?[0];
    let dtype = Dtype::from_tag(tag).ok_or(FormatError::UnknownDtype(tag))?;
    let rows = u64::from_le_bytes(take(bytes, 8, "header")?.try_into().unwrap());
    let cols = u64::from_le_bytes(take(bytes, 8, "header")?.try_into().unwrap());
    let overflow = FormatError::DimensionOverflow { rows, cols };
    let count = rows.checked_mul(cols).ok_or(overflow)?;
    let payload_len = count
        .checked_mul(dtype.width() as u64)
        .filter(|&n| n <= isize::MAX as u64)
        .ok_or(FormatError::DimensionOverflow { rows, cols })?;
    let payload = take(bytes, payload_len as usize, "payload")?;
    let data: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    let m = Matrix::from_vec(rows as usize, cols as usize, data)
        .ok_or(FormatError::DimensionOverflow { rows, cols })?;
    Ok((m, dtype))
}

/// Parses every record in `bytes`.
pub fn decode_all(mut bytes: &[u8]) -> Result<Vec<(Matrix, Dtype)>, FormatError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        out.push(decode_one(&mut bytes)?);
    }
    Ok(out)
}

/// Parses a file holding exactly one record.
pub fn decode(bytes: &[u8]) -> Result<(Matrix, Dtype), FormatError> {
    let mut rest = bytes;
    let m = decode_one(&mut rest)?;
    if !rest.is_empty() {
        return Err(FormatError::TrailingBytes(rest.len()));
    }
    Ok(m)
}

pub fn write_matrix(w: &mut impl Write, m: &Matrix, dtype: Dtype) -> io::Result<()> {
    let mut buf = Vec::new();
    encode(m, dtype, &mut buf);
    w.write_all(&buf)
}

pub fn read_matrix(r: &mut impl Read) -> Result<(Matrix, Dtype), FormatError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf)
}

pub fn save(path: &Path, m: &Matrix, dtype: Dtype) -> io::Result<()> {
    let mut buf = Vec::new();
    encode(m, dtype, &mut buf);
    fs::write(path, buf)
}

pub fn load(path: &Path) -> Result<Matrix, FormatError> {
    Ok(decode(&fs::read(path)?)?.0)
}
