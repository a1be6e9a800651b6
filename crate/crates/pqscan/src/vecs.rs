//! fvecs / bvecs / ivecs readers and writers.
//!
//! Every record is a little-endian `i32` dimension followed by that many
//! components (`f32`, `u8` or `i32`). All records of a file share the same
//! dimension. bvecs components are widened to `f32` without scaling.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use pqscan_core::{DenseMatrix, IntMatrix};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VecsKind {
    Fvecs,
    Bvecs,
    Ivecs,
}

impl VecsKind {
    fn component_bytes(self) -> usize {
        match self {
            VecsKind::Bvecs => 1,
            _ => 4,
        }
    }

    /// Kind implied by a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "fvecs" => Some(VecsKind::Fvecs),
            "bvecs" => Some(VecsKind::Bvecs),
            "ivecs" => Some(VecsKind::Ivecs),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Vecs {
    Float(DenseMatrix),
    Int(IntMatrix),
}

/// Splits `bytes` into records, returning `(n, d, offsets of the payloads)`.
/// Stops after `limit` records when given.
fn records(bytes: &[u8], kind: VecsKind, limit: Option<usize>) -> Result<(usize, usize, Vec<usize>)> {
    let mut pos = 0usize;
    let mut d = 0usize;
    let mut starts = Vec::new();
    while pos < bytes.len() && limit.is_none_or(|l| starts.len() < l) {
        if bytes.len() - pos < 4 {
            return Err(Error::format(pos as u64, "truncated record header"));
        }
        let dim = i32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
        if dim <= 0 {
            return Err(Error::format(pos as u64, format!("non-positive dimension {dim}")));
        }
        let dim = dim as usize;
        if starts.is_empty() {
            d = dim;
        } else if dim != d {
            return Err(Error::format(pos as u64, format!("dimension {dim} differs from {d}")));
        }
        let payload = dim * kind.component_bytes();
        if bytes.len() - pos - 4 < payload {
            return Err(Error::format((pos + 4) as u64, "truncated record payload"));
        }
        starts.push(pos + 4);
        pos += 4 + payload;
    }
    Ok((starts.len(), d, starts))
}

/// Parses an in-memory file. An empty input gives `n = 0, d = 0`.
pub fn parse_vecs(bytes: &[u8], kind: VecsKind, limit: Option<usize>) -> Result<Vecs> {
    let (n, d, starts) = records(bytes, kind, limit)?;
    let le4 = |p: usize| -> [u8; 4] { bytes[p..p + 4].try_into().unwrap() };
    Ok(match kind {
        VecsKind::Ivecs => {
            let mut data = Vec::with_capacity(n * d);
            for &s in &starts {
                data.extend((0..d).map(|c| i32::from_le_bytes(le4(s + 4 * c))));
            }
            Vecs::Int(IntMatrix::new(n, d, data)?)
        }
        VecsKind::Fvecs | VecsKind::Bvecs => {
            let mut data = Vec::with_capacity(n * d);
            for &s in &starts {
                if kind == VecsKind::Bvecs {
                    data.extend(bytes[s..s + d].iter().map(|&v| v as f32));
                } else {
                    data.extend((0..d).map(|c| f32::from_le_bytes(le4(s + 4 * c))));
                }
            }
            if n == 0 {
                DenseMatrix::empty(0).into()
            } else {
                Vecs::Float(DenseMatrix::new(n, d, data)?)
            }
        }
    })
}

impl From<DenseMatrix> for Vecs {
    fn from(m: DenseMatrix) -> Self {
        Vecs::Float(m)
    }
}

pub fn read_vecs(path: impl AsRef<Path>, kind: VecsKind) -> Result<Vecs> {
    read_vecs_limit(path, kind, None)
}

/// Reads at most `limit` records.
pub fn read_vecs_limit(path: impl AsRef<Path>, kind: VecsKind, limit: Option<usize>) -> Result<Vecs> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_vecs(&bytes, kind, limit)
}

/// Reads an fvecs or bvecs file (chosen by extension, fvecs otherwise).
pub fn read_float_vecs(path: impl AsRef<Path>, limit: Option<usize>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let kind = match VecsKind::from_path(path) {
        Some(VecsKind::Bvecs) => VecsKind::Bvecs,
        Some(VecsKind::Ivecs) => return Err(Error::usage(format!("{} holds integers, not vectors", path.display()))),
        _ => VecsKind::Fvecs,
    };
    match read_vecs_limit(path, kind, limit)? {
        Vecs::Float(m) => Ok(m),
        Vecs::Int(_) => unreachable!(),
    }
}

pub fn read_ivecs(path: impl AsRef<Path>) -> Result<IntMatrix> {
    match read_vecs(path, VecsKind::Ivecs)? {
        Vecs::Int(m) => Ok(m),
        Vecs::Float(_) => unreachable!(),
    }
}

pub fn encode_fvecs(m: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.n() * (4 + 4 * m.d()));
    for row in m.rows() {
        out.extend_from_slice(&(m.d() as i32).to_le_bytes());
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// bvecs output; components must be integral values in `0..=255`.
pub fn encode_bvecs(m: &DenseMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(m.n() * (4 + m.d()));
    for row in m.rows() {
        out.extend_from_slice(&(m.d() as i32).to_le_bytes());
        for &v in row {
            if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                return Err(Error::usage(format!("value {v} is not representable in bvecs")));
            }
            out.push(v as u8);
        }
    }
    Ok(out)
}

pub fn encode_ivecs(m: &IntMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.n() * (4 + 4 * m.k()));
    for i in 0..m.n() {
        out.extend_from_slice(&(m.k() as i32).to_le_bytes());
        for v in m.row(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn write_bytes(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

pub fn write_fvecs(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    write_bytes(path, &encode_fvecs(m))
}

pub fn write_bvecs(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    write_bytes(path, &encode_bvecs(m)?)
}

pub fn write_ivecs(path: impl AsRef<Path>, m: &IntMatrix) -> Result<()> {
    write_bytes(path, &encode_ivecs(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_hand_written_record() {
        let bytes = [2, 0, 0, 0, 0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x40];
        let Vecs::Float(m) = parse_vecs(&bytes, VecsKind::Fvecs, None).unwrap() else { panic!() };
        assert_eq!((m.n(), m.d()), (1, 2));
        assert_eq!(m.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn empty_file_is_empty_matrix() {
        let Vecs::Float(m) = parse_vecs(&[], VecsKind::Fvecs, None).unwrap() else { panic!() };
        assert_eq!((m.n(), m.d()), (0, 0));
    }

    #[test]
    fn bvecs_widen_without_scaling() {
        let bytes = [3, 0, 0, 0, 0, 128, 255];
        let Vecs::Float(m) = parse_vecs(&bytes, VecsKind::Bvecs, None).unwrap() else { panic!() };
        assert_eq!(m.row(0), &[0.0, 128.0, 255.0]);
    }

    #[test]
    fn errors_carry_offsets() {
        let mut bytes = vec![1, 0, 0, 0, 7, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0];
        match parse_vecs(&bytes, VecsKind::Ivecs, None) {
            Err(Error::Format { offset: 8, .. }) => {}
            other => panic!("{other:?}"),
        }
        bytes.truncate(6);
        match parse_vecs(&bytes, VecsKind::Ivecs, None) {
            Err(Error::Format { offset: 4, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_vecs(&[0, 0, 0, 0], VecsKind::Fvecs, None) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_vecs(&[1, 0], VecsKind::Fvecs, None) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn limit_stops_early() {
        let m = DenseMatrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let Vecs::Float(head) = parse_vecs(&encode_fvecs(&m), VecsKind::Fvecs, Some(2)).unwrap() else { panic!() };
        assert_eq!(head, m.first_rows(2));
    }
}
