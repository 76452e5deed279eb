//! Minimal NPY (NumPy array format v1.0) reader/writer.
//!
//! Training samples are stored on disk in this format because it is lossless,
//! self-describing, and readable by any array tooling. Only what the pipeline
//! needs is implemented: C-order arrays of `<f4` (little-endian f32) and
//! `|u1` (u8), any dimensionality.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8] = b"\x93NUMPY\x01\x00";

/// Array payload of a `.npy` file.
#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl NpyData {
    pub fn len(&self) -> usize {
        match self {
            NpyData::F32(v) => v.len(),
            NpyData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn header_bytes(descr: &str, shape: &[usize]) -> Vec<u8> {
    let shape_txt = match shape.len() {
        1 => format!("({},)", shape[0]),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut dict = format!(
        "{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_txt}, }}"
    );
    // Pad with spaces so that magic + length field + header is a multiple of 64.
    let unpadded = MAGIC.len() + 2 + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    dict.push_str(&" ".repeat(pad));
    dict.push('\n');

    let mut out = Vec::with_capacity(MAGIC.len() + 2 + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

pub fn write_f32(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    assert_eq!(shape.iter().product::<usize>(), data.len());
    let mut buf = header_bytes("<f4", shape);
    buf.reserve(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &buf)
}

pub fn write_u8(path: &Path, shape: &[usize], data: &[u8]) -> Result<()> {
    assert_eq!(shape.iter().product::<usize>(), data.len());
    let mut buf = header_bytes("|u1", shape);
    buf.extend_from_slice(data);
    write_atomic(path, &buf)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Read a `.npy` file written by this module (or by NumPy, if it sticks to
/// C-order `<f4`/`|u1` arrays).
pub fn read(path: &Path) -> Result<(Vec<usize>, NpyData)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Npy {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };

    if bytes.len() < MAGIC.len() + 2 || &bytes[..6] != &MAGIC[..6] {
        return Err(bad("missing NUMPY magic"));
    }
    if bytes[6] != 1 {
        return Err(bad("unsupported npy major version"));
    }
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let header_end = 10 + hlen;
    if bytes.len() < header_end {
        return Err(bad("truncated header"));
    }
    let header = std::str::from_utf8(&bytes[10..header_end])
        .map_err(|_| bad("header is not utf-8"))?;

    let descr = dict_value(header, "descr").ok_or_else(|| bad("missing descr"))?;
    let descr = descr.trim_matches(|c| c == '\'' || c == '"');
    let fortran = dict_value(header, "fortran_order").ok_or_else(|| bad("missing fortran_order"))?;
    if fortran.trim() != "False" {
        return Err(bad("fortran-order arrays are not supported"));
    }
    let shape_txt = dict_value(header, "shape").ok_or_else(|| bad("missing shape"))?;
    let shape: Vec<usize> = shape_txt
        .trim_matches(|c| c == '(' || c == ')')
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| bad("bad shape entry")))
        .collect::<Result<_>>()?;
    let count: usize = shape.iter().product();
    let body = &bytes[header_end..];

    let data = match descr {
        "<f4" => {
            if body.len() != count * 4 {
                return Err(bad("payload size does not match shape"));
            }
            NpyData::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            )
        }
        "|u1" => {
            if body.len() != count {
                return Err(bad("payload size does not match shape"));
            }
            NpyData::U8(body.to_vec())
        }
        other => return Err(bad(&format!("unsupported dtype {other:?}"))),
    };
    Ok((shape, data))
}

/// Extract the value of `key` from a python-literal dict, up to the matching
/// top-level comma. Good enough for the fixed headers this module writes.
fn dict_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let pat = format!("'{key}':");
    let start = header.find(&pat)? + pat.len();
    let rest = &header[start..];
    let mut depth = 0usize;
    for (i, ch) in rest.char_indices() {
        match ch {
            '(' | '[' => depth += 1,
            ')' | ']' => depth = depth.saturating_sub(1),
            ',' | '}' if depth == 0 => return Some(rest[..i].trim()),
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn f32_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.npy");
        let data = vec![0.0f32, -1.5, 3.25e-7, f32::MAX, 42.0, 0.1];
        write_f32(&path, &[2, 3], &data).unwrap();
        let (shape, got) = read(&path).unwrap();
        assert_eq!(shape, vec![2, 3]);
        assert_eq!(got, NpyData::F32(data));
    }

    #[test]
    fn u8_roundtrip_3d() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("b.npy");
        let data: Vec<u8> = (0..24).collect();
        write_u8(&path, &[2, 3, 4], &data).unwrap();
        let (shape, got) = read(&path).unwrap();
        assert_eq!(shape, vec![2, 3, 4]);
        assert_eq!(got, NpyData::U8(data));
    }

    #[test]
    fn header_is_canonical_npy() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.npy");
        write_u8(&path, &[1], &[7]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], b"\x93NUMPY\x01\x00");
        // Total header must be 64-byte aligned and newline-terminated.
        let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + hlen) % 64, 0);
        assert_eq!(bytes[10 + hlen - 1], b'\n');
        assert_eq!(bytes[10 + hlen], 7);
    }

    #[test]
    fn rejects_garbage() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.npy");
        std::fs::write(&path, b"not an npy file").unwrap();
        assert!(read(&path).is_err());
    }
}
