//! Binary matrix files for spectrograms and embeddings.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                                    |
//! |--------|------|------------------------------------------|
//! | 0      | 4    | magic `OCMX`                             |
//! | 4      | 2    | version, currently 1                     |
//! | 6      | 2    | flags; bit 0 set = DP-protected payload  |
//! | 8      | 8    | rows (u64)                               |
//! | 16     | 8    | cols (u64)                               |
//! | 24     | 16   | only when bit 0 set: C (f64), epsilon (f64) |
//! | ...    | 8·rows·cols | f64 values, row-major             |

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"OCMX";
pub const MATRIX_VERSION: u16 = 1;
const FLAG_DP: u16 = 1;

/// Privacy parameters a DP-protected matrix was released under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpTag {
    pub clip_bound: f64,
    pub epsilon: f64,
}

pub fn write_matrix<W: Write>(mut w: W, m: &Array2<f64>, dp: Option<DpTag>) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&MATRIX_VERSION.to_le_bytes())?;
    w.write_all(&(if dp.is_some() { FLAG_DP } else { 0 }).to_le_bytes())?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    if let Some(tag) = dp {
        w.write_all(&tag.clip_bound.to_le_bytes())?;
        w.write_all(&tag.epsilon.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(m.len() * 8);
    for v in m.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

/// Reads one whole matrix file; trailing bytes are an error.
pub fn read_matrix<R: Read>(mut r: R) -> Result<(Array2<f64>, Option<DpTag>)> {
    let out = read_matrix_section(&mut r)?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Malformed(
            "trailing bytes after matrix payload".into(),
        ));
    }
    Ok(out)
}

/// Reads one matrix from a stream that may continue with other data.
pub fn read_matrix_section<R: Read>(mut r: R) -> Result<(Array2<f64>, Option<DpTag>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(Error::Malformed("not a matrix file".into()));
    }
    let version = read_u16(&mut r)?;
    if version != MATRIX_VERSION {
        return Err(Error::Malformed(format!(
            "unsupported matrix version {version}"
        )));
    }
    let flags = read_u16(&mut r)?;
    let rows = read_u64(&mut r)? as usize;
    let cols = read_u64(&mut r)? as usize;
    let dp = if flags & FLAG_DP != 0 {
        Some(DpTag {
            clip_bound: read_f64(&mut r)?,
            epsilon: read_f64(&mut r)?,
        })
    } else {
        None
    };
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Malformed("matrix dimensions overflow".into()))?;
    let mut bytes = Vec::new();
    r.take(count as u64 * 8).read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(Error::Malformed(format!(
            "expected {} payload bytes, found {}",
            count * 8,
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let m = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| Error::Malformed(e.to_string()))?;
    Ok((m, dp))
}

pub fn save_matrix(path: impl AsRef<Path>, m: &Array2<f64>, dp: Option<DpTag>) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_matrix(f, m, dp)
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<(Array2<f64>, Option<DpTag>)> {
    read_matrix(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Plain CSV, one matrix row per line, no header.
pub fn write_matrix_csv<W: Write>(w: W, m: &Array2<f64>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in m.rows() {
        out.write_record(row.iter().map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn roundtrip(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>(), dp in any::<bool>()) {
            let m = Array2::from_shape_fn((rows, cols), |(i, j)| (seed as f64).sin() * (i * 7 + j) as f64);
            let tag = dp.then_some(DpTag { clip_bound: 1.5, epsilon: 0.25 });
            let mut buf = Vec::new();
            write_matrix(&mut buf, &m, tag).unwrap();
            let (back, back_tag) = read_matrix(&buf[..]).unwrap();
            prop_assert_eq!(back, m);
            prop_assert_eq!(back_tag, tag);
        }
    }

    #[test]
    fn header_layout_is_fixed() {
        let m = Array2::from_shape_vec((1, 2), vec![1.0, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m, None).unwrap();
        assert_eq!(&buf[..4], b"OCMX");
        assert_eq!(&buf[4..8], &[1, 0, 0, 0]);
        assert_eq!(&buf[8..16], &1u64.to_le_bytes());
        assert_eq!(&buf[16..24], &2u64.to_le_bytes());
        assert_eq!(&buf[24..32], &1.0f64.to_le_bytes());
        assert_eq!(buf.len(), 40);
    }

    #[test]
    fn truncated_payload_rejected() {
        let m = Array2::<f64>::zeros((2, 2));
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m, None).unwrap();
        buf.pop();
        assert!(matches!(read_matrix(&buf[..]), Err(Error::Malformed(_))));
        assert!(matches!(
            read_matrix(&b"NOPE"[..]),
            Err(Error::Malformed(_))
        ));
    }
}
