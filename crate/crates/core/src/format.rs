//! The `MOPD` dense matrix container shared by activation stores and encoded
//! feature files.
//!
//! Layout (all little-endian):
//!
//! | bytes | field                       |
//! |-------|-----------------------------|
//! | 4     | magic `MOPD`                |
//! | 4     | `u32` version (= 1)         |
//! | 4     | `u32` row count             |
//! | 4     | `u32` row dimension         |
//! | 4·n·d | `f32` samples, row-major    |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{MopError, Result};

pub const MOPD_MAGIC: &[u8; 4] = b"MOPD";
pub const MOPD_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(MopError::invalid(format!(
                "matrix buffer has {} values, expected {rows}x{dim}",
                data.len()
            )));
        }
        Ok(FeatureMatrix { rows, dim, data })
    }

    /// Builds a matrix from rows of equal length, narrowing to `f32`.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(MopError::invalid(format!(
                    "row {i} has length {}, expected {dim}",
                    r.len()
                )));
            }
            data.extend(r.iter().map(|&v| v as f32));
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    pub fn to_rows_f64(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row_f64(i)).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let rows = u32::try_from(self.rows)
            .map_err(|_| MopError::invalid("too many rows for MOPD"))?;
        let dim = u32::try_from(self.dim)
            .map_err(|_| MopError::invalid("row dimension too large for MOPD"))?;
        w.write_all(MOPD_MAGIC)?;
        w.write_all(&MOPD_VERSION.to_le_bytes())?;
        w.write_all(&rows.to_le_bytes())?;
        w.write_all(&dim.to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)
            .map_err(|_| MopError::format("MOPD header truncated"))?;
        if &header[..4] != MOPD_MAGIC {
            return Err(MopError::format("missing MOPD magic"));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != MOPD_VERSION {
            return Err(MopError::format(format!(
                "unsupported MOPD version {version}"
            )));
        }
        let rows = word(8) as usize;
        let dim = word(12) as usize;
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)?;
        let expected = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| MopError::format("MOPD size overflow"))?;
        if raw.len() != expected {
            return Err(MopError::format(format!(
                "MOPD payload has {} bytes, expected {expected}",
                raw.len()
            )));
        }
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(rows, dim, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| {
            MopError::NotFound(format!("cannot open {}: {e}", path.display()))
        })?;
        Self::read_from(BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = FeatureMatrix::new(1, 2, vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"MOPD");
        assert_eq!(&buf[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&buf[16..20], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 24);
    }

    #[test]
    fn rejects_corruption() {
        let m = FeatureMatrix::new(2, 2, vec![0.0; 4]).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert!(FeatureMatrix::read_from(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(FeatureMatrix::read_from(&bad[..]).is_err());
        let mut bad = buf;
        bad[4] = 2;
        assert!(FeatureMatrix::read_from(&bad[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_bit_exact(rows in 0usize..6, dim in 0usize..7, bits in proptest::collection::vec(any::<u32>(), 42)) {
            let data: Vec<f32> = bits.iter().take(rows * dim).map(|&b| f32::from_bits(b)).collect();
            let m = FeatureMatrix::new(rows, dim, data).unwrap();
            let mut buf = Vec::new();
            m.write_to(&mut buf).unwrap();
            let back = FeatureMatrix::read_from(&buf[..]).unwrap();
            prop_assert_eq!(back.rows(), rows);
            let a: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = m.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
