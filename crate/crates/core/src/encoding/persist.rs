//! `MOPM` binary model container.
//!
//! ```text
//! magic   "MOPM"
//! u32     version (= 1)
//! u32     section count
//! repeat:
//!   u32   tag        1 = PCA, 2 = codebook, 3 = JSON metadata
//!   u32   slot       caller-defined role of the section
//!   u64   payload length in bytes
//!   ...   payload
//! ```
//!
//! PCA payload: `u32 d_in, u32 d_out, u32 whiten (0/1), u32 reserved (0),
//! f64 epsilon, f64[d_in] mean, f64[d_out * d_in] components (row-major),
//! f64[d_out] eigenvalues`.
//!
//! Codebook payload: `u32 k, u32 dim, f64[k * dim] centers (row-major)`.
//!
//! Metadata payload: UTF-8 JSON.
//!
//! Every integer and float is little-endian, so models round-trip bit-exactly.

use std::io::{Read, Write};

use super::{Codebook, PcaModel};
use crate::error::{MopError, Result};

pub const MOPM_MAGIC: &[u8; 4] = b"MOPM";
pub const MOPM_VERSION: u32 = 1;

const TAG_PCA: u32 = 1;
const TAG_CODEBOOK: u32 = 2;
const TAG_META: u32 = 3;

#[derive(Clone, Debug, PartialEq)]
pub enum Section {
    Pca { slot: u32, model: PcaModel },
    Codebook { slot: u32, book: Codebook },
    Meta { slot: u32, json: String },
}

pub fn write_sections<W: Write>(mut w: W, sections: &[Section]) -> Result<()> {
    w.write_all(MOPM_MAGIC)?;
    w.write_all(&MOPM_VERSION.to_le_bytes())?;
    w.write_all(&u32_of(sections.len())?.to_le_bytes())?;
    for s in sections {
        let (tag, slot, payload) = match s {
            Section::Pca { slot, model } => (TAG_PCA, *slot, pca_payload(model)?),
            Section::Codebook { slot, book } => (TAG_CODEBOOK, *slot, codebook_payload(book)?),
            Section::Meta { slot, json } => (TAG_META, *slot, json.as_bytes().to_vec()),
        };
        w.write_all(&tag.to_le_bytes())?;
        w.write_all(&slot.to_le_bytes())?;
        w.write_all(&(payload.len() as u64).to_le_bytes())?;
        w.write_all(&payload)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sections<R: Read>(mut r: R) -> Result<Vec<Section>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != MOPM_MAGIC {
        return Err(MopError::format("missing MOPM magic"));
    }
    let version = cur.u32()?;
    if version != MOPM_VERSION {
        return Err(MopError::format(format!("unsupported MOPM version {version}")));
    }
    let count = cur.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let tag = cur.u32()?;
        let slot = cur.u32()?;
        let len = usize::try_from(cur.u64()?).map_err(|_| MopError::format("section too large"))?;
        let payload = cur.take(len)?;
        let mut p = Cursor { bytes: payload, pos: 0 };
        let section = match tag {
            TAG_PCA => Section::Pca { slot, model: read_pca(&mut p)? },
            TAG_CODEBOOK => Section::Codebook { slot, book: read_codebook(&mut p)? },
            TAG_META => Section::Meta {
                slot,
                json: String::from_utf8(payload.to_vec())
                    .map_err(|_| MopError::format("metadata section is not UTF-8"))?,
            },
            other => return Err(MopError::format(format!("unknown MOPM section tag {other}"))),
        };
        if tag != TAG_META && p.pos != payload.len() {
            return Err(MopError::format("trailing bytes in MOPM section"));
        }
        out.push(section);
    }
    if cur.pos != bytes.len() {
        return Err(MopError::format("trailing bytes after MOPM sections"));
    }
    Ok(out)
}

fn u32_of(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| MopError::invalid(format!("{n} does not fit a u32 field")))
}

fn push_f64s(buf: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn pca_payload(m: &PcaModel) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&u32_of(m.input_dim())?.to_le_bytes());
    buf.extend_from_slice(&u32_of(m.output_dim())?.to_le_bytes());
    buf.extend_from_slice(&(m.whiten() as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&m.epsilon().to_le_bytes());
    push_f64s(&mut buf, m.mean());
    push_f64s(&mut buf, m.components());
    push_f64s(&mut buf, m.eigenvalues());
    Ok(buf)
}

fn codebook_payload(b: &Codebook) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&u32_of(b.k())?.to_le_bytes());
    buf.extend_from_slice(&u32_of(b.dim())?.to_le_bytes());
    push_f64s(&mut buf, b.centers());
    Ok(buf)
}

fn read_pca(p: &mut Cursor<'_>) -> Result<PcaModel> {
    let d_in = p.u32()? as usize;
    let d_out = p.u32()? as usize;
    let whiten = match p.u32()? {
        0 => false,
        1 => true,
        other => return Err(MopError::format(format!("bad whiten flag {other}"))),
    };
    let _reserved = p.u32()?;
    let epsilon = p.f64()?;
    let mean = p.f64s(d_in)?;
    let components = p.f64s(d_out * d_in)?;
    let eigenvalues = p.f64s(d_out)?;
    PcaModel::from_parts(mean, components, eigenvalues, whiten, epsilon)
        .map_err(|e| MopError::format(format!("PCA section: {e}")))
}

fn read_codebook(p: &mut Cursor<'_>) -> Result<Codebook> {
    let k = p.u32()? as usize;
    let dim = p.u32()? as usize;
    let centers = p.f64s(k * dim)?;
    Codebook::new(k, dim, centers).map_err(|e| MopError::format(format!("codebook section: {e}")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| MopError::format("MOPM data truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| MopError::format("size overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    proptest! {
        #[test]
        fn sections_round_trip_bit_exact(
            d_in in 1usize..5,
            d_out in 0usize..4,
            k in 1usize..4,
            whiten in any::<bool>(),
            seed in proptest::collection::vec(-1e6f64..1e6, 64),
        ) {
            let take = |n: usize, off: usize| (0..n).map(|i| seed[(i + off) % 64] / 3.0).collect::<Vec<_>>();
            let pca = PcaModel::from_parts(take(d_in, 0), take(d_in * d_out, 5), take(d_out, 9), whiten, 1e-9).unwrap();
            let book = Codebook::new(k, d_in, take(k * d_in, 17)).unwrap();
            let sections = vec![
                Section::Meta { slot: 0, json: "{\"a\":1}".into() },
                Section::Pca { slot: 7, model: pca.clone() },
                Section::Codebook { slot: 8, book: book.clone() },
            ];
            let mut buf = Vec::new();
            write_sections(&mut buf, &sections).unwrap();
            let back = read_sections(&buf[..]).unwrap();
            prop_assert_eq!(back.len(), 3);
            match (&back[1], &back[2]) {
                (Section::Pca { slot: 7, model }, Section::Codebook { slot: 8, book: b }) => {
                    prop_assert_eq!(bits(model.mean()), bits(pca.mean()));
                    prop_assert_eq!(bits(model.components()), bits(pca.components()));
                    prop_assert_eq!(bits(model.eigenvalues()), bits(pca.eigenvalues()));
                    prop_assert_eq!(model.whiten(), whiten);
                    prop_assert_eq!(bits(b.centers()), bits(book.centers()));
                }
                _ => prop_assert!(false, "sections reordered"),
            }
            let mut again = Vec::new();
            write_sections(&mut again, &back).unwrap();
            prop_assert_eq!(again, buf);
        }
    }

    #[test]
    fn rejects_damage() {
        let book = Codebook::new(1, 1, vec![2.0]).unwrap();
        let mut buf = Vec::new();
        write_sections(&mut buf, &[Section::Codebook { slot: 0, book }]).unwrap();
        assert!(read_sections(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_sections(&extra[..]).is_err());
        let mut bad = buf;
        bad[12] = 9;
        assert!(read_sections(&bad[..]).is_err());
    }
}
