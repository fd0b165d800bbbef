//! Binary PGM (P5) and PPM (P6) with maxval 255.

use std::io::{Read, Write};

use super::ImageTensor;
use crate::error::{MopError, Result};

pub fn read_pnm<R: Read>(mut reader: R) -> Result<ImageTensor> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let mut pos = 0usize;

    let magic = next_token(&bytes, &mut pos)?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(MopError::format(format!(
                "unsupported PNM magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = parse_uint(next_token(&bytes, &mut pos)?)?;
    let height = parse_uint(next_token(&bytes, &mut pos)?)?;
    let maxval = parse_uint(next_token(&bytes, &mut pos)?)?;
    if maxval != 255 {
        return Err(MopError::format(format!(
            "only maxval 255 is supported, got {maxval}"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(MopError::format("missing whitespace after PNM header"));
    }
    pos += 1;
    let len = width * height * channels;
    let raster = bytes
        .get(pos..pos + len)
        .ok_or_else(|| MopError::format(format!("PNM raster truncated: expected {len} bytes")))?;
    ImageTensor::new(width, height, channels, raster.to_vec())
}

pub fn write_pnm<W: Write>(img: &ImageTensor, mut writer: W) -> Result<()> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    write!(writer, "{magic}\n{} {}\n255\n", img.width(), img.height())?;
    writer.write_all(img.data())?;
    Ok(())
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(MopError::format("unexpected end of PNM header"));
    }
    Ok(&bytes[start..*pos])
}

fn parse_uint(token: &[u8]) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            MopError::format(format!(
                "bad PNM header field {:?}",
                String::from_utf8_lossy(token)
            ))
        })
}
