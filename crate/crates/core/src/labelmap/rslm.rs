//! `RSLM` label-map files.
//!
//! Layout, all little-endian: magic `RSLM` · version u16 (= 1) · width u32 ·
//! height u32 · width×height u32 labels, row-major.

use std::io::Write;

use super::{LabelMap, LabelMapError};

pub const RSLM_MAGIC: &[u8; 4] = b"RSLM";
pub const RSLM_VERSION: u16 = 1;
const HEADER_LEN: usize = 14;

pub fn write_rslm(map: &LabelMap) -> Result<Vec<u8>, LabelMapError> {
    let mut out = Vec::with_capacity(HEADER_LEN + map.labels().len() * 4);
    write_rslm_to(map, &mut out)?;
    Ok(out)
}

pub fn write_rslm_to<W: Write>(map: &LabelMap, mut out: W) -> Result<(), LabelMapError> {
    let (width, height) = map.dims();
    if width == 0 || height == 0 {
        return Err(LabelMapError::EmptyDimensions { width, height });
    }
    out.write_all(RSLM_MAGIC)?;
    out.write_all(&RSLM_VERSION.to_le_bytes())?;
    out.write_all(&width.to_le_bytes())?;
    out.write_all(&height.to_le_bytes())?;
    let mut buf = Vec::with_capacity(width as usize * 4);
    for y in 0..height {
        buf.clear();
        for &l in map.row(y) {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_rslm(bytes: &[u8]) -> Result<LabelMap, LabelMapError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != RSLM_MAGIC {
            return Err(LabelMapError::BadMagic);
        }
        return Err(LabelMapError::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    if &bytes[..4] != RSLM_MAGIC {
        return Err(LabelMapError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != RSLM_VERSION {
        return Err(LabelMapError::Version(version));
    }
    let width = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
    if width == 0 || height == 0 {
        return Err(LabelMapError::EmptyDimensions { width, height });
    }
    let expected = width as u64 * height as u64 * 4;
    let payload = &bytes[HEADER_LEN..];
    let found = payload.len() as u64;
    if found < expected {
        return Err(LabelMapError::Truncated { expected, found });
    }
    if found > expected {
        return Err(LabelMapError::TrailingBytes(found - expected));
    }
    let labels = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LabelMap::from_labels(width, height, labels)
}
