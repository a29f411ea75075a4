//! Reading and writing the on-disk formats.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{ColorType, ExtendedColorType, ImageEncoder, ImageReader, Limits};
use mosaicseg_core::labelmap::{read_rslm, write_rslm_to, LabelMap};
use mosaicseg_core::raster::{RasterSource, RgbImage, RrgbFile, RRGB_MAGIC};

use crate::fail::{CliResult, Failure};

/// PNG inputs are decoded whole; larger rasters must be converted to RRGB.
pub const PNG_MAX_SIDE: u32 = 20_000;
pub const PNG_MAX_ALLOC: u64 = 1 << 30;

pub enum Raster {
    Streamed(RrgbFile),
    Decoded(RgbImage),
}

impl Raster {
    pub fn source(&self) -> &dyn RasterSource {
        match self {
            Raster::Streamed(f) => f,
            Raster::Decoded(img) => img,
        }
    }
}

/// Opens an RRGB file for windowed reads, or decodes a PNG.
pub fn open_raster(path: &Path) -> CliResult<Raster> {
    let mut magic = [0u8; 4];
    let n = File::open(path)
        .and_then(|mut f| f.read(&mut magic))
        .map_err(|e| Failure::at(path, e))?;
    if n == 4 && &magic == RRGB_MAGIC {
        return RrgbFile::open(path)
            .map(Raster::Streamed)
            .map_err(|e| Failure::at(path, e));
    }
    read_png(path).map(Raster::Decoded)
}

pub fn read_png(path: &Path) -> CliResult<RgbImage> {
    let mut limits = Limits::default();
    limits.max_image_width = Some(PNG_MAX_SIDE);
    limits.max_image_height = Some(PNG_MAX_SIDE);
    limits.max_alloc = Some(PNG_MAX_ALLOC);
    let mut reader = ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|e| Failure::at(path, e))?;
    reader.limits(limits);
    let decoded = reader.decode().map_err(|e| {
        Failure::at(
            path,
            format!("{e} (PNG input is limited to {PNG_MAX_SIDE} px per side; use RRGB for larger rasters)"),
        )
    })?;
    match decoded.color() {
        ColorType::L8 | ColorType::La8 | ColorType::Rgb8 | ColorType::Rgba8 => {}
        other => {
            return Err(Failure::at(path, format!("{other:?} is not an 8-bit raster")));
        }
    }
    let rgb = decoded.into_rgb8();
    let (w, h) = rgb.dimensions();
    RgbImage::from_raw(w, h, rgb.into_raw()).map_err(|e| Failure::at(path, e))
}

pub fn write_png(path: &Path, img: &RgbImage) -> CliResult {
    let file = File::create(path).map_err(|e| Failure::at(path, e))?;
    let mut out = BufWriter::new(file);
    PngEncoder::new(&mut out)
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
        .map_err(|e| Failure::at(path, e))?;
    out.flush().map_err(|e| Failure::at(path, e))
}

pub fn read_map(path: &Path) -> CliResult<LabelMap> {
    let bytes = std::fs::read(path).map_err(|e| Failure::at(path, e))?;
    read_rslm(&bytes).map_err(|e| Failure::at(path, e))
}

pub fn write_map(path: &Path, map: &LabelMap) -> CliResult {
    let file = File::create(path).map_err(|e| Failure::at(path, e))?;
    let mut out = BufWriter::new(file);
    write_rslm_to(map, &mut out).map_err(|e| Failure::at(path, e))?;
    out.flush().map_err(|e| Failure::at(path, e))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::at(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| Failure::at(path, e))
}

pub fn parse_dims(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let w: u32 = w.trim().parse().map_err(|e| format!("width {w:?}: {e}"))?;
    let h: u32 = h.trim().parse().map_err(|e| format!("height {h:?}: {e}"))?;
    if w == 0 || h == 0 {
        return Err("dimensions must be positive".into());
    }
    Ok((w, h))
}

pub fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("expected LOW,HIGH, got {s:?}"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{lo:?}: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{hi:?}: {e}"))?;
    if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
        return Err(format!("need 0 <= LOW <= HIGH <= 1, got {lo},{hi}"));
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_and_ranges() {
        assert_eq!(parse_dims("640x480"), Ok((640, 480)));
        assert!(parse_dims("640").is_err());
        assert!(parse_dims("0x4").is_err());
        assert_eq!(parse_range("0.6,0.9"), Ok((0.6, 0.9)));
        assert!(parse_range("0.9,0.6").is_err());
        assert!(parse_range("0.5,1.5").is_err());
    }
}
