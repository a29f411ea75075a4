//! RGB8 rasters, pixel rectangles and the `RRGB` raw raster format.
//!
//! `RRGB` layout: magic `RRGB` · version u16 LE (= 1) · width u32 LE ·
//! height u32 LE · width×height×3 bytes of RGB8, row-major. Windows of an
//! `RRGB` file can be read with seeks, so arbitrarily large inputs never have
//! to be resident in memory at once.

use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RRGB_MAGIC: &[u8; 4] = b"RRGB";
pub const RRGB_VERSION: u16 = 1;
const RRGB_HEADER_LEN: u64 = 14;

/// Axis-aligned pixel rectangle; `x`/`y` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && y >= self.y && x < self.right() && y < self.bottom()
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x0 < x1 && y0 < y1).then(|| Rect::new(x0, y0, x1 - x0, y1 - y0))
    }
}

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("bad magic: expected RRGB")]
    BadMagic,
    #[error("unsupported RRGB version {0}")]
    Version(u16),
    #[error("truncated RRGB payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("window {0:?} lies outside the raster")]
    WindowOutOfBounds(Rect),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Owned RGB8 raster, row-major, 3 bytes per pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RgbImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize * 3],
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self, RasterError> {
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(RasterError::DimensionMismatch(format!(
                "{width}x{height} RGB raster needs {expected} bytes, got {}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// True when the pixel is exactly (0, 0, 0), the painted "already segmented" colour.
    pub fn is_black(&self, x: u32, y: u32) -> bool {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i] == 0 && self.data[i + 1] == 0 && self.data[i + 2] == 0
    }

    /// Pixel-exact copy of `rect`.
    pub fn crop(&self, rect: Rect) -> Result<RgbImage, RasterError> {
        if !Rect::new(0, 0, self.width, self.height).contains_rect(&rect) {
            return Err(RasterError::WindowOutOfBounds(rect));
        }
        let mut data = Vec::with_capacity(rect.area() as usize * 3);
        let stride = self.width as usize * 3;
        for y in rect.y..rect.bottom() {
            let start = y as usize * stride + rect.x as usize * 3;
            data.extend_from_slice(&self.data[start..start + rect.w as usize * 3]);
        }
        Ok(RgbImage {
            width: rect.w,
            height: rect.h,
            data,
        })
    }
}

/// Anything that can hand out rectangular RGB windows of a (possibly huge) raster.
pub trait RasterSource: Sync {
    fn dims(&self) -> (u32, u32);
    fn read_window(&self, rect: Rect) -> Result<RgbImage, RasterError>;
}

impl RasterSource for RgbImage {
    fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    fn read_window(&self, rect: Rect) -> Result<RgbImage, RasterError> {
        self.crop(rect)
    }
}

pub fn write_rrgb<W: Write>(image: &RgbImage, mut out: W) -> Result<(), RasterError> {
    if image.width == 0 || image.height == 0 {
        return Err(RasterError::EmptyDimensions {
            width: image.width,
            height: image.height,
        });
    }
    out.write_all(RRGB_MAGIC)?;
    out.write_all(&RRGB_VERSION.to_le_bytes())?;
    out.write_all(&image.width.to_le_bytes())?;
    out.write_all(&image.height.to_le_bytes())?;
    out.write_all(&image.data)?;
    Ok(())
}

/// Writes any raster source as `RRGB`, reading it in bands of rows so the
/// whole image is never held in memory.
pub fn write_rrgb_source<S: RasterSource + ?Sized, W: Write>(source: &S, mut out: W) -> Result<(), RasterError> {
    const BAND_ROWS: u32 = 64;
    let (width, height) = source.dims();
    if width == 0 || height == 0 {
        return Err(RasterError::EmptyDimensions { width, height });
    }
    out.write_all(RRGB_MAGIC)?;
    out.write_all(&RRGB_VERSION.to_le_bytes())?;
    out.write_all(&width.to_le_bytes())?;
    out.write_all(&height.to_le_bytes())?;
    for y in (0..height).step_by(BAND_ROWS as usize) {
        let band = source.read_window(Rect::new(0, y, width, BAND_ROWS.min(height - y)))?;
        out.write_all(band.as_raw())?;
    }
    Ok(())
}

pub fn encode_rrgb(image: &RgbImage) -> Result<Vec<u8>, RasterError> {
    let mut buf = Vec::with_capacity(RRGB_HEADER_LEN as usize + image.data.len());
    write_rrgb(image, &mut buf)?;
    Ok(buf)
}

fn read_header<R: Read>(mut r: R) -> Result<(u32, u32), RasterError> {
    let mut header = [0u8; RRGB_HEADER_LEN as usize];
    let mut filled = 0;
    while filled < header.len() {
        match r.read(&mut header[filled..])? {
            0 => {
                return Err(RasterError::Truncated {
                    expected: RRGB_HEADER_LEN,
                    found: filled as u64,
                })
            }
            n => filled += n,
        }
    }
    if &header[0..4] != RRGB_MAGIC {
        return Err(RasterError::BadMagic);
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != RRGB_VERSION {
        return Err(RasterError::Version(version));
    }
    let width = u32::from_le_bytes(header[6..10].try_into().unwrap());
    let height = u32::from_le_bytes(header[10..14].try_into().unwrap());
    if width == 0 || height == 0 {
        return Err(RasterError::EmptyDimensions { width, height });
    }
    Ok((width, height))
}

pub fn decode_rrgb(bytes: &[u8]) -> Result<RgbImage, RasterError> {
    let (width, height) = read_header(bytes)?;
    let payload = &bytes[RRGB_HEADER_LEN as usize..];
    let expected = width as u64 * height as u64 * 3;
    if (payload.len() as u64) < expected {
        return Err(RasterError::Truncated {
            expected,
            found: payload.len() as u64,
        });
    }
    RgbImage::from_raw(width, height, payload[..expected as usize].to_vec())
}

/// `RRGB` file opened for windowed reads. Only the requested rows are read.
pub struct RrgbFile {
    width: u32,
    height: u32,
    file: Mutex<BufReader<File>>,
}

impl RrgbFile {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        let mut file = File::open(path)?;
        let (width, height) = read_header(&mut file)?;
        let expected = RRGB_HEADER_LEN + width as u64 * height as u64 * 3;
        let found = file.metadata()?.len();
        if found < expected {
            return Err(RasterError::Truncated {
                expected: expected - RRGB_HEADER_LEN,
                found: found.saturating_sub(RRGB_HEADER_LEN),
            });
        }
        Ok(Self {
            width,
            height,
            file: Mutex::new(BufReader::new(file)),
        })
    }
}

impl RasterSource for RrgbFile {
    fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    fn read_window(&self, rect: Rect) -> Result<RgbImage, RasterError> {
        if !Rect::new(0, 0, self.width, self.height).contains_rect(&rect) {
            return Err(RasterError::WindowOutOfBounds(rect));
        }
        let mut data = vec![0u8; rect.area() as usize * 3];
        let row_bytes = rect.w as usize * 3;
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        for (i, y) in (rect.y..rect.bottom()).enumerate() {
            let offset =
                RRGB_HEADER_LEN + (y as u64 * self.width as u64 + rect.x as u64) * 3;
            file.seek(SeekFrom::Start(offset))?;
            file.read_exact(&mut data[i * row_bytes..(i + 1) * row_bytes])?;
        }
        RgbImage::from_raw(rect.w, rect.h, data)
    }
}
