use crate::raster::Rect;

use super::LabelMapError;

/// Binary mask stored as row-major run lengths.
///
/// Runs alternate background/foreground and always start with a background
/// run, which may be empty. Every later run is non-empty, so the encoding of
/// a given mask is unique.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            runs: vec![width * height],
        }
    }

    /// Validates a canonical run list.
    pub fn from_runs(width: u32, height: u32, runs: Vec<u32>) -> Result<Self, LabelMapError> {
        check_sum(width, height, &runs)?;
        if runs.is_empty() || runs.iter().skip(1).any(|&r| r == 0) {
            return Err(LabelMapError::InvalidRle(
                "zero-length run after the leading background run".into(),
            ));
        }
        Ok(Self { width, height, runs })
    }

    /// Accepts any run list with the right total, merging empty interior runs.
    pub fn from_runs_lenient(
        width: u32,
        height: u32,
        runs: &[u32],
    ) -> Result<Self, LabelMapError> {
        check_sum(width, height, runs)?;
        let mut out: Vec<u32> = Vec::with_capacity(runs.len());
        let mut out_fg = false;
        for (i, &r) in runs.iter().enumerate() {
            let fg = i % 2 == 1;
            if out.is_empty() {
                if fg {
                    out.push(0);
                    out.push(r);
                    out_fg = true;
                } else {
                    out.push(r);
                }
                continue;
            }
            if r == 0 {
                continue;
            }
            if fg == out_fg {
                *out.last_mut().unwrap() += r;
            } else {
                out.push(r);
                out_fg = fg;
            }
        }
        if out.is_empty() {
            out.push(0);
        }
        Ok(Self {
            width,
            height,
            runs: out,
        })
    }

    pub fn from_bits(width: u32, height: u32, bits: &[bool]) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize);
        let mut runs = Vec::new();
        let mut current = false;
        let mut count = 0u32;
        for &b in bits {
            if b != current {
                runs.push(count);
                count = 0;
                current = b;
            }
            count += 1;
        }
        runs.push(count);
        Self {
            width,
            height,
            runs,
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut builder = RunBuilder::new(width, height);
        for y in 0..height {
            for x in 0..width {
                builder.push(f(x, y));
            }
        }
        builder.finish()
    }

    /// Builds a mask from row spans `(y, x0, x1)` (x1 exclusive) given in row-major order.
    pub fn from_row_spans(
        width: u32,
        height: u32,
        spans: impl IntoIterator<Item = (u32, u32, u32)>,
    ) -> Self {
        let total = width as u64 * height as u64;
        let mut runs = Vec::new();
        let mut cursor = 0u64;
        for (y, x0, x1) in spans {
            if x1 <= x0 {
                continue;
            }
            let start = y as u64 * width as u64 + x0 as u64;
            let len = (x1 - x0) as u64;
            debug_assert!(start >= cursor, "spans must be row-major and disjoint");
            if start == cursor && !runs.is_empty() {
                // Extends the previous foreground run across a row boundary.
                *runs.last_mut().unwrap() += len as u32;
            } else {
                runs.push((start - cursor) as u32);
                runs.push(len as u32);
            }
            cursor = start + len;
        }
        if runs.is_empty() {
            runs.push(total as u32);
        } else if cursor < total {
            runs.push((total - cursor) as u32);
        }
        Self {
            width,
            height,
            runs,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn runs(&self) -> &[u32] {
        &self.runs
    }

    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).map(|&r| r as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// Foreground runs as `(linear start, length)`.
    pub fn spans(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.runs.iter().enumerate().filter_map(move |(i, &r)| {
            let start = pos;
            pos += r as u64;
            (i % 2 == 1 && r > 0).then_some((start, r as u64))
        })
    }

    /// Foreground runs split at row boundaries, as `(y, x0, x1)` with `x1` exclusive.
    pub fn row_spans(&self) -> impl Iterator<Item = (u32, u32, u32)> + '_ {
        let w = self.width as u64;
        self.spans().flat_map(move |(start, len)| {
            let end = start + len;
            let first_row = start / w;
            let last_row = (end - 1) / w;
            (first_row..=last_row).map(move |row| {
                let row_start = row * w;
                let x0 = start.max(row_start) - row_start;
                let x1 = end.min(row_start + w) - row_start;
                (row as u32, x0 as u32, x1 as u32)
            })
        })
    }

    pub fn to_bits(&self) -> Vec<bool> {
        let mut bits = Vec::with_capacity(self.width as usize * self.height as usize);
        for (i, &r) in self.runs.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
        }
        bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        let target = y as u64 * self.width as u64 + x as u64;
        let mut pos = 0u64;
        for (i, &r) in self.runs.iter().enumerate() {
            pos += r as u64;
            if target < pos {
                return i % 2 == 1;
            }
        }
        false
    }

    pub fn bbox(&self) -> Option<Rect> {
        let mut bounds: Option<(u32, u32, u32, u32)> = None;
        for (y, x0, x1) in self.row_spans() {
            let b = bounds.get_or_insert((x0, y, x1, y));
            b.0 = b.0.min(x0);
            b.2 = b.2.max(x1);
            b.3 = y;
        }
        bounds.map(|(x0, y0, x1, y1)| Rect::new(x0, y0, x1 - x0, y1 - y0 + 1))
    }
}

fn check_sum(width: u32, height: u32, runs: &[u32]) -> Result<(), LabelMapError> {
    let sum: u64 = runs.iter().map(|&r| r as u64).sum();
    let expected = width as u64 * height as u64;
    if sum != expected {
        return Err(LabelMapError::InvalidRle(format!(
            "run lengths sum to {sum}, expected {expected}"
        )));
    }
    Ok(())
}

/// Incremental row-major RLE encoder.
pub struct RunBuilder {
    width: u32,
    height: u32,
    runs: Vec<u32>,
    current: bool,
    count: u32,
}

impl RunBuilder {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            runs: Vec::new(),
            current: false,
            count: 0,
        }
    }

    pub fn push(&mut self, bit: bool) {
        if bit != self.current {
            self.runs.push(self.count);
            self.count = 0;
            self.current = bit;
        }
        self.count += 1;
    }

    pub fn finish(mut self) -> BinaryMask {
        self.runs.push(self.count);
        BinaryMask {
            width: self.width,
            height: self.height,
            runs: self.runs,
        }
    }
}
