//! Tile planning with contextual padding, and committing tile results.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labelmap::{LabelMap, UNLABELED};
use crate::raster::{RasterError, RasterSource, Rect, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSpec {
    /// Row-major position in the plan.
    pub index: usize,
    pub row: u32,
    pub col: u32,
    /// The part of the image this tile is responsible for.
    pub core: Rect,
    /// The inference window: the core grown by up to `padding` on each side.
    pub window: Rect,
    /// Added to every local label on commit.
    pub label_offset: u32,
}

impl TileSpec {
    /// Core rectangle in window-local coordinates.
    pub fn core_in_window(&self) -> Rect {
        Rect::new(
            self.core.x - self.window.x,
            self.core.y - self.window.y,
            self.core.w,
            self.core.h,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
    pub padding: u32,
    pub rows: u32,
    pub cols: u32,
    /// Size of each tile's reserved label range.
    pub label_stride: u32,
    pub tiles: Vec<TileSpec>,
}

#[derive(Debug, Error)]
pub enum TilerError {
    #[error("invalid tiling: {0}")]
    Invalid(String),
    #[error("label ranges of {tiles} tiles x {stride} labels exceed 32-bit ids")]
    LabelSpace { tiles: usize, stride: u32 },
    #[error("local map is {got_w}x{got_h}, tile window is {want_w}x{want_h}")]
    WindowMismatch {
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("local label {label} exceeds the tile's reserved range of {stride}")]
    LabelOutOfRange { label: u32, stride: u32 },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

pub fn plan_tiles(width: u32, height: u32, tile_size: u32, padding: u32) -> Result<TilePlan, TilerError> {
    if width == 0 || height == 0 || tile_size == 0 {
        return Err(TilerError::Invalid(format!(
            "image {width}x{height} with tile size {tile_size}"
        )));
    }
    let cols = width.div_ceil(tile_size);
    let rows = height.div_ceil(tile_size);
    let n = rows as usize * cols as usize;
    // Largest possible window bounds the number of segments a tile can produce.
    let max_w = (tile_size as u64 + 2 * padding as u64).min(width as u64);
    let max_h = (tile_size as u64 + 2 * padding as u64).min(height as u64);
    let stride = u32::try_from(max_w * max_h).map_err(|_| TilerError::LabelSpace {
        tiles: n,
        stride: u32::MAX,
    })?;
    // Every offset plus the stride must fit in a u32.
    (n as u64)
        .checked_mul(stride as u64)
        .filter(|&total| total <= u32::MAX as u64 - 1)
        .ok_or(TilerError::LabelSpace { tiles: n, stride })?;

    let mut tiles = Vec::with_capacity(n);
    for row in 0..rows {
        for col in 0..cols {
            let x = col * tile_size;
            let y = row * tile_size;
            let core = Rect::new(x, y, tile_size.min(width - x), tile_size.min(height - y));
            let x0 = x.saturating_sub(padding);
            let y0 = y.saturating_sub(padding);
            let x1 = (core.right() as u64 + padding as u64).min(width as u64) as u32;
            let y1 = (core.bottom() as u64 + padding as u64).min(height as u64) as u32;
            let index = tiles.len();
            tiles.push(TileSpec {
                index,
                row,
                col,
                core,
                window: Rect::new(x0, y0, x1 - x0, y1 - y0),
                label_offset: index as u32 * stride,
            });
        }
    }
    Ok(TilePlan {
        width,
        height,
        tile_size,
        padding,
        rows,
        cols,
        label_stride: stride,
        tiles,
    })
}

impl TilePlan {
    pub fn tile(&self, row: u32, col: u32) -> Option<&TileSpec> {
        if row < self.rows && col < self.cols {
            Some(&self.tiles[(row * self.cols + col) as usize])
        } else {
            None
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

pub fn extract_window<S: RasterSource + ?Sized>(source: &S, spec: &TileSpec) -> Result<RgbImage, TilerError> {
    Ok(source.read_window(spec.window)?)
}

/// Copies the core of `local` into `global`, shifting labels by
/// `spec.label_offset`. Returns the number of distinct local labels in the core.
pub fn commit_core(
    global: &mut LabelMap,
    local: &LabelMap,
    spec: &TileSpec,
    label_stride: u32,
) -> Result<usize, TilerError> {
    if local.dims() != (spec.window.w, spec.window.h) {
        return Err(TilerError::WindowMismatch {
            got_w: local.width(),
            got_h: local.height(),
            want_w: spec.window.w,
            want_h: spec.window.h,
        });
    }
    let inner = spec.core_in_window();
    let mut seen = Vec::new();
    for dy in 0..inner.h {
        let src = &local.row(inner.y + dy)[inner.x as usize..inner.right() as usize];
        if let Some(&l) = src.iter().find(|&&l| l > label_stride) {
            return Err(TilerError::LabelOutOfRange {
                label: l,
                stride: label_stride,
            });
        }
        let gy = spec.core.y + dy;
        let w = global.width() as usize;
        let dst = &mut global.labels_mut()
            [gy as usize * w + spec.core.x as usize..gy as usize * w + spec.core.right() as usize];
        debug_assert!(dst.iter().all(|&l| l == UNLABELED), "tile cores overlap");
        let mut last = UNLABELED;
        for (d, &l) in dst.iter_mut().zip(src) {
            if l == UNLABELED {
                *d = UNLABELED;
                continue;
            }
            *d = l + spec.label_offset;
            if l != last {
                seen.push(l);
                last = l;
            }
        }
    }
    seen.sort_unstable();
    seen.dedup();
    if let Some(&max) = seen.last() {
        global.reserve_labels_below(max + spec.label_offset + 1);
    }
    Ok(seen.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tile_counts() {
        assert_eq!(plan_tiles(6000, 6000, 1000, 50).unwrap().tiles.len(), 36);
        assert_eq!(plan_tiles(10_000, 10_000, 1000, 50).unwrap().tiles.len(), 100);
        let p = plan_tiles(1050, 1050, 1000, 50).unwrap();
        assert_eq!(p.tiles.len(), 4);
        assert_eq!(p.tile(0, 1).unwrap().core, Rect::new(1000, 0, 50, 1000));
    }

    #[test]
    fn windows() {
        let p = plan_tiles(3000, 3000, 1000, 50).unwrap();
        let mid = p.tile(1, 1).unwrap();
        assert_eq!(mid.window, Rect::new(950, 950, 1100, 1100));
        assert_eq!(p.tile(0, 0).unwrap().window, Rect::new(0, 0, 1050, 1050));
        let p0 = plan_tiles(3000, 3000, 1000, 0).unwrap();
        assert!(p0.tiles.iter().all(|t| t.window == t.core));
        // Remainder tiles keep their padding.
        let r = plan_tiles(1050, 1000, 1000, 50).unwrap();
        assert_eq!(r.tile(0, 1).unwrap().window, Rect::new(950, 0, 100, 1000));
    }

    #[test]
    fn cores_partition_the_image() {
        for (w, h, t, pad) in [(1, 1, 1, 0), (7, 5, 3, 2), (100, 37, 16, 5), (64, 64, 64, 10)] {
            let p = plan_tiles(w, h, t, pad).unwrap();
            let mut hits = vec![0u8; (w * h) as usize];
            for s in &p.tiles {
                assert!(s.window.contains_rect(&s.core));
                assert!(Rect::new(0, 0, w, h).contains_rect(&s.window));
                for y in s.core.y..s.core.bottom() {
                    for x in s.core.x..s.core.right() {
                        hits[(y * w + x) as usize] += 1;
                    }
                }
            }
            assert!(hits.iter().all(|&c| c == 1));
            assert_eq!(p.tiles.len() as u32, w.div_ceil(t) * h.div_ceil(t));
        }
    }

    #[test]
    fn label_space_overflow_is_reported() {
        assert!(matches!(
            plan_tiles(400_000, 400_000, 1000, 50),
            Err(TilerError::LabelSpace { .. })
        ));
    }

    #[test]
    fn commit_clips_to_core() {
        let p = plan_tiles(20, 10, 10, 3).unwrap();
        let left = p.tile(0, 0).unwrap();
        assert_eq!(left.window, Rect::new(0, 0, 13, 10));
        // One segment covering window columns 5..13 (reaches into the margin).
        let local = LabelMap::from_fn(13, 10, |x, _| u32::from(x >= 5));
        let mut global = LabelMap::new(20, 10);
        assert_eq!(commit_core(&mut global, &local, left, p.label_stride).unwrap(), 1);
        for y in 0..10 {
            for x in 0..20 {
                let want = if (5..10).contains(&x) { 1 + left.label_offset } else { 0 };
                assert_eq!(global.get(x, y), want);
            }
        }
        let right = p.tile(0, 1).unwrap();
        let zeros = LabelMap::new(right.window.w, right.window.h);
        assert_eq!(commit_core(&mut global, &zeros, right, p.label_stride).unwrap(), 0);
        assert!(global.labels().iter().skip(10).step_by(20).all(|&l| l == 0));
    }

    #[test]
    fn commit_order_does_not_matter() {
        let p = plan_tiles(16, 16, 8, 2).unwrap();
        let locals: Vec<LabelMap> = p
            .tiles
            .iter()
            .map(|t| LabelMap::from_fn(t.window.w, t.window.h, |x, y| 1 + (x / 3 + y / 3) % 4))
            .collect();
        let mut a = LabelMap::new(16, 16);
        let mut b = LabelMap::new(16, 16);
        for (t, l) in p.tiles.iter().zip(&locals) {
            commit_core(&mut a, l, t, p.label_stride).unwrap();
        }
        for (t, l) in p.tiles.iter().zip(&locals).rev() {
            commit_core(&mut b, l, t, p.label_stride).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn commit_rejects_bad_locals() {
        let p = plan_tiles(8, 8, 4, 1).unwrap();
        let t = p.tile(0, 0).unwrap();
        let mut g = LabelMap::new(8, 8);
        assert!(matches!(
            commit_core(&mut g, &LabelMap::new(3, 3), t, p.label_stride),
            Err(TilerError::WindowMismatch { .. })
        ));
        let big = LabelMap::from_fn(5, 5, |_, _| p.label_stride + 1);
        assert!(matches!(
            commit_core(&mut g, &big, t, p.label_stride),
            Err(TilerError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn extract_matches_crop() {
        let img = RgbImage::from_fn(30, 20, |x, y| [x as u8, y as u8, 7]);
        let p = plan_tiles(30, 20, 12, 4).unwrap();
        for t in &p.tiles {
            assert_eq!(extract_window(&img, t).unwrap(), img.crop(t.window).unwrap());
        }
    }

    #[test]
    fn plan_exports_json() {
        let p = plan_tiles(30, 20, 12, 4).unwrap();
        let back: TilePlan = serde_json::from_str(&p.to_json()).unwrap();
        assert_eq!(back, p);
    }
}
