//! Dense label rasters, binary masks and their component analysis.

mod components;
mod mask;
mod render;
mod rslm;

pub use components::{connected_components, Component};
pub(crate) use components::label_components;
pub use mask::{BinaryMask, RunBuilder};
pub use render::{palette_color, render_labels};
pub use rslm::{read_rslm, write_rslm, write_rslm_to, RSLM_MAGIC, RSLM_VERSION};

use thiserror::Error;

use crate::raster::{Rect, RgbImage};

/// Label id reserved for "no segment".
pub const UNLABELED: u32 = 0;

#[derive(Debug, Error)]
pub enum LabelMapError {
    #[error("label map dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("component {comp_w}x{comp_h} does not fit a {map_w}x{map_h} map")]
    ComponentOutOfBounds {
        comp_w: u32,
        comp_h: u32,
        map_w: u32,
        map_h: u32,
    },
    #[error("invalid run-length encoding: {0}")]
    InvalidRle(String),
    #[error("bad magic: expected RSLM")]
    BadMagic,
    #[error("unsupported RSLM version {0}")]
    Version(u16),
    #[error("truncated RSLM payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("{0} trailing bytes after RSLM payload")]
    TrailingBytes(u64),
    #[error("label space exhausted")]
    LabelOverflow,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major raster of segment ids; 0 is unlabeled.
///
/// `next_label` is the smallest id never handed out, so ids are never reused
/// within a run.
#[derive(Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: u32,
    height: u32,
    labels: Vec<u32>,
    next_label: u32,
}

impl std::fmt::Debug for LabelMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LabelMap")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("next_label", &self.next_label)
            .finish_non_exhaustive()
    }
}

impl LabelMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            labels: vec![UNLABELED; width as usize * height as usize],
            next_label: 1,
        }
    }

    pub fn from_labels(width: u32, height: u32, labels: Vec<u32>) -> Result<Self, LabelMapError> {
        if labels.len() != width as usize * height as usize {
            return Err(LabelMapError::DimensionMismatch(format!(
                "{width}x{height} map needs {} labels, got {}",
                width as usize * height as usize,
                labels.len()
            )));
        }
        let max = labels.iter().copied().max().unwrap_or(0);
        let next_label = max.checked_add(1).ok_or(LabelMapError::LabelOverflow)?;
        Ok(Self {
            width,
            height,
            labels,
            next_label,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u32) -> Self {
        let mut labels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                labels.push(f(x, y));
            }
        }
        Self::from_labels(width, height, labels).expect("label space exhausted")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn into_labels(self) -> Vec<u32> {
        self.labels
    }

    pub fn next_label(&self) -> u32 {
        self.next_label
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, label: u32) {
        self.labels[y as usize * self.width as usize + x as usize] = label;
        if label >= self.next_label {
            self.next_label = label.saturating_add(1);
        }
    }

    /// Raises `next_label` so that ids below `floor` are never handed out.
    pub fn reserve_labels_below(&mut self, floor: u32) {
        self.next_label = self.next_label.max(floor);
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [u32] {
        &mut self.labels
    }

    pub fn row(&self, y: u32) -> &[u32] {
        let w = self.width as usize;
        &self.labels[y as usize * w..(y as usize + 1) * w]
    }

    pub fn labeled_count(&self) -> u64 {
        self.labels.iter().filter(|&&l| l != UNLABELED).count() as u64
    }

    pub fn coverage(&self) -> f64 {
        coverage(self)
    }

    /// Number of distinct nonzero labels present.
    pub fn segment_count(&self) -> usize {
        let mut seen: Vec<u32> = Vec::new();
        let mut last = UNLABELED;
        for &l in &self.labels {
            if l != UNLABELED && l != last {
                seen.push(l);
                last = l;
            }
        }
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    pub fn crop(&self, rect: Rect) -> LabelMap {
        let mut labels = Vec::with_capacity(rect.area() as usize);
        for y in rect.y..rect.bottom() {
            let row = self.row(y);
            labels.extend_from_slice(&row[rect.x as usize..rect.right() as usize]);
        }
        let mut out = LabelMap::from_labels(rect.w, rect.h, labels).expect("crop dims");
        out.next_label = out.next_label.max(self.next_label);
        out
    }

    /// Binary mask of pixels carrying `label`.
    pub fn mask_of(&self, label: u32) -> BinaryMask {
        let mut b = RunBuilder::new(self.width, self.height);
        for &l in &self.labels {
            b.push(l == label);
        }
        b.finish()
    }

    /// Renumbers segments to `1..=n` in order of first appearance; returns `n`.
    pub fn relabel_sequential(&mut self) -> u32 {
        let mut mapping: std::collections::HashMap<u32, u32> = Default::default();
        let mut last = (UNLABELED, UNLABELED);
        for l in &mut self.labels {
            if *l == UNLABELED {
                continue;
            }
            if *l == last.0 {
                *l = last.1;
                continue;
            }
            let next = mapping.len() as u32 + 1;
            let new = *mapping.entry(*l).or_insert(next);
            last = (*l, new);
            *l = new;
        }
        let n = mapping.len() as u32;
        self.next_label = n + 1;
        n
    }
}

/// Fraction of pixels assigned to any segment.
pub fn coverage(map: &LabelMap) -> f64 {
    if map.labels.is_empty() {
        return 0.0;
    }
    map.labeled_count() as f64 / map.labels.len() as f64
}

/// Copy of `image` with every labeled pixel set to (0, 0, 0).
pub fn paint_black(image: &RgbImage, map: &LabelMap) -> Result<RgbImage, LabelMapError> {
    if (image.width(), image.height()) != map.dims() {
        return Err(LabelMapError::DimensionMismatch(format!(
            "image is {}x{}, label map is {}x{}",
            image.width(),
            image.height(),
            map.width,
            map.height
        )));
    }
    let mut data = image.as_raw().to_vec();
    for (px, &l) in data.chunks_exact_mut(3).zip(&map.labels) {
        if l != UNLABELED {
            px.fill(0);
        }
    }
    Ok(RgbImage::from_raw(image.width(), image.height(), data).expect("same dims"))
}

/// Gives the still-unlabeled pixels of `comp` a fresh label.
///
/// Already-labeled pixels are never overwritten. The fresh id is consumed
/// only when at least one pixel is assigned. Returns the number of pixels
/// newly labeled.
pub fn assign_component(map: &mut LabelMap, comp: &Component) -> Result<u64, LabelMapError> {
    if (comp.mask.width(), comp.mask.height()) != map.dims() {
        return Err(LabelMapError::ComponentOutOfBounds {
            comp_w: comp.mask.width(),
            comp_h: comp.mask.height(),
            map_w: map.width,
            map_h: map.height,
        });
    }
    let label = map.next_label;
    if label == u32::MAX {
        return Err(LabelMapError::LabelOverflow);
    }
    let mut assigned = 0u64;
    for (start, len) in comp.mask.spans() {
        for l in &mut map.labels[start as usize..(start + len) as usize] {
            if *l == UNLABELED {
                *l = label;
                assigned += 1;
            }
        }
    }
    if assigned > 0 {
        map.next_label += 1;
    }
    Ok(assigned)
}

/// Clears every per-label 8-connected component smaller than `min_area`.
/// Returns the number of components removed.
pub fn remove_small(map: &mut LabelMap, min_area: u64) -> usize {
    if min_area == 0 {
        return 0;
    }
    let lc = label_components(map);
    let w = map.width as usize;
    let mut removed = 0;
    for comp in lc.comps.iter().filter(|c| c.area < min_area) {
        for &si in &comp.spans {
            let s = lc.spans[si as usize];
            let base = s.y as usize * w;
            map.labels[base + s.x0 as usize..base + s.x1 as usize].fill(UNLABELED);
        }
        removed += 1;
    }
    removed
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn comp_from_fn(w: u32, h: u32, f: impl FnMut(u32, u32) -> bool) -> Component {
        let mask = BinaryMask::from_fn(w, h, f);
        let mut comps = connected_components(&mask);
        assert_eq!(comps.len(), 1);
        comps.remove(0)
    }

    #[test]
    fn coverage_examples() {
        assert_eq!(coverage(&LabelMap::new(10, 10)), 0.0);
        assert_eq!(coverage(&LabelMap::from_fn(10, 10, |_, _| 3)), 1.0);
        assert_eq!(
            coverage(&LabelMap::from_fn(10, 10, |_, y| u32::from(y < 5))),
            0.5
        );
    }

    #[test]
    fn paint_black_examples() {
        let img = RgbImage::from_fn(4, 4, |x, y| [x as u8 + 1, y as u8 + 1, 9]);
        assert_eq!(paint_black(&img, &LabelMap::new(4, 4)).unwrap(), img);
        let full = paint_black(&img, &LabelMap::from_fn(4, 4, |_, _| 1)).unwrap();
        assert!(full.as_raw().iter().all(|&b| b == 0));

        let checker = LabelMap::from_fn(4, 4, |x, y| (x + y) % 2);
        let painted = paint_black(&img, &checker).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let expected = if (x + y) % 2 == 1 { [0, 0, 0] } else { img.pixel(x, y) };
                assert_eq!(painted.pixel(x, y), expected);
            }
        }
        assert_eq!(paint_black(&painted, &checker).unwrap(), painted);
        assert!(paint_black(&img, &LabelMap::new(3, 4)).is_err());
    }

    #[test]
    fn assign_component_never_overwrites() {
        let mut map = LabelMap::new(10, 10);
        let comp = comp_from_fn(10, 10, |x, y| x < 4 && y < 10);
        assert_eq!(assign_component(&mut map, &comp).unwrap(), 40);
        assert_eq!(map.next_label(), 2);

        // 10 of the next 40 pixels are already labeled.
        let overlapping = comp_from_fn(10, 10, |x, _| (3..7).contains(&x));
        assert_eq!(assign_component(&mut map, &overlapping).unwrap(), 30);
        assert_eq!(map.next_label(), 3);
        assert!((0..10).all(|y| map.get(3, y) == 1));

        // Fully labeled area: nothing assigned, id not consumed.
        let covered = comp_from_fn(10, 10, |x, _| x < 2);
        assert_eq!(assign_component(&mut map, &covered).unwrap(), 0);
        assert_eq!(map.next_label(), 3);

        let wrong = comp_from_fn(5, 5, |_, _| true);
        assert!(assign_component(&mut map, &wrong).is_err());
    }

    #[test]
    fn remove_small_examples() {
        let mut map = LabelMap::from_fn(20, 20, |x, y| u32::from(x < 5 && y < 10));
        let before = map.clone();
        assert_eq!(remove_small(&mut map, 0), 0);
        assert_eq!(map, before);
        assert_eq!(remove_small(&mut map, 100), 1);
        assert_eq!(map.labeled_count(), 0);
    }

    #[test]
    fn remove_small_matches_flood_fill_areas() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let (w, h) = (48usize, 40usize);
            let labels: Vec<u32> = (0..w * h)
                .map(|_| if rng.random_bool(0.3) { 0 } else { rng.random_range(1..5) })
                .collect();
            let map = LabelMap::from_labels(w as u32, h as u32, labels.clone()).unwrap();
            let min_area = rng.random_range(1..12);

            // Oracle: flood fill per label, 8-connectivity.
            let mut expected = labels.clone();
            let mut seen = vec![false; w * h];
            for start in 0..w * h {
                if labels[start] == 0 || seen[start] {
                    continue;
                }
                let l = labels[start];
                let mut comp = vec![];
                let mut stack = vec![start];
                seen[start] = true;
                while let Some(p) = stack.pop() {
                    comp.push(p);
                    let (x, y) = ((p % w) as i64, (p / w) as i64);
                    for dy in -1..=1i64 {
                        for dx in -1..=1i64 {
                            let (nx, ny) = (x + dx, y + dy);
                            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                                continue;
                            }
                            let q = ny as usize * w + nx as usize;
                            if labels[q] == l && !seen[q] {
                                seen[q] = true;
                                stack.push(q);
                            }
                        }
                    }
                }
                if (comp.len() as u64) < min_area {
                    for p in comp {
                        expected[p] = 0;
                    }
                }
            }

            let mut got = map.clone();
            remove_small(&mut got, min_area);
            assert_eq!(got.labels(), &expected[..]);
            assert_eq!(got.next_label(), map.next_label());
        }
    }

    #[test]
    fn relabel_is_first_appearance_order() {
        let mut map = LabelMap::from_labels(4, 1, vec![9, 0, 4, 9]).unwrap();
        assert_eq!(map.relabel_sequential(), 2);
        assert_eq!(map.labels(), &[1, 0, 2, 1]);
        assert_eq!(map.next_label(), 3);
    }

    #[test]
    fn assignment_gain_matches_coverage_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut map = LabelMap::new(32, 32);
        for _ in 0..20 {
            let (cx, cy, r) = (
                rng.random_range(0..32i32),
                rng.random_range(0..32i32),
                rng.random_range(1..8i32),
            );
            let mask = BinaryMask::from_fn(32, 32, |x, y| {
                (x as i32 - cx).abs() <= r && (y as i32 - cy).abs() <= r
            });
            for comp in connected_components(&mask) {
                let before = map.labeled_count();
                let n = assign_component(&mut map, &comp).unwrap();
                assert_eq!(map.labeled_count(), before + n);
            }
        }
    }
}
