//! 8-connected component analysis over run lengths.
//!
//! Both binary masks and label maps are decomposed into horizontal runs;
//! runs in consecutive rows are joined when they are 8-adjacent (and, for
//! label maps, carry the same label). Work is proportional to the number of
//! runs rather than the number of pixels.

use crate::raster::Rect;

use super::mask::BinaryMask;
use super::{LabelMap, UNLABELED};

/// One maximal 8-connected foreground region of a mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub mask: BinaryMask,
    pub area: u64,
    pub bbox: Rect,
}

/// Horizontal run `[x0, x1)` on row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Span {
    pub y: u32,
    pub x0: u32,
    pub x1: u32,
    pub label: u32,
}

struct Dsu {
    parent: Vec<u32>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        // Lower index becomes the root so the root is the first run in scan order.
        match ra.cmp(&rb) {
            std::cmp::Ordering::Less => self.parent[rb as usize] = ra,
            std::cmp::Ordering::Greater => self.parent[ra as usize] = rb,
            std::cmp::Ordering::Equal => {}
        }
    }
}

/// Groups row-major spans into 8-connected components of equal label.
///
/// Returns, for every span, the index of its component; components are
/// numbered in order of their first span.
pub(crate) fn label_spans(spans: &[Span]) -> (Vec<u32>, usize) {
    let mut dsu = Dsu::new(spans.len());
    let mut prev_row: (usize, usize) = (0, 0);
    let mut i = 0;
    while i < spans.len() {
        let y = spans[i].y;
        let mut j = i;
        while j < spans.len() && spans[j].y == y {
            j += 1;
        }
        if prev_row.1 > prev_row.0 && spans[prev_row.0].y + 1 == y {
            let mut p = prev_row.0;
            for c in i..j {
                let cur = spans[c];
                while p < prev_row.1 && spans[p].x1 < cur.x0 {
                    p += 1;
                }
                let mut q = p;
                while q < prev_row.1 && spans[q].x0 <= cur.x1 {
                    if spans[q].label == cur.label {
                        dsu.union(q as u32, c as u32);
                    }
                    q += 1;
                }
            }
        }
        prev_row = (i, j);
        i = j;
    }

    let mut comp_of_root = vec![u32::MAX; spans.len()];
    let mut comp_of_span = Vec::with_capacity(spans.len());
    let mut count = 0usize;
    for s in 0..spans.len() {
        let root = dsu.find(s as u32) as usize;
        if comp_of_root[root] == u32::MAX {
            comp_of_root[root] = count as u32;
            count += 1;
        }
        comp_of_span.push(comp_of_root[root]);
    }
    (comp_of_span, count)
}

/// Maximal 8-connected foreground regions, ordered by their first pixel in
/// row-major scan order.
pub fn connected_components(mask: &BinaryMask) -> Vec<Component> {
    let spans: Vec<Span> = mask
        .row_spans()
        .map(|(y, x0, x1)| Span { y, x0, x1, label: 1 })
        .collect();
    let (comp_of_span, count) = label_spans(&spans);
    let mut grouped: Vec<Vec<Span>> = vec![Vec::new(); count];
    for (span, &c) in spans.iter().zip(&comp_of_span) {
        grouped[c as usize].push(*span);
    }
    grouped
        .into_iter()
        .map(|group| {
            let area = group.iter().map(|s| (s.x1 - s.x0) as u64).sum();
            let (mut x0, mut x1) = (u32::MAX, 0);
            for s in &group {
                x0 = x0.min(s.x0);
                x1 = x1.max(s.x1);
            }
            let y0 = group.first().unwrap().y;
            let y1 = group.last().unwrap().y;
            let mask = BinaryMask::from_row_spans(
                mask.width(),
                mask.height(),
                group.iter().map(|s| (s.y, s.x0, s.x1)),
            );
            Component {
                mask,
                area,
                bbox: Rect::new(x0, y0, x1 - x0, y1 - y0 + 1),
            }
        })
        .collect()
}

/// Per-label 8-connected components of a label map, as run lists.
pub(crate) struct LabelComponents {
    pub spans: Vec<Span>,
    pub comps: Vec<LabelComponent>,
}

#[derive(Debug, Clone)]
pub(crate) struct LabelComponent {
    pub label: u32,
    pub area: u64,
    /// Indices into `spans`, in row-major order.
    pub spans: Vec<u32>,
}

pub(crate) fn map_spans(map: &LabelMap) -> Vec<Span> {
    let w = map.width() as usize;
    let mut spans = Vec::new();
    for (y, row) in map.labels().chunks_exact(w.max(1)).enumerate() {
        let mut x = 0;
        while x < row.len() {
            let label = row[x];
            let start = x;
            while x < row.len() && row[x] == label {
                x += 1;
            }
            if label != UNLABELED {
                spans.push(Span {
                    y: y as u32,
                    x0: start as u32,
                    x1: x as u32,
                    label,
                });
            }
        }
    }
    spans
}

pub(crate) fn label_components(map: &LabelMap) -> LabelComponents {
    let spans = map_spans(map);
    let (comp_of_span, count) = label_spans(&spans);
    let mut comps: Vec<LabelComponent> = vec![
        LabelComponent {
            label: 0,
            area: 0,
            spans: Vec::new(),
        };
        count
    ];
    for (i, (span, &c)) in spans.iter().zip(&comp_of_span).enumerate() {
        let comp = &mut comps[c as usize];
        comp.label = span.label;
        comp.area += (span.x1 - span.x0) as u64;
        comp.spans.push(i as u32);
    }
    LabelComponents {
        spans,
        comps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Flood fill with an explicit stack, 8-connectivity.
    fn flood_fill_partition(w: usize, h: usize, bits: &[bool]) -> Vec<Vec<usize>> {
        let mut seen = vec![false; bits.len()];
        let mut out = Vec::new();
        for start in 0..bits.len() {
            if !bits[start] || seen[start] {
                continue;
            }
            let mut comp = Vec::new();
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(p) = stack.pop() {
                comp.push(p);
                let (x, y) = ((p % w) as i64, (p / w) as i64);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let q = ny as usize * w + nx as usize;
                        if bits[q] && !seen[q] {
                            seen[q] = true;
                            stack.push(q);
                        }
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    #[test]
    fn empty_mask_has_no_components() {
        assert!(connected_components(&BinaryMask::empty(5, 5)).is_empty());
    }

    #[test]
    fn diagonal_pixels_are_connected() {
        let m = BinaryMask::from_fn(4, 4, |x, y| (x, y) == (1, 1) || (x, y) == (2, 2));
        let comps = connected_components(&m);
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].area, 2);
        assert_eq!(comps[0].bbox, Rect::new(1, 1, 2, 2));
    }

    #[test]
    fn matches_flood_fill_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let density: f64 = rng.random_range(0.2..0.7);
            let bits: Vec<bool> = (0..64 * 64).map(|_| rng.random_bool(density)).collect();
            let mask = BinaryMask::from_bits(64, 64, &bits);
            let expected = flood_fill_partition(64, 64, &bits);
            let got: Vec<Vec<usize>> = connected_components(&mask)
                .iter()
                .map(|c| {
                    c.mask
                        .to_bits()
                        .iter()
                        .enumerate()
                        .filter_map(|(i, b)| b.then_some(i))
                        .collect()
                })
                .collect();
            // Flood fill discovers components in first-pixel order as well.
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn touching_label_runs_join_only_with_equal_labels() {
        // Row 0: [1 1 2 2], row 1: [2 2 1 1]. Diagonal contacts join 1-1 and 2-2.
        let map = LabelMap::from_labels(4, 2, vec![1, 1, 2, 2, 2, 2, 1, 1]).unwrap();
        let lc = label_components(&map);
        assert_eq!(lc.comps.len(), 2);
        assert!(lc.comps.iter().all(|c| c.area == 4));
    }
}
