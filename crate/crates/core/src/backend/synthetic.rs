//! Seeded synthetic scenes and a backend that proposes their ground-truth regions.
//!
//! A scene is a Voronoi partition of "stuff" regions with non-overlapping
//! objects (rectangles, discs, Voronoi-cell polygons) laid on top, so every
//! pixel carries a ground-truth id. Every id gets a (predicted IoU, stability)
//! quality pair; the backend proposes a region only when both scores clear
//! the request thresholds, a prompt lands on a visible pixel of it, and at
//! least a quarter of its in-tile pixels are still visible (not painted black).

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::labelmap::{label_components, BinaryMask, LabelMap, UNLABELED};
use crate::raster::{RasterError, RasterSource, Rect, RgbImage};

use super::{BackendError, MaskProposal, ProposalBackend, ProposalRequest};

pub const STUFF_CLASS: u32 = 4;

const PLACEMENT_RETRIES: usize = 2_000;
/// Stuff regions smaller than this are folded into a neighbour.
const MIN_STUFF_AREA: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rect,
    Disc,
    Polygon,
    Stuff,
}

impl ShapeKind {
    pub fn class_id(self) -> u32 {
        match self {
            ShapeKind::Rect => 1,
            ShapeKind::Disc => 2,
            ShapeKind::Polygon => 3,
            ShapeKind::Stuff => STUFF_CLASS,
        }
    }

    pub fn class_name(self) -> &'static str {
        match self {
            ShapeKind::Rect => "rect",
            ShapeKind::Disc => "disc",
            ShapeKind::Polygon => "polygon",
            ShapeKind::Stuff => "stuff",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub n_objects: u32,
    /// Inclusive range both quality scores are drawn from, independently.
    pub quality_range: (f64, f64),
    /// Mean area of one background Voronoi region, in pixels.
    pub stuff_cell_area: u64,
    /// Nominal object radius range in pixels.
    pub object_radius: (u32, u32),
    /// Minimum gap kept between object bounding boxes.
    pub min_gap: u32,
}

impl SceneParams {
    pub fn new(seed: u64, width: u32, height: u32, n_objects: u32, quality_range: (f64, f64)) -> Self {
        Self {
            seed,
            width,
            height,
            n_objects,
            quality_range,
            stuff_cell_area: 90_000,
            object_radius: (36, 80),
            min_gap: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub label: u32,
    pub kind: ShapeKind,
    /// (predicted IoU, stability)
    pub quality: (f64, f64),
    pub color: [u8; 3],
    /// Tight bounding box of the rendered region; `None` if fully covered by objects.
    pub bbox: Option<Rect>,
    pub area: u64,
}

impl SceneObject {
    /// The lower of the two scores; the region is proposed once both thresholds reach it.
    pub fn effective_quality(&self) -> f64 {
        self.quality.0.min(self.quality.1)
    }
}

/// A rendered synthetic scene. The RGB image is produced on demand from the
/// ground truth, so very large scenes never hold a full-resolution image.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    params: SceneParams,
    gt: LabelMap,
    objects: Vec<SceneObject>,
}

enum Shape {
    Rect(Rect),
    Disc { cx: f64, cy: f64, r: f64 },
    Cell { cx: f64, cy: f64, sites: Vec<(f64, f64)>, bound: f64 },
}

impl Shape {
    fn contains(&self, x: u32, y: u32) -> bool {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        match self {
            Shape::Rect(r) => r.contains(x, y),
            Shape::Disc { cx, cy, r } => (px - cx).powi(2) + (py - cy).powi(2) <= r * r,
            Shape::Cell { cx, cy, sites, bound } => {
                let d_center = (px - cx).powi(2) + (py - cy).powi(2);
                d_center <= bound * bound
                    && sites
                        .iter()
                        .all(|(sx, sy)| d_center <= (px - sx).powi(2) + (py - sy).powi(2))
            }
        }
    }
}

struct VoronoiIndex {
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<u32>>,
    sites: Vec<(f64, f64)>,
}

impl VoronoiIndex {
    fn new(sites: Vec<(f64, f64)>, width: u32, height: u32, cell: f64) -> Self {
        let cols = (width as f64 / cell).ceil().max(1.0) as usize;
        let rows = (height as f64 / cell).ceil().max(1.0) as usize;
        let mut buckets = vec![Vec::new(); cols * rows];
        for (i, &(x, y)) in sites.iter().enumerate() {
            let c = ((x / cell) as usize).min(cols - 1);
            let r = ((y / cell) as usize).min(rows - 1);
            buckets[r * cols + c].push(i as u32);
        }
        Self {
            cell,
            cols,
            rows,
            buckets,
            sites,
        }
    }

    /// Index of the nearest site to the pixel centre; ties go to the lower index.
    fn nearest(&self, x: u32, y: u32) -> u32 {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let bc = ((px / self.cell) as usize).min(self.cols - 1) as i64;
        let br = ((py / self.cell) as usize).min(self.rows - 1) as i64;
        let mut best = (f64::INFINITY, u32::MAX);
        let max_ring = self.cols.max(self.rows) as i64;
        for ring in 0..=max_ring {
            for r in (br - ring)..=(br + ring) {
                if r < 0 || r >= self.rows as i64 {
                    continue;
                }
                for c in (bc - ring)..=(bc + ring) {
                    if c < 0 || c >= self.cols as i64 {
                        continue;
                    }
                    if (r - br).abs() != ring && (c - bc).abs() != ring {
                        continue;
                    }
                    for &i in &self.buckets[r as usize * self.cols + c as usize] {
                        let (sx, sy) = self.sites[i as usize];
                        let d = (px - sx).powi(2) + (py - sy).powi(2);
                        if d < best.0 || (d == best.0 && i < best.1) {
                            best = (d, i);
                        }
                    }
                }
            }
            // Anything in the next ring is at least `ring * cell` away.
            if best.1 != u32::MAX && best.0.sqrt() <= ring as f64 * self.cell {
                break;
            }
        }
        best.1
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn draw_quality(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("invalid scene parameters: {0}")]
    InvalidParams(String),
    #[error("could not place object {index} of {requested} after {PLACEMENT_RETRIES} attempts")]
    PlacementFailed { index: u32, requested: u32 },
}

/// Generates a scene; identical parameters give bit-identical scenes.
pub fn synth_scene(params: &SceneParams) -> Result<SyntheticScene, SceneError> {
    let SceneParams {
        seed,
        width,
        height,
        n_objects,
        quality_range,
        stuff_cell_area,
        object_radius,
        min_gap,
    } = params.clone();
    if n_objects == 0 {
        return Err(SceneError::InvalidParams("n_objects must be at least 1".into()));
    }
    if width == 0 || height == 0 {
        return Err(SceneError::InvalidParams("scene dimensions must be positive".into()));
    }
    let (qlo, qhi) = quality_range;
    if !(0.0..=1.0).contains(&qlo) || !(0.0..=1.0).contains(&qhi) || qlo > qhi {
        return Err(SceneError::InvalidParams(format!(
            "quality range [{qlo}, {qhi}] must lie within [0, 1]"
        )));
    }
    if object_radius.0 == 0 || object_radius.0 > object_radius.1 {
        return Err(SceneError::InvalidParams("bad object radius range".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rmin, rmax) = (object_radius.0 as f64, object_radius.1 as f64);

    // Objects first: shape, extent and a gap-respecting position.
    let mut shapes: Vec<(ShapeKind, Shape, Rect)> = Vec::new();
    for index in 0..n_objects {
        let mut placed = false;
        for _ in 0..PLACEMENT_RETRIES {
            let kind = match rng.random_range(0..3u32) {
                0 => ShapeKind::Rect,
                1 => ShapeKind::Disc,
                _ => ShapeKind::Polygon,
            };
            let (half_w, half_h) = match kind {
                ShapeKind::Rect => (
                    rng.random_range((0.9 * rmin)..=rmax),
                    rng.random_range((0.9 * rmin)..=rmax),
                ),
                ShapeKind::Disc => {
                    let r = rng.random_range((rmin + 2.0).min(rmax)..=rmax);
                    (r, r)
                }
                _ => {
                    let r = rng.random_range((rmin + 8.0).min(rmax)..=rmax);
                    (1.4 * r, r)
                }
            };
            let ext = half_w.max(half_h).ceil() as u32 + 1;
            if 2 * ext >= width || 2 * ext >= height {
                continue;
            }
            let cx = rng.random_range(ext..width - ext) as f64;
            let cy = rng.random_range(ext..height - ext) as f64;
            let shape = match kind {
                ShapeKind::Rect => {
                    let (w, h) = ((2.0 * half_w) as u32, (2.0 * half_h) as u32);
                    Shape::Rect(Rect::new(cx as u32 - w / 2, cy as u32 - h / 2, w, h))
                }
                ShapeKind::Disc => Shape::Disc { cx, cy, r: half_w },
                _ => {
                    let r = half_h;
                    let n = rng.random_range(5..=8u32);
                    let step = std::f64::consts::TAU / n as f64;
                    let phase = rng.random_range(0.0..step);
                    let sites = (0..n)
                        .map(|k| {
                            let a = phase + k as f64 * step + rng.random_range(-0.3..0.3) * step;
                            let d = 2.0 * r * rng.random_range(0.9..1.1);
                            (cx + d * a.cos(), cy + d * a.sin())
                        })
                        .collect();
                    Shape::Cell {
                        cx,
                        cy,
                        sites,
                        bound: 1.4 * r,
                    }
                }
            };
            let bbox = Rect::new(cx as u32 - ext, cy as u32 - ext, 2 * ext, 2 * ext);
            let grown = Rect::new(
                bbox.x.saturating_sub(min_gap),
                bbox.y.saturating_sub(min_gap),
                bbox.w + 2 * min_gap,
                bbox.h + 2 * min_gap,
            );
            if shapes.iter().any(|(_, _, b)| grown.intersect(b).is_some()) {
                continue;
            }
            shapes.push((kind, shape, bbox));
            placed = true;
            break;
        }
        if !placed {
            return Err(SceneError::PlacementFailed {
                index,
                requested: n_objects,
            });
        }
    }

    // Background partition.
    let n_stuff = ((width as u64 * height as u64) as f64 / stuff_cell_area.max(1) as f64)
        .round()
        .max(1.0) as u32;
    let sites: Vec<(f64, f64)> = (0..n_stuff)
        .map(|_| {
            (
                rng.random_range(0.0..width as f64),
                rng.random_range(0.0..height as f64),
            )
        })
        .collect();
    let voronoi = VoronoiIndex::new(sites, width, height, (stuff_cell_area as f64).sqrt());
    let stuff_base = n_objects + 1;
    let mut gt = LabelMap::from_fn(width, height, |x, y| stuff_base + voronoi.nearest(x, y));
    for (i, (_, shape, bbox)) in shapes.iter().enumerate() {
        let label = i as u32 + 1;
        for y in bbox.y..bbox.bottom().min(height) {
            for x in bbox.x..bbox.right().min(width) {
                if shape.contains(x, y) {
                    gt.set(x, y, label);
                }
            }
        }
    }

    consolidate_stuff(&mut gt, stuff_base);

    // Per-label quality, colour and extent.
    let total = n_objects + n_stuff;
    let mut objects: Vec<SceneObject> = (1..=total)
        .map(|label| {
            let kind = if label <= n_objects {
                shapes[label as usize - 1].0
            } else {
                ShapeKind::Stuff
            };
            let quality = (
                draw_quality(&mut rng, quality_range),
                draw_quality(&mut rng, quality_range),
            );
            let color = random_color(&mut rng, kind);
            SceneObject {
                label,
                kind,
                quality,
                color,
                bbox: None,
                area: 0,
            }
        })
        .collect();
    fill_extents(&gt, &mut objects);

    Ok(SyntheticScene {
        params: params.clone(),
        gt,
        objects,
    })
}

fn fill_extents(gt: &LabelMap, objects: &mut [SceneObject]) {
    let mut extents: Vec<Option<(u32, u32, u32, u32)>> = vec![None; objects.len()];
    for y in 0..gt.height() {
        for (x, &l) in gt.row(y).iter().enumerate() {
            let x = x as u32;
            objects[l as usize - 1].area += 1;
            let e = extents[l as usize - 1].get_or_insert((x, y, x, y));
            e.0 = e.0.min(x);
            e.1 = e.1.min(y);
            e.2 = e.2.max(x);
            e.3 = e.3.max(y);
        }
    }
    for (obj, e) in objects.iter_mut().zip(extents) {
        obj.bbox = e.map(|(x0, y0, x1, y1)| Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1));
    }
}

fn random_color(rng: &mut ChaCha8Rng, kind: ShapeKind) -> [u8; 3] {
    if kind == ShapeKind::Stuff {
        [
            rng.random_range(60..150u8),
            rng.random_range(70..160u8),
            rng.random_range(40..120u8),
        ]
    } else {
        [
            rng.random_range(24..232u8),
            rng.random_range(24..232u8),
            rng.random_range(24..232u8),
        ]
    }
}

/// Leaves every stuff label as one 8-connected region of at least
/// `MIN_STUFF_AREA` pixels where possible. Stray fragments (cells cut apart by
/// objects) and slivers go to the stuff neighbour with the most 4-contacts.
fn consolidate_stuff(gt: &mut LabelMap, stuff_base: u32) {
    let (w, h) = gt.dims();
    loop {
        let lc = label_components(gt);
        let mut largest: BTreeMap<u32, (u64, usize)> = BTreeMap::new();
        for (ci, c) in lc.comps.iter().enumerate() {
            let e = largest.entry(c.label).or_insert((c.area, ci));
            if c.area > e.0 {
                *e = (c.area, ci);
            }
        }
        let mut changed = false;
        for (ci, comp) in lc.comps.iter().enumerate() {
            if comp.label < stuff_base || (largest[&comp.label].1 == ci && comp.area >= MIN_STUFF_AREA) {
                continue;
            }
            let mut contacts: BTreeMap<u32, u64> = BTreeMap::new();
            let mut touch = |l: u32| {
                if l >= stuff_base && l != comp.label {
                    *contacts.entry(l).or_insert(0) += 1;
                }
            };
            for &si in &comp.spans {
                let s = lc.spans[si as usize];
                if s.x0 > 0 {
                    touch(gt.get(s.x0 - 1, s.y));
                }
                if s.x1 < w {
                    touch(gt.get(s.x1, s.y));
                }
                for ny in [s.y.checked_sub(1), Some(s.y + 1).filter(|&y| y < h)].into_iter().flatten() {
                    for &l in &gt.row(ny)[s.x0 as usize..s.x1 as usize] {
                        touch(l);
                    }
                }
            }
            // Largest contact, lowest label on ties.
            let Some((&host, _)) = contacts.iter().rev().max_by_key(|(_, &n)| n) else {
                continue;
            };
            for &si in &comp.spans {
                let s = lc.spans[si as usize];
                for x in s.x0..s.x1 {
                    gt.set(x, s.y, host);
                }
            }
            changed = true;
        }
        if !changed {
            return;
        }
    }
}

impl SyntheticScene {
    /// A scene with a hand-made layout. Region `i` of `regions` is gt label
    /// `i + 1` with the given kind and quality pair; every pixel of `gt` must
    /// carry one of those labels. Colours are drawn from `seed`.
    pub fn from_layout(
        seed: u64,
        gt: LabelMap,
        regions: &[(ShapeKind, (f64, f64))],
    ) -> Result<Self, SceneError> {
        let n = regions.len() as u32;
        if let Some(&bad) = gt.labels().iter().find(|&&l| l == UNLABELED || l > n) {
            return Err(SceneError::InvalidParams(format!(
                "layout label {bad} is outside 1..={n}"
            )));
        }
        for &(_, (qi, qs)) in regions {
            if !(0.0..=1.0).contains(&qi) || !(0.0..=1.0).contains(&qs) {
                return Err(SceneError::InvalidParams(format!(
                    "quality ({qi}, {qs}) must lie within [0, 1]"
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut objects: Vec<SceneObject> = regions
            .iter()
            .zip(1..)
            .map(|(&(kind, quality), label)| SceneObject {
                label,
                kind,
                quality,
                color: random_color(&mut rng, kind),
                bbox: None,
                area: 0,
            })
            .collect();
        fill_extents(&gt, &mut objects);
        let qs = regions.iter().flat_map(|r| [r.1 .0, r.1 .1]);
        let lo = qs.clone().fold(1.0, f64::min);
        let hi = qs.fold(0.0, f64::max);
        let (width, height) = gt.dims();
        let n_objects = regions.iter().filter(|r| r.0 != ShapeKind::Stuff).count() as u32;
        Ok(Self {
            params: SceneParams::new(seed, width, height, n_objects, (lo, hi.max(lo))),
            gt,
            objects,
        })
    }

    pub fn params(&self) -> &SceneParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.params.seed
    }

    pub fn dims(&self) -> (u32, u32) {
        self.gt.dims()
    }

    pub fn gt(&self) -> &LabelMap {
        &self.gt
    }

    pub fn into_gt(self) -> LabelMap {
        self.gt
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn object(&self, label: u32) -> Option<&SceneObject> {
        label
            .checked_sub(1)
            .and_then(|i| self.objects.get(i as usize))
    }

    /// gt id -> class id, for ids that are present in the map.
    pub fn object_class(&self) -> BTreeMap<u32, u32> {
        self.objects
            .iter()
            .filter(|o| o.area > 0)
            .map(|o| (o.label, o.kind.class_id()))
            .collect()
    }

    pub fn class_names() -> BTreeMap<u32, String> {
        [ShapeKind::Rect, ShapeKind::Disc, ShapeKind::Polygon, ShapeKind::Stuff]
            .into_iter()
            .map(|k| (k.class_id(), k.class_name().to_string()))
            .collect()
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let label = self.gt.get(x, y);
        let base = self.objects[label as usize - 1].color;
        let h = splitmix(self.params.seed ^ ((y as u64) << 32 | x as u64));
        let mut out = [0u8; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let noise = ((h >> (c * 8)) & 0x1f) as i16 - 16;
            *o = (base[c] as i16 + noise).clamp(8, 247) as u8;
        }
        out
    }

    pub fn image(&self) -> RgbImage {
        let (w, h) = self.dims();
        RgbImage::from_fn(w, h, |x, y| self.pixel(x, y))
    }
}

impl RasterSource for SyntheticScene {
    fn dims(&self) -> (u32, u32) {
        self.gt.dims()
    }

    fn read_window(&self, rect: Rect) -> Result<RgbImage, RasterError> {
        let (w, h) = self.gt.dims();
        if !Rect::new(0, 0, w, h).contains_rect(&rect) {
            return Err(RasterError::WindowOutOfBounds(rect));
        }
        Ok(RgbImage::from_fn(rect.w, rect.h, |x, y| {
            self.pixel(rect.x + x, rect.y + y)
        }))
    }
}

/// Backend that answers from a scene's ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    scene: Arc<SyntheticScene>,
    honor_black: bool,
    jitter: u32,
}

impl SyntheticBackend {
    pub fn new(scene: Arc<SyntheticScene>) -> Self {
        Self {
            scene,
            honor_black: true,
            jitter: 0,
        }
    }

    /// When false, painted pixels count as visible: black masking has no effect.
    pub fn with_black_masking(mut self, honor_black: bool) -> Self {
        self.honor_black = honor_black;
        self
    }

    /// Erodes or dilates each proposal by a seeded 1..=`max_px` pixels (capped at 2).
    pub fn with_jitter(mut self, max_px: u32) -> Self {
        self.jitter = max_px.min(2);
        self
    }

    pub fn scene(&self) -> &Arc<SyntheticScene> {
        &self.scene
    }

    fn jitter_mask(&self, label: u32, bits: &mut [bool], w: usize, h: usize) {
        let r = self.jitter as i64;
        if r == 0 {
            return;
        }
        let hsh = splitmix(self.scene.seed() ^ (label as u64).wrapping_mul(0x2545_F491_4F6C_DD1D));
        let radius = 1 + (hsh % r as u64) as i64;
        let dilate = (hsh >> 8) & 1 == 1;
        let src = bits.to_vec();
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut any = false;
                let mut all = true;
                for dy in -radius..=radius {
                    for dx in -radius..=radius {
                        let (nx, ny) = (x + dx, y + dy);
                        let v = nx >= 0
                            && ny >= 0
                            && nx < w as i64
                            && ny < h as i64
                            && src[ny as usize * w + nx as usize];
                        any |= v;
                        all &= v;
                    }
                }
                bits[y as usize * w + x as usize] = if dilate { any } else { all };
            }
        }
    }
}

impl ProposalBackend for SyntheticBackend {
    fn generate(&self, req: &ProposalRequest<'_>) -> Result<Vec<MaskProposal>, BackendError> {
        req.validate()?;
        let (sw, sh) = self.scene.dims();
        let (tw, th) = (req.tile.width(), req.tile.height());
        let window = Rect::new(req.origin.0, req.origin.1, tw, th);
        if !Rect::new(0, 0, sw, sh).contains_rect(&window) {
            return Err(BackendError::OutsideScene {
                origin: req.origin,
                width: tw,
                height: th,
                scene_w: sw,
                scene_h: sh,
            });
        }
        let gt = self.scene.gt();
        let visible = |x: u32, y: u32| !self.honor_black || !req.tile.is_black(x, y);

        let candidates: BTreeSet<u32> = req
            .points
            .iter()
            .filter(|p| visible(p.x, p.y))
            .map(|p| gt.get(window.x + p.x, window.y + p.y))
            .filter(|&l| l != UNLABELED)
            .collect();

        let mut out = Vec::new();
        for label in candidates {
            let Some(obj) = self.scene.object(label) else {
                continue;
            };
            if obj.quality.0 < req.tau_iou || obj.quality.1 < req.tau_stab {
                continue;
            }
            let Some(region) = obj.bbox.and_then(|b| b.intersect(&window)) else {
                continue;
            };
            let mut total = 0u64;
            let mut spans = Vec::new();
            for gy in region.y..region.bottom() {
                let row = gt.row(gy);
                let ty = gy - window.y;
                let mut run_start: Option<u32> = None;
                for gx in region.x..region.right() {
                    let tx = gx - window.x;
                    let on = if row[gx as usize] == label {
                        total += 1;
                        visible(tx, ty)
                    } else {
                        false
                    };
                    match (on, run_start) {
                        (true, None) => run_start = Some(tx),
                        (false, Some(s)) => {
                            spans.push((ty, s, tx));
                            run_start = None;
                        }
                        _ => {}
                    }
                }
                if let Some(s) = run_start {
                    spans.push((ty, s, region.right() - window.x));
                }
            }
            let visible_count: u64 = spans.iter().map(|&(_, a, b)| (b - a) as u64).sum();
            if visible_count == 0 || visible_count * 4 < total {
                continue;
            }
            let mut mask = BinaryMask::from_row_spans(tw, th, spans);
            if self.jitter > 0 {
                let mut bits = mask.to_bits();
                self.jitter_mask(label, &mut bits, tw as usize, th as usize);
                if self.honor_black {
                    for (i, b) in bits.iter_mut().enumerate() {
                        *b &= !req.tile.is_black(i as u32 % tw, i as u32 / tw);
                    }
                }
                mask = BinaryMask::from_bits(tw, th, &bits);
                if mask.is_empty() {
                    continue;
                }
            }
            out.push(MaskProposal {
                mask,
                pred_iou: obj.quality.0,
                stability: obj.quality.1,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::PromptPoint;

    /// 40x20 scene: label 1 = left half, label 2 = right half.
    fn two_region_scene(q1: f64, q2: f64) -> Arc<SyntheticScene> {
        let gt = LabelMap::from_fn(40, 20, |x, _| if x < 20 { 1 } else { 2 });
        let mk = |label, q: f64, x| SceneObject {
            label,
            kind: ShapeKind::Rect,
            quality: (q, q),
            color: [100, 120, 140],
            bbox: Some(Rect::new(x, 0, 20, 20)),
            area: 400,
        };
        Arc::new(SyntheticScene {
            params: SceneParams::new(1, 40, 20, 2, (q1.min(q2), q1.max(q2))),
            gt,
            objects: vec![mk(1, q1, 0), mk(2, q2, 20)],
        })
    }

    fn request<'a>(
        tile: &'a RgbImage,
        origin: (u32, u32),
        points: &'a [PromptPoint],
        tau: f64,
    ) -> ProposalRequest<'a> {
        ProposalRequest {
            tile,
            origin,
            points,
            tau_iou: tau,
            tau_stab: tau,
        }
    }

    #[test]
    fn zero_points_give_nothing() {
        let scene = two_region_scene(0.95, 0.95);
        let img = scene.image();
        let b = SyntheticBackend::new(scene);
        assert!(b.generate(&request(&img, (0, 0), &[], 0.5)).unwrap().is_empty());
    }

    #[test]
    fn threshold_filter() {
        let scene = two_region_scene(0.95, 0.80);
        let img = scene.image();
        let b = SyntheticBackend::new(scene.clone());
        let pts = [PromptPoint::new(5, 5)];
        let got = b.generate(&request(&img, (0, 0), &pts, 0.93)).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].mask, scene.gt().mask_of(1));
        assert_eq!((got[0].pred_iou, got[0].stability), (0.95, 0.95));
        assert!(b.generate(&request(&img, (0, 0), &pts, 0.96)).unwrap().is_empty());

        let pts2 = [PromptPoint::new(30, 5)];
        assert!(b.generate(&request(&img, (0, 0), &pts2, 0.81)).unwrap().is_empty());
        assert_eq!(b.generate(&request(&img, (0, 0), &pts2, 0.79)).unwrap().len(), 1);
    }

    #[test]
    fn fully_black_object_is_not_proposed() {
        let scene = two_region_scene(1.0, 1.0);
        let mut img = scene.image();
        for y in 0..20 {
            for x in 0..20 {
                img.put_pixel(x, y, [0, 0, 0]);
            }
        }
        let b = SyntheticBackend::new(scene);
        let pts = [PromptPoint::new(5, 5)];
        assert!(b.generate(&request(&img, (0, 0), &pts, 0.9)).unwrap().is_empty());
        // Without black masking the painted object is proposed again.
        let b = b.with_black_masking(false);
        assert_eq!(b.generate(&request(&img, (0, 0), &pts, 0.9)).unwrap().len(), 1);
    }

    #[test]
    fn mostly_erased_object_falls_below_visibility_floor() {
        let scene = two_region_scene(1.0, 1.0);
        let mut img = scene.image();
        // Erase 16 of 20 columns of object 1: 20% visible.
        for y in 0..20 {
            for x in 0..16 {
                img.put_pixel(x, y, [0, 0, 0]);
            }
        }
        let b = SyntheticBackend::new(scene.clone());
        let pts = [PromptPoint::new(18, 5)];
        assert!(b.generate(&request(&img, (0, 0), &pts, 0.9)).unwrap().is_empty());
        // Erase 15 of 20 columns: exactly 25% visible, proposal covers the visible part.
        let mut img = scene.image();
        for y in 0..20 {
            for x in 0..15 {
                img.put_pixel(x, y, [0, 0, 0]);
            }
        }
        let got = b.generate(&request(&img, (0, 0), &pts, 0.9)).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].mask.area(), 100);
    }

    #[test]
    fn straddling_object_is_clipped_to_tile() {
        let scene = two_region_scene(1.0, 1.0);
        // Window starting at x = 8: 12 columns (60%) of object 1 are inside.
        let window = Rect::new(8, 0, 20, 20);
        let tile = scene.read_window(window).unwrap();
        let b = SyntheticBackend::new(scene.clone());
        let pts = [PromptPoint::new(2, 2)];
        let got = b.generate(&request(&tile, (8, 0), &pts, 0.9)).unwrap();
        assert_eq!(got.len(), 1);
        let expected = BinaryMask::from_fn(20, 20, |x, _| x < 12);
        assert_eq!(got[0].mask, expected);
    }

    #[test]
    fn outside_scene_is_an_error() {
        let scene = two_region_scene(1.0, 1.0);
        let tile = RgbImage::new(20, 20);
        let b = SyntheticBackend::new(scene);
        let pts = [PromptPoint::new(0, 0)];
        assert!(matches!(
            b.generate(&request(&tile, (30, 0), &pts, 0.5)),
            Err(BackendError::OutsideScene { .. })
        ));
    }

    #[test]
    fn scenes_are_deterministic_and_fully_labeled() {
        let p = SceneParams::new(42, 400, 300, 4, (0.6, 0.9));
        let a = synth_scene(&p).unwrap();
        let b = synth_scene(&p).unwrap();
        assert_eq!(a.gt(), b.gt());
        assert_eq!(a.image(), b.image());
        assert_eq!(a.objects(), b.objects());
        assert_eq!(a.gt().coverage(), 1.0);
        assert_eq!(a.objects().iter().filter(|o| o.kind != ShapeKind::Stuff).count(), 4);
        for o in a.objects() {
            assert!((0.6..=0.9).contains(&o.quality.0) && (0.6..=0.9).contains(&o.quality.1));
        }
        let c = synth_scene(&SceneParams { seed: 43, ..p }).unwrap();
        assert_ne!(a.gt(), c.gt());
    }

    #[test]
    fn every_instance_is_one_region() {
        let s = synth_scene(&SceneParams::new(42, 1024, 1024, 15, (0.6, 0.9))).unwrap();
        let lc = label_components(s.gt());
        let mut seen = BTreeSet::new();
        for c in &lc.comps {
            assert!(seen.insert(c.label), "label {} is split", c.label);
        }
        for o in s.objects().iter().filter(|o| o.kind == ShapeKind::Stuff && o.area > 0) {
            assert!(o.area >= MIN_STUFF_AREA);
        }
    }

    #[test]
    fn unit_quality_scene() {
        let s = synth_scene(&SceneParams::new(5, 300, 300, 1, (1.0, 1.0))).unwrap();
        assert!(s.objects().iter().all(|o| o.quality == (1.0, 1.0)));
        assert_eq!(s.objects()[0].kind.class_id() < STUFF_CLASS, true);
        assert!(s.objects()[1..].iter().all(|o| o.kind == ShapeKind::Stuff));
    }

    #[test]
    fn rendered_pixels_are_never_black() {
        let s = synth_scene(&SceneParams::new(9, 600, 600, 3, (0.7, 0.9))).unwrap();
        let img = s.image();
        assert!(img.as_raw().chunks_exact(3).all(|p| p != [0, 0, 0]));
    }

    #[test]
    fn placement_failure_is_reported() {
        let p = SceneParams::new(1, 200, 200, 50, (0.7, 0.9));
        assert!(matches!(synth_scene(&p), Err(SceneError::PlacementFailed { .. })));
    }
}
