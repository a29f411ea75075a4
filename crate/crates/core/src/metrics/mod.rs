//! Object-based evaluation against instance ground truth.
//!
//! Every ground-truth object is reconstructed greedily from the predicted
//! segments that overlap it, so over-segmentation that stays inside the
//! object is not penalised while leakage is.

mod biou;
mod greedy;

pub use biou::{biou, boundary_band};
pub use greedy::{greedy_oracle, Candidate, GreedyResult};

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::SyntheticScene;
use crate::labelmap::{LabelMap, UNLABELED};
use crate::raster::Rect;

/// Class id of unlabeled ground truth.
pub const NULL_CLASS: u32 = 0;
pub const DEFAULT_BAND: u32 = 3;
pub const DETECTION_IOU: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction is {pred_w}x{pred_h}, ground truth is {gt_w}x{gt_h}")]
    DimensionMismatch {
        pred_w: u32,
        pred_h: u32,
        gt_w: u32,
        gt_h: u32,
    },
    #[error("ground truth contains no objects")]
    EmptyGroundTruth,
    #[error("ground-truth id {0} has no class")]
    MissingClass(u32),
    #[error("bad class sidecar: {0}")]
    Sidecar(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub instances: LabelMap,
    pub class_of: BTreeMap<u32, u32>,
    pub class_names: BTreeMap<u32, String>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    classes: BTreeMap<String, String>,
}

impl GroundTruth {
    pub fn new(
        instances: LabelMap,
        class_of: BTreeMap<u32, u32>,
        class_names: BTreeMap<u32, String>,
    ) -> Result<Self, EvalError> {
        let mut last = UNLABELED;
        for &l in instances.labels() {
            if l != UNLABELED && l != last {
                if !class_of.contains_key(&l) {
                    return Err(EvalError::MissingClass(l));
                }
                last = l;
            }
        }
        Ok(Self {
            instances,
            class_of,
            class_names,
        })
    }

    /// Ground truth with every object in a single class named `object`.
    pub fn single_class(instances: LabelMap) -> Self {
        let mut ids: Vec<u32> = instances.labels().iter().copied().filter(|&l| l != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        Self {
            instances,
            class_of: ids.into_iter().map(|id| (id, 1)).collect(),
            class_names: BTreeMap::from([(1, "object".to_string())]),
        }
    }

    /// Parses `{"classes": {"<gt id>": "<class name>", ...}}`. Class ids are
    /// assigned 1.. in sorted name order.
    pub fn from_sidecar(instances: LabelMap, json: &str) -> Result<Self, EvalError> {
        let sidecar: Sidecar =
            serde_json::from_str(json).map_err(|e| EvalError::Sidecar(e.to_string()))?;
        let mut names: Vec<&String> = sidecar.classes.values().collect();
        names.sort();
        names.dedup();
        let id_of: HashMap<&String, u32> =
            names.iter().enumerate().map(|(i, n)| (*n, i as u32 + 1)).collect();
        let mut class_of = BTreeMap::new();
        for (k, name) in &sidecar.classes {
            let id: u32 = k
                .parse()
                .map_err(|_| EvalError::Sidecar(format!("ground-truth id {k:?} is not an integer")))?;
            class_of.insert(id, id_of[name]);
        }
        let class_names = names
            .into_iter()
            .enumerate()
            .map(|(i, n)| (i as u32 + 1, n.clone()))
            .collect();
        Self::new(instances, class_of, class_names)
    }

    pub fn to_sidecar(&self) -> String {
        let classes = self
            .class_of
            .iter()
            .map(|(id, c)| (id.to_string(), self.class_names.get(c).cloned().unwrap_or_default()))
            .collect();
        serde_json::to_string(&Sidecar { classes }).expect("sidecar serializes")
    }

    pub fn from_scene(scene: SyntheticScene) -> Self {
        let class_of = scene.object_class();
        let class_names = SyntheticScene::class_names();
        Self {
            instances: scene.into_gt(),
            class_of,
            class_names,
        }
    }

    fn class(&self, id: u32) -> u32 {
        if id == UNLABELED {
            NULL_CLASS
        } else {
            self.class_of[&id]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub gt_id: u32,
    pub class_id: u32,
    pub area: u64,
    pub oracle_iou: f64,
    pub single_best_iou: f64,
    pub segments_used: usize,
    pub biou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class_id: Option<u32>,
    pub name: String,
    pub n: usize,
    pub det05: f64,
    pub ss_det05: f64,
    pub miou: f64,
    pub biou: f64,
    pub asa: f64,
    pub n_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub coverage: f64,
    pub asa: f64,
    pub band: u32,
    pub classes: Vec<ClassRow>,
    pub global: ClassRow,
    pub objects: Vec<ObjectRecord>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let name_w = self
            .classes
            .iter()
            .map(|r| r.name.chars().count())
            .chain([6])
            .max()
            .unwrap_or(6);
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>6}  {:>7}  {:>6}  {:>6}  {:>6}  {:>6}  {:>5}",
            "class", "n", "Det@0.5", "SS-Det", "mIoU", "BIoU", "ASA", "n̄"
        );
        for r in self.classes.iter().chain([&self.global]) {
            let _ = writeln!(
                out,
                "{:<name_w$}  {:>6}  {:>7.3}  {:>6.3}  {:>6.3}  {:>6.3}  {:>6.3}  {:>5.2}",
                r.name, r.n, r.det05, r.ss_det05, r.miou, r.biou, r.asa, r.n_bar
            );
        }
        let _ = writeln!(out, "coverage {:.4}", self.coverage);
        out
    }
}

type Bbox = (u32, u32, u32, u32);

fn grow(b: &mut Bbox, x0: u32, x1: u32, y: u32) {
    b.0 = b.0.min(x0);
    b.1 = b.1.min(y);
    b.2 = b.2.max(x1);
    b.3 = b.3.max(y + 1);
}

/// Pixel counts of every (gt id, pred id) pair plus per-label extents.
struct Joint {
    counts: HashMap<(u32, u32), u64>,
    gt_bbox: HashMap<u32, Bbox>,
    pred_bbox: HashMap<u32, Bbox>,
}

fn joint_counts(pred: &LabelMap, gt: &LabelMap) -> Joint {
    let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut gt_bbox: HashMap<u32, Bbox> = HashMap::new();
    let mut pred_bbox: HashMap<u32, Bbox> = HashMap::new();
    let empty = (u32::MAX, u32::MAX, 0, 0);
    for y in 0..gt.height() {
        let (g_row, p_row) = (gt.row(y), pred.row(y));
        let mut x = 0;
        while x < g_row.len() {
            let key = (g_row[x], p_row[x]);
            let start = x;
            while x < g_row.len() && (g_row[x], p_row[x]) == key {
                x += 1;
            }
            *counts.entry(key).or_insert(0) += (x - start) as u64;
            if key.0 != UNLABELED {
                grow(gt_bbox.entry(key.0).or_insert(empty), start as u32, x as u32, y);
            }
            if key.1 != UNLABELED {
                grow(pred_bbox.entry(key.1).or_insert(empty), start as u32, x as u32, y);
            }
        }
    }
    Joint {
        counts,
        gt_bbox,
        pred_bbox,
    }
}

struct AsaResult {
    global: f64,
    per_class: BTreeMap<u32, f64>,
}

fn asa_from_joint(joint: &Joint, gt: &GroundTruth, total: u64) -> AsaResult {
    let mut by_pred: HashMap<u32, BTreeMap<u32, u64>> = HashMap::new();
    let mut class_pixels: BTreeMap<u32, u64> = BTreeMap::new();
    for (&(g, p), &n) in &joint.counts {
        let c = gt.class(g);
        *class_pixels.entry(c).or_insert(0) += n;
        if p != UNLABELED {
            *by_pred.entry(p).or_default().entry(c).or_insert(0) += n;
        }
    }
    let mut correct = 0u64;
    let mut correct_by_class: BTreeMap<u32, u64> = BTreeMap::new();
    for classes in by_pred.values() {
        // BTreeMap iterates in class order, so the first maximum is the lowest id.
        let (&c, &n) = classes
            .iter()
            .fold(None, |best: Option<(&u32, &u64)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            })
            .expect("segment has pixels");
        correct += n;
        *correct_by_class.entry(c).or_insert(0) += n;
    }
    let per_class = class_pixels
        .iter()
        .filter(|(&c, _)| c != NULL_CLASS)
        .map(|(&c, &px)| {
            let ok = correct_by_class.get(&c).copied().unwrap_or(0);
            (c, ok as f64 / px as f64)
        })
        .collect();
    AsaResult {
        global: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        per_class,
    }
}

fn check_dims(pred: &LabelMap, gt: &GroundTruth) -> Result<(), EvalError> {
    if pred.dims() != gt.instances.dims() {
        return Err(EvalError::DimensionMismatch {
            pred_w: pred.width(),
            pred_h: pred.height(),
            gt_w: gt.instances.width(),
            gt_h: gt.instances.height(),
        });
    }
    Ok(())
}

/// Achievable segmentation accuracy: each predicted segment takes the
/// majority ground-truth class of its pixels (unlabeled ground truth is a
/// class of its own; ties go to the lowest class id); unlabeled predicted
/// pixels count as wrong.
pub fn asa(pred: &LabelMap, gt: &GroundTruth) -> Result<f64, EvalError> {
    check_dims(pred, gt)?;
    let joint = joint_counts(pred, &gt.instances);
    Ok(asa_from_joint(&joint, gt, pred.pixel_count()).global)
}

fn object_biou(
    pred: &LabelMap,
    gt: &LabelMap,
    gt_id: u32,
    chosen: &[u32],
    joint: &Joint,
    band: u32,
) -> f64 {
    let (w, h) = gt.dims();
    let mut bb = joint.gt_bbox[&gt_id];
    for p in chosen {
        let pb = joint.pred_bbox[p];
        bb = (bb.0.min(pb.0), bb.1.min(pb.1), bb.2.max(pb.2), bb.3.max(pb.3));
    }
    // One pixel of margin so the crop edge is only a boundary where the image edge is.
    let x0 = bb.0.saturating_sub(1);
    let y0 = bb.1.saturating_sub(1);
    let x1 = (bb.2 + 1).min(w);
    let y1 = (bb.3 + 1).min(h);
    let crop = Rect::new(x0, y0, x1 - x0, y1 - y0);
    let n = crop.area() as usize;
    let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for y in crop.y..crop.bottom() {
        let (g_row, p_row) = (gt.row(y), pred.row(y));
        for x in crop.x as usize..crop.right() as usize {
            a.push(g_row[x] == gt_id);
            b.push(p_row[x] != UNLABELED && chosen.contains(&p_row[x]));
        }
    }
    biou::biou_bits(&a, &b, crop.w as usize, crop.h as usize, band as usize)
}

fn summarize(class_id: Option<u32>, name: String, objects: &[&ObjectRecord], asa: f64) -> ClassRow {
    let n = objects.len();
    let mean = |f: &dyn Fn(&ObjectRecord) -> f64| {
        if n == 0 {
            0.0
        } else {
            objects.iter().map(|o| f(o)).sum::<f64>() / n as f64
        }
    };
    let detected: Vec<&&ObjectRecord> = objects.iter().filter(|o| o.oracle_iou >= DETECTION_IOU).collect();
    ClassRow {
        class_id,
        name,
        n,
        det05: mean(&|o| f64::from(u8::from(o.oracle_iou >= DETECTION_IOU))),
        ss_det05: mean(&|o| f64::from(u8::from(o.single_best_iou >= DETECTION_IOU))),
        miou: mean(&|o| o.oracle_iou),
        biou: mean(&|o| o.biou),
        asa,
        n_bar: if detected.is_empty() {
            0.0
        } else {
            detected.iter().map(|o| o.segments_used as f64).sum::<f64>() / detected.len() as f64
        },
    }
}

/// Full evaluation with boundary band width `band`.
pub fn evaluate(pred: &LabelMap, gt: &GroundTruth, band: u32) -> Result<EvalReport, EvalError> {
    check_dims(pred, gt)?;
    let joint = joint_counts(pred, &gt.instances);
    if joint.gt_bbox.is_empty() {
        return Err(EvalError::EmptyGroundTruth);
    }
    let asa = asa_from_joint(&joint, gt, pred.pixel_count());

    let mut candidates: BTreeMap<u32, (u64, Vec<Candidate>)> = BTreeMap::new();
    let mut pred_area: HashMap<u32, u64> = HashMap::new();
    for (&(g, p), &n) in &joint.counts {
        if p != UNLABELED {
            *pred_area.entry(p).or_insert(0) += n;
        }
        if g != UNLABELED {
            candidates.entry(g).or_default().0 += n;
        }
    }
    for (&(g, p), &n) in &joint.counts {
        if g != UNLABELED && p != UNLABELED {
            candidates.get_mut(&g).expect("gt id seen").1.push(Candidate {
                label: p,
                overlap: n,
                area: pred_area[&p],
            });
        }
    }

    let mut objects = Vec::with_capacity(candidates.len());
    for (gt_id, (area, cands)) in candidates {
        let result = greedy_oracle(area, &cands);
        let biou = object_biou(pred, &gt.instances, gt_id, &result.chosen, &joint, band);
        objects.push(ObjectRecord {
            gt_id,
            class_id: gt.class(gt_id),
            area,
            oracle_iou: result.oracle_iou,
            single_best_iou: result.single_best_iou,
            segments_used: result.segments_used(),
            biou,
        });
    }

    let mut class_ids: Vec<u32> = objects.iter().map(|o| o.class_id).collect();
    class_ids.sort_unstable();
    class_ids.dedup();
    let classes = class_ids
        .into_iter()
        .map(|c| {
            let members: Vec<&ObjectRecord> = objects.iter().filter(|o| o.class_id == c).collect();
            let name = gt.class_names.get(&c).cloned().unwrap_or_else(|| format!("class {c}"));
            summarize(Some(c), name, &members, asa.per_class.get(&c).copied().unwrap_or(0.0))
        })
        .collect();
    let all: Vec<&ObjectRecord> = objects.iter().collect();
    let global = summarize(None, "all".into(), &all, asa.global);
    Ok(EvalReport {
        coverage: pred.coverage(),
        asa: asa.global,
        band,
        classes,
        global,
        objects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_class_gt() -> GroundTruth {
        // Left half object 1 (class 1), right half object 2 (class 2).
        let inst = LabelMap::from_fn(20, 10, |x, _| if x < 10 { 1 } else { 2 });
        GroundTruth::new(
            inst,
            BTreeMap::from([(1, 1), (2, 2)]),
            BTreeMap::from([(1, "a".into()), (2, "b".into())]),
        )
        .unwrap()
    }

    #[test]
    fn asa_examples() {
        let gt = two_class_gt();
        assert_eq!(asa(&gt.instances, &gt).unwrap(), 1.0);
        let one = LabelMap::from_fn(20, 10, |_, _| 5);
        assert_eq!(asa(&one, &gt).unwrap(), 0.5);
        assert_eq!(asa(&LabelMap::new(20, 10), &gt).unwrap(), 0.0);
    }

    #[test]
    fn asa_matches_brute_force_and_ignores_ids() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let gt_labels: Vec<u32> = (0..64 * 64).map(|_| rng.random_range(0..6)).collect();
            let pred_labels: Vec<u32> = (0..64 * 64).map(|_| rng.random_range(0..9)).collect();
            let inst = LabelMap::from_labels(64, 64, gt_labels.clone()).unwrap();
            let class_of: BTreeMap<u32, u32> = (1..6).map(|i| (i, 1 + i % 3)).collect();
            let gt = GroundTruth::new(inst, class_of.clone(), BTreeMap::new()).unwrap();
            let pred = LabelMap::from_labels(64, 64, pred_labels.clone()).unwrap();

            // Oracle: per segment, count classes with a dense table.
            let mut correct = 0;
            for seg in 1..9u32 {
                let mut counts = [0u32; 4];
                for (g, p) in gt_labels.iter().zip(&pred_labels) {
                    if *p == seg {
                        counts[if *g == 0 { 0 } else { class_of[g] as usize }] += 1;
                    }
                }
                let best = (0..4).rev().max_by_key(|&c| counts[c]).unwrap();
                // max_by_key returns the last maximum; iterating in reverse makes it the lowest id.
                correct += counts[best];
            }
            let expected = correct as f64 / 4096.0;
            assert!((asa(&pred, &gt).unwrap() - expected).abs() < 1e-12);

            let permuted = LabelMap::from_labels(
                64,
                64,
                pred_labels.iter().map(|&l| if l == 0 { 0 } else { 100 - l }).collect(),
            )
            .unwrap();
            assert_eq!(asa(&permuted, &gt).unwrap(), asa(&pred, &gt).unwrap());
        }
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let gt = two_class_gt();
        let r = evaluate(&gt.instances, &gt, 3).unwrap();
        for row in r.classes.iter().chain([&r.global]) {
            assert_eq!(
                (row.det05, row.ss_det05, row.miou, row.biou, row.asa, row.n_bar),
                (1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
            );
        }
        assert_eq!(r.classes.iter().map(|c| c.n).sum::<usize>(), r.global.n);

        let e = evaluate(&LabelMap::new(20, 10), &gt, 3).unwrap();
        assert_eq!(e.coverage, 0.0);
        for row in e.classes.iter().chain([&e.global]) {
            assert_eq!(
                (row.det05, row.ss_det05, row.miou, row.biou, row.asa, row.n_bar),
                (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
            );
        }
    }

    #[test]
    fn oversegmentation_is_credited() {
        let gt = two_class_gt();
        // Object 1 split in two, object 2 intact.
        let pred = LabelMap::from_fn(20, 10, |x, y| if x >= 10 { 3 } else if y < 5 { 1 } else { 2 });
        let r = evaluate(&pred, &gt, 3).unwrap();
        let o1 = &r.objects[0];
        assert_eq!((o1.oracle_iou, o1.single_best_iou, o1.segments_used), (1.0, 0.5, 2));
        assert_eq!(o1.biou, 1.0);
        assert_eq!(r.global.det05, 1.0);
        assert_eq!(r.global.ss_det05, 1.0);
        assert_eq!(r.global.n_bar, 1.5);
    }

    #[test]
    fn errors() {
        let gt = two_class_gt();
        assert!(matches!(evaluate(&LabelMap::new(3, 3), &gt, 3), Err(EvalError::DimensionMismatch { .. })));
        let empty = GroundTruth::single_class(LabelMap::new(4, 4));
        assert!(matches!(evaluate(&LabelMap::new(4, 4), &empty, 3), Err(EvalError::EmptyGroundTruth)));
        assert!(matches!(
            GroundTruth::new(LabelMap::from_fn(2, 2, |_, _| 7), BTreeMap::new(), BTreeMap::new()),
            Err(EvalError::MissingClass(7))
        ));
    }

    #[test]
    fn sidecar_round_trip() {
        let inst = LabelMap::from_fn(4, 1, |x, _| x);
        let gt = GroundTruth::from_sidecar(
            inst.clone(),
            r#"{"classes":{"1":"tree","2":"building","3":"tree"}}"#,
        )
        .unwrap();
        assert_eq!(gt.class_names, BTreeMap::from([(1, "building".into()), (2, "tree".into())]));
        assert_eq!(gt.class_of, BTreeMap::from([(1, 2), (2, 1), (3, 2)]));
        let back = GroundTruth::from_sidecar(inst.clone(), &gt.to_sidecar()).unwrap();
        assert_eq!(back, gt);
        assert!(GroundTruth::from_sidecar(inst.clone(), r#"{"classes":{"1":"tree"}}"#).is_err());
        assert!(GroundTruth::from_sidecar(inst, r#"{"classes":{"x":"tree"}}"#).is_err());
    }

    #[test]
    fn table_has_expected_columns() {
        let gt = two_class_gt();
        let table = evaluate(&gt.instances, &gt, 3).unwrap().to_table();
        let header = table.lines().next().unwrap();
        for col in ["n", "Det@0.5", "SS-Det", "mIoU", "BIoU", "ASA", "n̄"] {
            assert!(header.contains(col), "{header}");
        }
        assert_eq!(table.lines().count(), 5);
    }

    #[test]
    fn merging_inside_object_never_lowers_oracle_iou() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let inst = LabelMap::from_fn(40, 40, |x, y| 1 + (x / 20) + 2 * (y / 20));
            let gt = GroundTruth::single_class(inst.clone());
            let blocks: Vec<u32> = (0..64).map(|_| rng.random_range(1..100)).collect();
            let pred = LabelMap::from_fn(40, 40, |x, y| blocks[(y / 5 * 8 + x / 5) as usize]);
            let before = evaluate(&pred, &gt, 3).unwrap();
            // Merge two labels whose pixels all lie inside object 1 (top-left quadrant).
            let mut merged = pred.clone();
            let inside: Vec<u32> = (1..100)
                .filter(|&l| {
                    pred.labels().contains(&l)
                        && (0..40u32).all(|y| (0..40u32).all(|x| pred.get(x, y) != l || (x < 20 && y < 20)))
                })
                .collect();
            assert!(inside.len() >= 2);
            for l in merged.labels_mut() {
                if *l == inside[1] {
                    *l = inside[0];
                }
            }
            let after = evaluate(&merged, &gt, 3).unwrap();
            assert!(after.objects[0].oracle_iou >= before.objects[0].oracle_iou);
        }
    }
}
