//! Cross-tile merging and post-processing.
//!
//! Segments cut at tile boundaries are rejoined from their contact counts
//! along each boundary. With the default best-match rule every segment on a
//! boundary joins the neighbour it shares the most boundary pixels with, so
//! a few pixels of accidental contact never fuse unrelated segments.

mod union_find;

pub use union_find::UnionFind;

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::labelmap::{label_components, remove_small, LabelMap, UNLABELED};
use crate::tiler::TilePlan;

pub type LabelPair = (u32, u32);

fn ordered(a: u32, b: u32) -> LabelPair {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Between horizontally adjacent tiles.
    Vertical,
    /// Between vertically adjacent tiles.
    Horizontal,
}

/// Contact counts across one boundary between two adjacent tile cores.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boundary {
    /// Tile indices: left/top then right/bottom.
    pub tiles: (usize, usize),
    pub orientation: Orientation,
    /// Unordered label pair → number of 4-adjacent pixel pairs straddling the boundary.
    pub contacts: BTreeMap<LabelPair, u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactTable {
    pub boundaries: Vec<Boundary>,
}

/// Counts label contacts along every internal tile boundary.
pub fn build_contacts(map: &LabelMap, plan: &TilePlan) -> ContactTable {
    let mut boundaries = Vec::new();
    let count = |a: u32, b: u32, contacts: &mut BTreeMap<LabelPair, u32>| {
        if a != UNLABELED && b != UNLABELED && a != b {
            *contacts.entry(ordered(a, b)).or_insert(0) += 1;
        }
    };
    for t in &plan.tiles {
        if let Some(right) = plan.tile(t.row, t.col + 1) {
            let mut contacts = BTreeMap::new();
            let x = t.core.right();
            for y in t.core.y..t.core.bottom() {
                count(map.get(x - 1, y), map.get(x, y), &mut contacts);
            }
            boundaries.push(Boundary {
                tiles: (t.index, right.index),
                orientation: Orientation::Vertical,
                contacts,
            });
        }
        if let Some(below) = plan.tile(t.row + 1, t.col) {
            let mut contacts = BTreeMap::new();
            let y = t.core.bottom();
            let (above_row, below_row) = (map.row(y - 1), map.row(y));
            for x in t.core.x as usize..t.core.right() as usize {
                count(above_row[x], below_row[x], &mut contacts);
            }
            boundaries.push(Boundary {
                tiles: (t.index, below.index),
                orientation: Orientation::Horizontal,
                contacts,
            });
        }
    }
    ContactTable { boundaries }
}

/// For every label on the boundary, its highest-contact partner (lowest id on ties).
fn best_partners(contacts: &BTreeMap<LabelPair, u32>) -> BTreeMap<u32, u32> {
    let mut best: BTreeMap<u32, (u32, u32)> = BTreeMap::new();
    for (&(a, b), &n) in contacts {
        for (me, other) in [(a, b), (b, a)] {
            let e = best.entry(me).or_insert((other, n));
            if n > e.1 || (n == e.1 && other < e.0) {
                *e = (other, n);
            }
        }
    }
    best.into_iter().map(|(k, (partner, _))| (k, partner)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MergeStrategy {
    /// Each label joins its highest-contact neighbour per boundary.
    BestMatch,
    /// Merge every touching pair.
    Naive,
    /// Merge only pairs that pick each other.
    MutualBest,
    /// Merge pairs with at least this many contacts.
    ContactThreshold(u32),
    /// Leave tile cuts in place.
    None,
}

impl Default for MergeStrategy {
    fn default() -> Self {
        MergeStrategy::BestMatch
    }
}

impl std::fmt::Display for MergeStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MergeStrategy::BestMatch => f.write_str("best_match"),
            MergeStrategy::Naive => f.write_str("naive"),
            MergeStrategy::MutualBest => f.write_str("mutual_best"),
            MergeStrategy::ContactThreshold(n) => write!(f, "contact_threshold:{n}"),
            MergeStrategy::None => f.write_str("none"),
        }
    }
}

impl From<MergeStrategy> for String {
    fn from(s: MergeStrategy) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for MergeStrategy {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl FromStr for MergeStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "best_match" => Ok(MergeStrategy::BestMatch),
            "naive" => Ok(MergeStrategy::Naive),
            "mutual_best" => Ok(MergeStrategy::MutualBest),
            "none" => Ok(MergeStrategy::None),
            _ => s
                .strip_prefix("contact_threshold:")
                .and_then(|n| n.parse().ok())
                .map(MergeStrategy::ContactThreshold)
                .ok_or_else(|| {
                    format!(
                        "unknown merge strategy {s:?} (expected best_match, naive, mutual_best, \
                         contact_threshold:<n> or none)"
                    )
                }),
        }
    }
}

pub fn best_match_pairs(contacts: &BTreeMap<LabelPair, u32>) -> BTreeSet<LabelPair> {
    best_partners(contacts)
        .into_iter()
        .map(|(a, b)| ordered(a, b))
        .collect()
}

pub fn naive_pairs(contacts: &BTreeMap<LabelPair, u32>) -> BTreeSet<LabelPair> {
    contacts.keys().copied().collect()
}

pub fn mutual_best_pairs(contacts: &BTreeMap<LabelPair, u32>) -> BTreeSet<LabelPair> {
    let best = best_partners(contacts);
    best.iter()
        .filter(|&(a, b)| best.get(b) == Some(a))
        .map(|(&a, &b)| ordered(a, b))
        .collect()
}

pub fn threshold_pairs(contacts: &BTreeMap<LabelPair, u32>, min_contacts: u32) -> BTreeSet<LabelPair> {
    contacts
        .iter()
        .filter(|&(_, &n)| n >= min_contacts)
        .map(|(&p, _)| p)
        .collect()
}

pub fn select_pairs(contacts: &BTreeMap<LabelPair, u32>, strategy: MergeStrategy) -> BTreeSet<LabelPair> {
    match strategy {
        MergeStrategy::BestMatch => best_match_pairs(contacts),
        MergeStrategy::Naive => naive_pairs(contacts),
        MergeStrategy::MutualBest => mutual_best_pairs(contacts),
        MergeStrategy::ContactThreshold(n) => threshold_pairs(contacts, n),
        MergeStrategy::None => BTreeSet::new(),
    }
}

/// Rewrites labels through a sorted `(from, to)` table.
fn relabel_with(map: &mut LabelMap, table: &[(u32, u32)]) {
    if table.is_empty() {
        return;
    }
    let mut cache = (UNLABELED, UNLABELED);
    for l in map.labels_mut() {
        if *l == UNLABELED {
            continue;
        }
        if *l == cache.0 {
            *l = cache.1;
            continue;
        }
        let from = *l;
        let to = match table.binary_search_by_key(&from, |&(f, _)| f) {
            Ok(i) => table[i].1,
            Err(_) => from,
        };
        cache = (from, to);
        *l = to;
    }
}

/// Unions every pair and relabels each merged group to its smallest label.
/// Returns the number of merges (labels that disappeared).
pub fn apply_merges<'a>(map: &mut LabelMap, pairs: impl IntoIterator<Item = &'a LabelPair>) -> usize {
    let pairs: Vec<LabelPair> = pairs.into_iter().copied().collect();
    let mut labels: Vec<u32> = pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.is_empty() {
        return 0;
    }
    let index = |l: u32| labels.binary_search(&l).expect("label from pair list");
    let mut uf = UnionFind::new(labels.len());
    let mut merges = 0;
    for &(a, b) in &pairs {
        if uf.union(index(a), index(b)) {
            merges += 1;
        }
    }
    // Smallest label of each set; labels are sorted so the first seen wins.
    let mut root_label = vec![u32::MAX; labels.len()];
    let mut table = Vec::with_capacity(labels.len());
    for (i, &l) in labels.iter().enumerate() {
        let r = uf.find(i);
        if root_label[r] == u32::MAX {
            root_label[r] = l;
        }
        if root_label[r] != l {
            table.push((l, root_label[r]));
        }
    }
    relabel_with(map, &table);
    merges
}

/// Relabels small components whose whole 4-neighbourhood is one other label.
/// Repeats until nothing changes; returns the number of components absorbed.
pub fn absorb_enclosed(map: &mut LabelMap, max_area: u64) -> usize {
    if max_area == 0 {
        return 0;
    }
    let (w, h) = map.dims();
    let mut total = 0;
    loop {
        let lc = label_components(map);
        let mut fills: Vec<(usize, u32)> = Vec::new();
        for (ci, comp) in lc.comps.iter().enumerate() {
            if comp.area > max_area {
                continue;
            }
            let mut host: Option<u32> = None;
            let mut enclosed = true;
            let mut visit = |l: Option<u32>| -> bool {
                match l {
                    None | Some(UNLABELED) => false,
                    Some(l) if l == comp.label => true,
                    Some(l) => match host {
                        None => {
                            host = Some(l);
                            true
                        }
                        Some(h) => h == l,
                    },
                }
            };
            'spans: for &si in &comp.spans {
                let s = lc.spans[si as usize];
                let left = (s.x0 > 0).then(|| map.get(s.x0 - 1, s.y));
                let right = (s.x1 < w).then(|| map.get(s.x1, s.y));
                if !visit(left) || !visit(right) {
                    enclosed = false;
                    break;
                }
                for ny in [s.y.checked_sub(1), Some(s.y + 1).filter(|&y| y < h)] {
                    let Some(ny) = ny else {
                        enclosed = false;
                        break 'spans;
                    };
                    for &l in &map.row(ny)[s.x0 as usize..s.x1 as usize] {
                        if !visit(Some(l)) {
                            enclosed = false;
                            break 'spans;
                        }
                    }
                }
            }
            if enclosed {
                if let Some(host) = host {
                    fills.push((ci, host));
                }
            }
        }
        if fills.is_empty() {
            return total;
        }
        let width = w as usize;
        let labels = map.labels_mut();
        for &(ci, host) in &fills {
            for &si in &lc.comps[ci].spans {
                let s = lc.spans[si as usize];
                let base = s.y as usize * width;
                labels[base + s.x0 as usize..base + s.x1 as usize].fill(host);
            }
        }
        total += fills.len();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeConfig {
    pub strategy: MergeStrategy,
    pub merge_enclosed_max: u64,
    pub min_area: u64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            strategy: MergeStrategy::BestMatch,
            merge_enclosed_max: 500,
            min_area: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub tiles: (usize, usize),
    pub orientation: Orientation,
    pub touching_pairs: usize,
    pub chosen_pairs: Vec<LabelPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub strategy: String,
    pub boundaries: Vec<BoundaryReport>,
    pub merges: usize,
    pub segments_before: usize,
    pub segments_after_merge: usize,
    pub absorbed: usize,
    pub removed_small: usize,
    pub segments_final: usize,
    pub coverage_before: f64,
    pub coverage_final: f64,
}

impl MergeReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Full post-tiling reduction: contacts, pair selection, merging, enclosed
/// absorption, small-fragment removal, then sequential relabeling.
pub fn merge_tiles(map: &mut LabelMap, plan: &TilePlan, cfg: &MergeConfig) -> MergeReport {
    let segments_before = map.segment_count();
    let coverage_before = map.coverage();
    let table = build_contacts(map, plan);
    let mut all_pairs = BTreeSet::new();
    let boundaries = table
        .boundaries
        .iter()
        .map(|b| {
            let chosen = select_pairs(&b.contacts, cfg.strategy);
            all_pairs.extend(chosen.iter().copied());
            BoundaryReport {
                tiles: b.tiles,
                orientation: b.orientation,
                touching_pairs: b.contacts.len(),
                chosen_pairs: chosen.into_iter().collect(),
            }
        })
        .collect();
    let merges = apply_merges(map, &all_pairs);
    let segments_after_merge = map.segment_count();
    let absorbed = absorb_enclosed(map, cfg.merge_enclosed_max);
    let removed_small = remove_small(map, cfg.min_area);
    map.relabel_sequential();
    MergeReport {
        strategy: cfg.strategy.to_string(),
        boundaries,
        merges,
        segments_before,
        segments_after_merge,
        absorbed,
        removed_small,
        segments_final: map.segment_count(),
        coverage_before,
        coverage_final: map.coverage(),
    }
}
