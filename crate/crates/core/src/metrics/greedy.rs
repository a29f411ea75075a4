/// A predicted segment that overlaps a ground-truth object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub label: u32,
    /// Pixels shared with the object.
    pub overlap: u64,
    /// Total pixels of the segment.
    pub area: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyResult {
    pub oracle_iou: f64,
    pub single_best_iou: f64,
    /// Chosen segment labels, in the order they were added.
    pub chosen: Vec<u32>,
}

impl GreedyResult {
    pub fn segments_used(&self) -> usize {
        self.chosen.len()
    }
}

/// IoU of a union of disjoint segments with an object of `object_area` pixels.
fn union_iou(object_area: u64, overlap: u64, outside: u64) -> f64 {
    overlap as f64 / (object_area + outside) as f64
}

/// Greedily adds whole segments while the reconstructed IoU strictly rises.
///
/// Segments are disjoint (they come from one label map), so the union's
/// intersection and leakage are plain sums. Ties go to the lowest label.
pub fn greedy_oracle(object_area: u64, candidates: &[Candidate]) -> GreedyResult {
    let mut pool: Vec<Candidate> = candidates.iter().copied().filter(|c| c.overlap > 0).collect();
    pool.sort_by_key(|c| c.label);
    let single_best_iou = pool
        .iter()
        .map(|c| union_iou(object_area, c.overlap, c.area - c.overlap))
        .fold(0.0, f64::max);

    let (mut overlap, mut outside) = (0u64, 0u64);
    let mut current = 0.0;
    let mut chosen = Vec::new();
    loop {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in pool.iter().enumerate() {
            let iou = union_iou(object_area, overlap + c.overlap, outside + c.area - c.overlap);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((i, iou));
            }
        }
        match best {
            Some((i, iou)) if iou > current => {
                let c = pool.remove(i);
                overlap += c.overlap;
                outside += c.area - c.overlap;
                current = iou;
                chosen.push(c.label);
            }
            _ => break,
        }
    }
    GreedyResult {
        oracle_iou: current,
        single_best_iou,
        chosen,
    }
}
