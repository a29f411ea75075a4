//! Per-tile multi-pass segmentation with adaptive threshold decay.
//!
//! Each pass paints already-labeled pixels black, prompts the backend with
//! the grid points that still fall on unlabeled pixels, and keeps the
//! connected pieces of each proposal that are large enough and mostly new.
//! When a pass adds less than `stagnation_eps` coverage, both thresholds
//! drop by `tau_step`.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, PromptPoint, ProposalBackend, ProposalRequest};
use crate::labelmap::{
    assign_component, connected_components, paint_black, BinaryMask, Component, LabelMap,
    LabelMapError, UNLABELED,
};
use crate::raster::RgbImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PassConfig {
    pub points_per_side: u32,
    pub tau_start: f64,
    pub tau_end: f64,
    pub tau_step: f64,
    /// Minimum per-pass coverage gain, as a fraction (0.001 = 0.1 percentage points).
    pub stagnation_eps: f64,
    pub target_coverage: f64,
    pub overlap_reject: f64,
    pub min_area: u64,
    pub max_passes: u32,
}

impl Default for PassConfig {
    fn default() -> Self {
        Self {
            points_per_side: 64,
            tau_start: 0.93,
            tau_end: 0.60,
            tau_step: 0.01,
            stagnation_eps: 0.001,
            target_coverage: 0.99,
            overlap_reject: 0.5,
            min_area: 100,
            max_passes: 500,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl PassConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.points_per_side == 0 {
            return bad("points_per_side must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.tau_start) || !(0.0..=1.0).contains(&self.tau_end) {
            return bad(format!(
                "thresholds must lie in [0, 1], got tau_start {} and tau_end {}",
                self.tau_start, self.tau_end
            ));
        }
        if self.tau_end > self.tau_start {
            return bad(format!(
                "tau_end {} exceeds tau_start {}",
                self.tau_end, self.tau_start
            ));
        }
        if !(self.tau_step > 0.0) || !self.tau_step.is_finite() {
            return bad(format!("tau_step must be positive, got {}", self.tau_step));
        }
        if !(self.stagnation_eps >= 0.0) {
            return bad(format!("stagnation_eps must be non-negative, got {}", self.stagnation_eps));
        }
        if !(self.target_coverage > 0.0 && self.target_coverage <= 1.0) {
            return bad(format!("target_coverage must lie in (0, 1], got {}", self.target_coverage));
        }
        if !(0.0..=1.0).contains(&self.overlap_reject) {
            return bad(format!("overlap_reject must lie in [0, 1], got {}", self.overlap_reject));
        }
        if self.max_passes == 0 {
            return bad("max_passes must be at least 1".into());
        }
        Ok(())
    }

    /// Threshold after `decays` stagnant passes, rounded to 1e-9 so that
    /// repeated decay lands exactly on decimal grid values.
    pub fn tau_after(&self, decays: u32) -> f64 {
        ((self.tau_start - decays as f64 * self.tau_step) * 1e9).round() / 1e9
    }
}

/// One pass of [`segment_tile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    /// 1-based.
    pub pass: u32,
    pub tau_iou: f64,
    pub tau_stab: f64,
    pub points: u32,
    pub proposals: u32,
    pub accepted: u32,
    pub coverage_after: f64,
    pub gain: f64,
    pub decayed: bool,
    pub wall_ms: f64,
    /// Labels assigned in this pass are `first_label..end_label`.
    pub first_label: u32,
    pub end_label: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    CoverageReached,
    ThresholdExhausted,
    PassLimit,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PassTrace {
    pub passes: Vec<PassRecord>,
    pub stop: Option<StopReason>,
}

impl PassTrace {
    pub fn final_coverage(&self) -> f64 {
        self.passes.last().map_or(0.0, |p| p.coverage_after)
    }

    pub fn decay_count(&self) -> usize {
        self.passes.iter().filter(|p| p.decayed).count()
    }

    /// The pass that assigned `local_label`, if any.
    pub fn pass_of_label(&self, local_label: u32) -> Option<&PassRecord> {
        self.passes
            .iter()
            .find(|p| (p.first_label..p.end_label).contains(&local_label))
    }

    /// One JSON object per pass, each on its own line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for p in &self.passes {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }
}

#[derive(Debug, Error)]
pub enum TileError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("label map: {0}")]
    LabelMap(#[from] LabelMapError),
    #[error("backend failed in pass {pass}: {source}")]
    Backend {
        pass: u32,
        #[source]
        source: BackendError,
        trace: PassTrace,
    },
}

/// Cell-centre grid of `k`×`k` points, minus those on labeled pixels.
pub fn dense_grid(k: u32, width: u32, height: u32, map: &LabelMap) -> Vec<PromptPoint> {
    let mut points = Vec::with_capacity((k * k) as usize);
    let (k64, w, h) = (k as u64, width as u64, height as u64);
    for i in 0..k64 {
        // floor((i + 0.5) * H / k) in exact integer arithmetic.
        let y = ((2 * i + 1) * h / (2 * k64)) as u32;
        for j in 0..k64 {
            let x = ((2 * j + 1) * w / (2 * k64)) as u32;
            if map.get(x, y) == UNLABELED {
                points.push(PromptPoint::new(x, y));
            }
        }
    }
    points
}

fn overlap_with_labeled(comp: &Component, map: &LabelMap) -> u64 {
    let labels = map.labels();
    comp.mask
        .spans()
        .map(|(start, len)| {
            labels[start as usize..(start + len) as usize]
                .iter()
                .filter(|&&l| l != UNLABELED)
                .count() as u64
        })
        .sum()
}

/// Splits a proposal into 8-connected pieces and keeps those with
/// `area >= min_area` and labeled-overlap fraction `<= overlap_reject`.
pub fn filter_components(mask: &BinaryMask, map: &LabelMap, cfg: &PassConfig) -> Vec<Component> {
    connected_components(mask)
        .into_iter()
        .filter(|c| {
            c.area >= cfg.min_area
                && overlap_with_labeled(c, map) as f64 <= cfg.overlap_reject * c.area as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassOutcome {
    pub points: u32,
    pub proposals: u32,
    pub accepted: u32,
    /// Newly labeled pixels as a fraction of the tile.
    pub gain: f64,
}

/// One pass at thresholds `(tau_iou, tau_stab)`.
///
/// Proposals are handled in backend order and their components in scan
/// order; each component is judged against the map as updated by the
/// components accepted before it. On a backend error the map is untouched.
pub fn run_pass<B: ProposalBackend + ?Sized>(
    image: &RgbImage,
    origin: (u32, u32),
    map: &mut LabelMap,
    tau: (f64, f64),
    cfg: &PassConfig,
    backend: &B,
) -> Result<PassOutcome, TileError> {
    let (w, h) = map.dims();
    let points = dense_grid(cfg.points_per_side, w, h, map);
    if points.is_empty() {
        return Ok(PassOutcome {
            points: 0,
            proposals: 0,
            accepted: 0,
            gain: 0.0,
        });
    }
    let painted = paint_black(image, map)?;
    let request = ProposalRequest {
        tile: &painted,
        origin,
        points: &points,
        tau_iou: tau.0,
        tau_stab: tau.1,
    };
    let proposals = backend.generate(&request).map_err(|source| TileError::Backend {
        pass: 0,
        source,
        trace: PassTrace::default(),
    })?;
    crate::backend::check_proposals(&request, &proposals).map_err(|source| TileError::Backend {
        pass: 0,
        source,
        trace: PassTrace::default(),
    })?;

    let mut accepted = 0u32;
    let mut assigned = 0u64;
    for proposal in &proposals {
        for comp in filter_components(&proposal.mask, map, cfg) {
            let n = assign_component(map, &comp)?;
            if n > 0 {
                accepted += 1;
                assigned += n;
            }
        }
    }
    Ok(PassOutcome {
        points: points.len() as u32,
        proposals: proposals.len() as u32,
        accepted,
        gain: assigned as f64 / map.pixel_count() as f64,
    })
}

/// Segments one tile from scratch. `origin` is the tile's position in the
/// full image, forwarded to the backend.
pub fn segment_tile<B: ProposalBackend + ?Sized>(
    image: &RgbImage,
    origin: (u32, u32),
    cfg: &PassConfig,
    backend: &B,
) -> Result<(LabelMap, PassTrace), TileError> {
    cfg.validate()?;
    let mut map = LabelMap::new(image.width(), image.height());
    let mut trace = PassTrace::default();
    let mut decays = 0u32;
    loop {
        let tau = cfg.tau_after(decays);
        let first_label = map.next_label();
        let started = Instant::now();
        let pass = trace.passes.len() as u32 + 1;
        let outcome = match run_pass(image, origin, &mut map, (tau, tau), cfg, backend) {
            Ok(o) => o,
            Err(TileError::Backend { source, .. }) => {
                return Err(TileError::Backend {
                    pass,
                    source,
                    trace,
                })
            }
            Err(e) => return Err(e),
        };
        let decayed = outcome.gain < cfg.stagnation_eps;
        if decayed {
            decays += 1;
        }
        let coverage = map.coverage();
        trace.passes.push(PassRecord {
            pass,
            tau_iou: tau,
            tau_stab: tau,
            points: outcome.points,
            proposals: outcome.proposals,
            accepted: outcome.accepted,
            coverage_after: coverage,
            gain: outcome.gain,
            decayed,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            first_label,
            end_label: map.next_label(),
        });
        let stop = if coverage >= cfg.target_coverage {
            Some(StopReason::CoverageReached)
        } else if cfg.tau_after(decays) < cfg.tau_end {
            Some(StopReason::ThresholdExhausted)
        } else if pass >= cfg.max_passes {
            Some(StopReason::PassLimit)
        } else {
            None
        };
        if stop.is_some() {
            trace.stop = stop;
            return Ok((map, trace));
        }
    }
}
