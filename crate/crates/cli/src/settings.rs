//! Run configuration from file and flags. Flags win over the file, the file
//! over the built-in defaults.

use std::path::PathBuf;

use clap::Args;
use mosaicseg_core::config::RunConfig;
use mosaicseg_core::merge::MergeStrategy;

use crate::fail::{CliResult, Failure};
use crate::files::read_text;

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file with [tiling], [segmentation], [merge], [postproc] and [run] sections.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub tile_size: Option<u32>,
    #[arg(long)]
    pub padding: Option<u32>,
    #[arg(long)]
    pub points_per_side: Option<u32>,
    #[arg(long)]
    pub target_coverage: Option<f64>,
    #[arg(long)]
    pub tau_start: Option<f64>,
    #[arg(long)]
    pub tau_end: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    /// Minimum coverage gain per pass, in percentage points.
    #[arg(long)]
    pub stagnation_pp: Option<f64>,
    #[arg(long)]
    pub overlap_rejection: Option<f64>,
    #[arg(long)]
    pub max_passes: Option<u32>,
    /// best_match, naive, mutual_best, contact_threshold:<n> or none.
    #[arg(long, value_name = "STRATEGY")]
    pub merge: Option<MergeStrategy>,
    #[arg(long)]
    pub min_mask_area: Option<u64>,
    #[arg(long)]
    pub merge_enclosed_max: Option<u64>,
    /// synthetic:<seed>, worker:tcp://<host:port> or worker:<command line>.
    #[arg(long)]
    pub backend: Option<String>,
    /// Tiles segmented in parallel.
    #[arg(long)]
    pub workers: Option<usize>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_toml(&read_text(path)?).map_err(|e| Failure::at(path, e))?,
            None => RunConfig::default(),
        };
        fn set<T: Clone>(dst: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *dst = v.clone();
            }
        }
        set(&mut cfg.tiling.tile_size, &self.tile_size);
        set(&mut cfg.tiling.padding, &self.padding);
        let s = &mut cfg.segmentation;
        set(&mut s.points_per_side, &self.points_per_side);
        set(&mut s.target_coverage, &self.target_coverage);
        set(&mut s.tau_start, &self.tau_start);
        set(&mut s.tau_end, &self.tau_end);
        set(&mut s.step, &self.step);
        set(&mut s.stagnation_pp, &self.stagnation_pp);
        set(&mut s.overlap_rejection, &self.overlap_rejection);
        set(&mut s.max_passes, &self.max_passes);
        set(&mut cfg.merge.strategy, &self.merge);
        set(&mut cfg.postproc.min_mask_area, &self.min_mask_area);
        set(&mut cfg.postproc.merge_enclosed_max, &self.merge_enclosed_max);
        if self.backend.is_some() {
            cfg.run.backend = self.backend.clone();
        }
        set(&mut cfg.run.workers, &self.workers);
        cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// Every effective setting as `key=value`, for the run summary.
pub fn echo(cfg: &RunConfig) -> String {
    let s = &cfg.segmentation;
    format!(
        "tile_size={} padding={} points_per_side={} target_coverage={} tau_start={} tau_end={} \
         step={} stagnation_pp={} overlap_rejection={} max_passes={} strategy={} min_mask_area={} \
         merge_enclosed_max={} backend={} workers={}",
        cfg.tiling.tile_size,
        cfg.tiling.padding,
        s.points_per_side,
        s.target_coverage,
        s.tau_start,
        s.tau_end,
        s.step,
        s.stagnation_pp,
        s.overlap_rejection,
        s.max_passes,
        cfg.merge.strategy,
        cfg.postproc.min_mask_area,
        cfg.postproc.merge_enclosed_max,
        cfg.run.backend.as_deref().unwrap_or("-"),
        cfg.run.workers,
    )
}
