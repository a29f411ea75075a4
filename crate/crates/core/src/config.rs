//! Run configuration, loadable from TOML.
//!
//! ```toml
//! [tiling]
//! tile_size = 1000
//! padding = 50
//!
//! [segmentation]
//! points_per_side = 64
//! target_coverage = 0.99
//! tau_start = 0.93
//! tau_end = 0.60
//! step = 0.01
//! stagnation_pp = 0.1
//! overlap_rejection = 0.5
//! max_passes = 500
//!
//! [merge]
//! strategy = "best_match"
//!
//! [postproc]
//! min_mask_area = 100
//! merge_enclosed_max = 500
//!
//! [run]
//! backend = "synthetic:42"
//! workers = 1
//! ```
//!
//! Every key is optional; missing keys take the defaults shown.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::merge::{MergeConfig, MergeStrategy};
use crate::multipass::PassConfig;

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TilingConfig {
    pub tile_size: u32,
    pub padding: u32,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self {
            tile_size: 1000,
            padding: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub points_per_side: u32,
    pub target_coverage: f64,
    pub tau_start: f64,
    pub tau_end: f64,
    pub step: f64,
    /// Minimum coverage gain per pass, in percentage points.
    pub stagnation_pp: f64,
    pub overlap_rejection: f64,
    pub max_passes: u32,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        let p = PassConfig::default();
        Self {
            points_per_side: p.points_per_side,
            target_coverage: p.target_coverage,
            tau_start: p.tau_start,
            tau_end: p.tau_end,
            step: p.tau_step,
            stagnation_pp: p.stagnation_eps * 100.0,
            overlap_rejection: p.overlap_reject,
            max_passes: p.max_passes,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeSection {
    pub strategy: MergeStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocConfig {
    pub min_mask_area: u64,
    pub merge_enclosed_max: u64,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        Self {
            min_mask_area: 100,
            merge_enclosed_max: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub backend: Option<String>,
    pub workers: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            backend: None,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tiling: TilingConfig,
    pub segmentation: SegmentationConfig,
    pub merge: MergeSection,
    pub postproc: PostprocConfig,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigFileError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn pass_config(&self) -> PassConfig {
        let s = &self.segmentation;
        PassConfig {
            points_per_side: s.points_per_side,
            tau_start: s.tau_start,
            tau_end: s.tau_end,
            tau_step: s.step,
            stagnation_eps: s.stagnation_pp / 100.0,
            target_coverage: s.target_coverage,
            overlap_reject: s.overlap_rejection,
            min_area: self.postproc.min_mask_area,
            max_passes: s.max_passes,
        }
    }

    pub fn merge_config(&self) -> MergeConfig {
        MergeConfig {
            strategy: self.merge.strategy,
            merge_enclosed_max: self.postproc.merge_enclosed_max,
            min_area: self.postproc.min_mask_area,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigFileError> {
        if self.tiling.tile_size == 0 {
            return Err(ConfigFileError::Invalid("tile_size must be positive".into()));
        }
        if self.run.workers == 0 {
            return Err(ConfigFileError::Invalid("workers must be at least 1".into()));
        }
        self.pass_config()
            .validate()
            .map_err(|e| ConfigFileError::Invalid(e.to_string()))
    }
}
