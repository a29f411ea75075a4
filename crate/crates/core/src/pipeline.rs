//! Whole-image segmentation: tile, segment each window, commit cores, merge.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::ProposalBackend;
use crate::labelmap::LabelMap;
use crate::merge::{merge_tiles, MergeConfig, MergeReport};
use crate::multipass::{segment_tile, ConfigError, PassConfig, PassTrace, TileError};
use crate::raster::RasterSource;
use crate::tiler::{commit_core, extract_window, plan_tiles, TilePlan, TileSpec, TilerError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub tile_size: u32,
    pub padding: u32,
    pub pass: PassConfig,
    pub merge: MergeConfig,
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tile_size: 1000,
            padding: 50,
            pass: PassConfig::default(),
            merge: MergeConfig::default(),
            workers: 1,
        }
    }
}

impl From<&crate::config::RunConfig> for PipelineConfig {
    fn from(c: &crate::config::RunConfig) -> Self {
        Self {
            tile_size: c.tiling.tile_size,
            padding: c.tiling.padding,
            pass: c.pass_config(),
            merge: c.merge_config(),
            workers: c.run.workers,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tiler(#[from] TilerError),
    #[error("tile {index} (row {row}, col {col}): {source}")]
    Tile {
        index: usize,
        row: u32,
        col: u32,
        #[source]
        source: TileError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileOutcome {
    pub spec: TileSpec,
    pub trace: PassTrace,
    /// Distinct local segments that reached the core.
    pub committed_segments: usize,
    pub wall_ms: f64,
}

/// Committed but unmerged tiles.
#[derive(Debug, Clone)]
pub struct TiledMap {
    pub map: LabelMap,
    pub plan: TilePlan,
    pub tiles: Vec<TileOutcome>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub map: LabelMap,
    pub plan: TilePlan,
    pub tiles: Vec<TileOutcome>,
    pub merge: MergeReport,
    pub wall_secs: f64,
}

/// Called once per finished tile with its window-sized local map.
pub type TileObserver<'a> = dyn Fn(&TileSpec, &LabelMap, &PassTrace) + Sync + 'a;

/// Segments every tile and commits the cores, without merging.
pub fn segment_tiles<S, B>(
    source: &S,
    backend: &B,
    cfg: &PipelineConfig,
    observer: Option<&TileObserver<'_>>,
) -> Result<TiledMap, PipelineError>
where
    S: RasterSource + ?Sized,
    B: ProposalBackend + ?Sized,
{
    cfg.pass.validate()?;
    let (width, height) = source.dims();
    let plan = plan_tiles(width, height, cfg.tile_size, cfg.padding)?;
    let global = Mutex::new(LabelMap::new(width, height));
    let outcomes: Mutex<Vec<Option<TileOutcome>>> = Mutex::new(vec![None; plan.tiles.len()]);
    let first_error: Mutex<Option<PipelineError>> = Mutex::new(None);
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);

    let work = || {
        while !abort.load(Ordering::Relaxed) {
            let i = next.fetch_add(1, Ordering::Relaxed);
            let Some(spec) = plan.tiles.get(i) else {
                return;
            };
            let started = Instant::now();
            let result = extract_window(source, spec)
                .map_err(PipelineError::from)
                .and_then(|window| {
                    segment_tile(&window, (spec.window.x, spec.window.y), &cfg.pass, backend).map_err(
                        |source| PipelineError::Tile {
                            index: spec.index,
                            row: spec.row,
                            col: spec.col,
                            source,
                        },
                    )
                });
            let (local, trace) = match result {
                Ok(r) => r,
                Err(e) => {
                    abort.store(true, Ordering::Relaxed);
                    first_error.lock().unwrap().get_or_insert(e);
                    return;
                }
            };
            if let Some(obs) = observer {
                obs(spec, &local, &trace);
            }
            let committed = {
                let mut g = global.lock().unwrap();
                commit_core(&mut g, &local, spec, plan.label_stride)
            };
            match committed {
                Ok(n) => {
                    outcomes.lock().unwrap()[i] = Some(TileOutcome {
                        spec: *spec,
                        trace,
                        committed_segments: n,
                        wall_ms: started.elapsed().as_secs_f64() * 1e3,
                    });
                }
                Err(e) => {
                    abort.store(true, Ordering::Relaxed);
                    first_error.lock().unwrap().get_or_insert(e.into());
                    return;
                }
            }
        }
    };

    let workers = cfg.workers.clamp(1, plan.tiles.len().max(1));
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    let tiles = outcomes
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.expect("every tile finished"))
        .collect();
    Ok(TiledMap {
        map: global.into_inner().unwrap(),
        plan,
        tiles,
    })
}

/// Segments, merges and post-processes a whole raster.
pub fn run_pipeline<S, B>(
    source: &S,
    backend: &B,
    cfg: &PipelineConfig,
    observer: Option<&TileObserver<'_>>,
) -> Result<PipelineOutput, PipelineError>
where
    S: RasterSource + ?Sized,
    B: ProposalBackend + ?Sized,
{
    let started = Instant::now();
    let TiledMap {
        mut map,
        plan,
        tiles,
    } = segment_tiles(source, backend, cfg, observer)?;
    let merge = merge_tiles(&mut map, &plan, &cfg.merge);
    Ok(PipelineOutput {
        map,
        plan,
        tiles,
        merge,
        wall_secs: started.elapsed().as_secs_f64(),
    })
}
