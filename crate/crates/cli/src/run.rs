//! `segment` and `merge`.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use clap::Args;
use mosaicseg_core::backend::{
    synth_scene, ProposalBackend, SceneParams, SyntheticBackend, SyntheticScene, WireBackend,
    WireTransport,
};
use mosaicseg_core::labelmap::LabelMap;
use mosaicseg_core::merge::merge_tiles;
use mosaicseg_core::multipass::{PassTrace, TileError};
use mosaicseg_core::pipeline::{segment_tiles, PipelineConfig, PipelineError, TileOutcome};
use mosaicseg_core::raster::RasterSource;
use mosaicseg_core::tiler::{TilePlan, TileSpec};

use crate::fail::{CliResult, Failure};
use crate::files::{open_raster, parse_dims, parse_range, read_map, read_text, write_map, write_text};
use crate::settings::{echo, ConfigArgs};

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// PNG or RRGB raster. Optional with a synthetic backend, which can render its own scene.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    /// Merged label map (RSLM).
    #[arg(long, short)]
    pub output: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory for one pass-trace JSONL file per tile.
    #[arg(long, value_name = "DIR")]
    pub trace: Option<PathBuf>,
    /// Merge report (JSON).
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Tile plan (JSON), needed to re-run `merge` on the unmerged map.
    #[arg(long, value_name = "FILE")]
    pub plan: Option<PathBuf>,
    /// Committed tile labels before merging (RSLM).
    #[arg(long, value_name = "FILE")]
    pub unmerged: Option<PathBuf>,
    /// Writes the effective configuration as TOML.
    #[arg(long, value_name = "FILE")]
    pub effective_config: Option<PathBuf>,
    #[command(flatten)]
    pub scene: SceneArgs,
    /// No per-tile progress on stderr.
    #[arg(long, short)]
    pub quiet: bool,
}

/// Scene for the synthetic backend.
#[derive(Debug, Args)]
pub struct SceneArgs {
    /// scene.json written by `synth`.
    #[arg(long, value_name = "FILE")]
    pub scene: Option<PathBuf>,
    /// Scene size when no scene file is given; defaults to the input's size.
    #[arg(long, value_name = "WxH", value_parser = parse_dims)]
    pub size: Option<(u32, u32)>,
    #[arg(long, default_value_t = 60)]
    pub objects: u32,
    #[arg(long, value_name = "LOW,HIGH", default_value = "0.62,0.98", value_parser = parse_range)]
    pub quality: (f64, f64),
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Unmerged label map written by `segment --unmerged`.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Tile plan written by `segment --plan`.
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

fn pipeline_failure(e: PipelineError) -> Failure {
    match &e {
        PipelineError::Tile {
            source: TileError::Backend { .. },
            ..
        } => Failure::backend(e.to_string()),
        _ => Failure::usage(e.to_string()),
    }
}

fn load_scene(args: &SceneArgs, seed: u64, input_dims: Option<(u32, u32)>) -> CliResult<SyntheticScene> {
    let params = match &args.scene {
        Some(path) => {
            let stats: serde_json::Value =
                serde_json::from_str(&read_text(path)?).map_err(|e| Failure::at(path, e))?;
            let params: SceneParams = serde_json::from_value(stats["params"].clone())
                .map_err(|e| Failure::at(path, format!("params: {e}")))?;
            if params.seed != seed {
                return Err(Failure::at(
                    path,
                    format!("scene seed {} differs from backend seed {seed}", params.seed),
                ));
            }
            params
        }
        None => {
            let (w, h) = args.size.or(input_dims).ok_or_else(|| {
                Failure::usage("synthetic backend needs --input, --size or --scene to know the scene size")
            })?;
            SceneParams::new(seed, w, h, args.objects, args.quality)
        }
    };
    let scene = synth_scene(&params).map_err(|e| Failure::usage(format!("synthetic scene: {e}")))?;
    if let Some(dims) = input_dims {
        if dims != scene.dims() {
            return Err(Failure::usage(format!(
                "input is {}x{} but the synthetic scene is {}x{}",
                dims.0,
                dims.1,
                scene.dims().0,
                scene.dims().1
            )));
        }
    }
    Ok(scene)
}

enum Backend {
    Synthetic(Arc<SyntheticScene>, SyntheticBackend),
    Wire(WireBackend),
}

impl Backend {
    fn open(spec: &str, scene: &SceneArgs, input_dims: Option<(u32, u32)>) -> CliResult<Self> {
        if let Some(seed) = spec.strip_prefix("synthetic:") {
            let seed: u64 = seed
                .parse()
                .map_err(|_| Failure::usage(format!("backend {spec:?}: seed must be an integer")))?;
            let scene = Arc::new(load_scene(scene, seed, input_dims)?);
            let backend = SyntheticBackend::new(scene.clone());
            Ok(Backend::Synthetic(scene, backend))
        } else if let Some(worker) = spec.strip_prefix("worker:") {
            let transport =
                WireTransport::parse(worker).map_err(|e| Failure::usage(format!("backend {spec:?}: {e}")))?;
            Ok(Backend::Wire(WireBackend::new(transport)))
        } else {
            Err(Failure::usage(format!(
                "unknown backend {spec:?} (expected synthetic:<seed> or worker:<command|tcp://addr>)"
            )))
        }
    }

    fn proposals(&self) -> &dyn ProposalBackend {
        match self {
            Backend::Synthetic(_, b) => b,
            Backend::Wire(b) => b,
        }
    }
}

fn write_traces(dir: &Path, tiles: &[TileOutcome]) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| Failure::at(dir, e))?;
    for t in tiles {
        let path = dir.join(format!("tile_r{:03}_c{:03}.jsonl", t.spec.row, t.spec.col));
        write_text(&path, &t.trace.to_jsonl())?;
    }
    Ok(())
}

pub fn segment(args: &SegmentArgs) -> CliResult {
    let cfg = args.config.resolve()?;
    let raster = args.input.as_deref().map(open_raster).transpose()?;
    let input_dims = raster.as_ref().map(|r| r.source().dims());
    let spec = cfg.run.backend.as_deref().ok_or_else(|| {
        Failure::usage("no backend: pass --backend or set [run] backend in the config file")
    })?;
    let backend = Backend::open(spec, &args.scene, input_dims)?;
    let source: &dyn RasterSource = match (&raster, &backend) {
        (Some(r), _) => r.source(),
        (None, Backend::Synthetic(scene, _)) => scene.as_ref(),
        (None, Backend::Wire(_)) => return Err(Failure::usage("--input is required with a worker backend")),
    };
    if let Some(path) = &args.effective_config {
        write_text(path, &cfg.to_toml())?;
    }

    let pcfg = PipelineConfig::from(&cfg);
    let started = Instant::now();
    let done = AtomicUsize::new(0);
    let quiet = args.quiet;
    let progress = |spec: &TileSpec, _: &LabelMap, trace: &PassTrace| {
        if quiet {
            return;
        }
        let n = done.fetch_add(1, Ordering::Relaxed) + 1;
        eprintln!(
            "tile {n} (row {}, col {}): {} passes, {} decays, coverage {:.4}, stop {:?}",
            spec.row,
            spec.col,
            trace.passes.len(),
            trace.decay_count(),
            trace.final_coverage(),
            trace.stop,
        );
    };
    let mut tiled = segment_tiles(source, backend.proposals(), &pcfg, Some(&progress)).map_err(pipeline_failure)?;
    if !quiet {
        eprintln!("segmented {} tiles, merging", tiled.plan.tiles.len());
    }
    if let Some(path) = &args.unmerged {
        write_map(path, &tiled.map)?;
    }
    if let Some(path) = &args.plan {
        write_text(path, &tiled.plan.to_json())?;
    }
    if let Some(dir) = &args.trace {
        write_traces(dir, &tiled.tiles)?;
    }
    let report = merge_tiles(&mut tiled.map, &tiled.plan, &pcfg.merge);
    let wall = started.elapsed().as_secs_f64();
    write_map(&args.output, &tiled.map)?;
    if let Some(path) = &args.report {
        write_text(path, &report.to_json())?;
    }
    println!(
        "segments={} coverage={:.4} wall_secs={wall:.3} tiles={} merges={} {}",
        tiled.map.segment_count(),
        tiled.map.coverage(),
        tiled.plan.tiles.len(),
        report.merges,
        echo(&cfg),
    );
    Ok(())
}

pub fn merge(args: &MergeArgs) -> CliResult {
    let cfg = args.config.resolve()?;
    let mut map = read_map(&args.input)?;
    let plan: TilePlan =
        serde_json::from_str(&read_text(&args.plan)?).map_err(|e| Failure::at(&args.plan, e))?;
    if (plan.width, plan.height) != map.dims() {
        return Err(Failure::at(
            &args.plan,
            format!(
                "plan is for {}x{} but {} is {}x{}",
                plan.width,
                plan.height,
                args.input.display(),
                map.width(),
                map.height()
            ),
        ));
    }
    let started = Instant::now();
    let report = merge_tiles(&mut map, &plan, &cfg.merge_config());
    let wall = started.elapsed().as_secs_f64();
    write_map(&args.output, &map)?;
    if let Some(path) = &args.report {
        write_text(path, &report.to_json())?;
    }
    println!(
        "segments={} coverage={:.4} wall_secs={wall:.3} merges={} strategy={} min_mask_area={} merge_enclosed_max={}",
        map.segment_count(),
        map.coverage(),
        report.merges,
        cfg.merge.strategy,
        cfg.postproc.min_mask_area,
        cfg.postproc.merge_enclosed_max,
    );
    Ok(())
}
