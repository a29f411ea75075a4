//! `eval`, `synth` and `render`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use mosaicseg_core::backend::{synth_scene, SceneParams};
use mosaicseg_core::labelmap::render_labels;
use mosaicseg_core::metrics::{evaluate, GroundTruth, DEFAULT_BAND};
use mosaicseg_core::raster::write_rrgb_source;
use serde_json::json;

use crate::fail::{CliResult, Failure};
use crate::files::{parse_dims, parse_range, read_map, read_text, write_map, write_png, write_text, PNG_MAX_SIDE};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted label map (RSLM).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth instance map (RSLM).
    #[arg(long)]
    pub gt: PathBuf,
    /// `{"classes": {"<gt id>": "<name>"}}`. Without it every instance is one class.
    #[arg(long, value_name = "FILE")]
    pub classes: Option<PathBuf>,
    /// Boundary band half-width for BIoU, in pixels.
    #[arg(long, default_value_t = DEFAULT_BAND)]
    pub band: u32,
    /// Also write the full report as JSON.
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ImageFormat {
    Png,
    Rrgb,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_name = "WxH", default_value = "2048x2048", value_parser = parse_dims)]
    pub size: (u32, u32),
    #[arg(long, default_value_t = 60)]
    pub objects: u32,
    #[arg(long, value_name = "LOW,HIGH", default_value = "0.62,0.98", value_parser = parse_range)]
    pub quality: (f64, f64),
    /// Receives image.<format>, gt.rslm, classes.json and scene.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = ImageFormat::Png)]
    pub format: ImageFormat,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Label map (RSLM).
    #[arg(long, short)]
    pub input: PathBuf,
    /// PNG to write.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Picks the palette; the same seed always gives the same colours.
    #[arg(long, default_value_t = 0)]
    pub palette_seed: u32,
}

pub fn eval(args: &EvalArgs) -> CliResult {
    let pred = read_map(&args.pred)?;
    let instances = read_map(&args.gt)?;
    let gt = match &args.classes {
        Some(path) => GroundTruth::from_sidecar(instances, &read_text(path)?).map_err(|e| Failure::at(path, e))?,
        None => GroundTruth::single_class(instances),
    };
    let report = evaluate(&pred, &gt, args.band).map_err(|e| Failure::usage(format!("eval: {e}")))?;
    print!("{}", report.to_table());
    println!("coverage={:.4} asa={:.4} band={}", report.coverage, report.asa, report.band);
    if let Some(path) = &args.json {
        write_text(path, &report.to_json())?;
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> CliResult {
    let (w, h) = args.size;
    if args.format == ImageFormat::Png && (w > PNG_MAX_SIDE || h > PNG_MAX_SIDE) {
        return Err(Failure::usage(format!(
            "{w}x{h} exceeds the {PNG_MAX_SIDE} px PNG limit; use --format rrgb"
        )));
    }
    let params = SceneParams::new(args.seed, w, h, args.objects, args.quality);
    let scene = synth_scene(&params).map_err(|e| Failure::usage(format!("synth: {e}")))?;
    let dir = &args.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Failure::at(dir, e))?;

    let image_path = match args.format {
        ImageFormat::Png => {
            let path = dir.join("image.png");
            write_png(&path, &scene.image())?;
            path
        }
        ImageFormat::Rrgb => {
            let path = dir.join("image.rrgb");
            let file = File::create(&path).map_err(|e| Failure::at(&path, e))?;
            let mut out = BufWriter::new(file);
            write_rrgb_source(&scene, &mut out).map_err(|e| Failure::at(&path, e))?;
            out.flush().map_err(|e| Failure::at(&path, e))?;
            path
        }
    };

    let mut class_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for o in scene.objects().iter().filter(|o| o.area > 0) {
        *class_counts.entry(o.kind.class_name()).or_default() += 1;
    }
    let stuff = class_counts.get("stuff").copied().unwrap_or(0);
    let placed: usize = class_counts.values().sum::<usize>() - stuff;
    let stats = json!({
        "params": scene.params(),
        "objects_requested": args.objects,
        "objects_placed": placed,
        "instances": scene.gt().segment_count(),
        "gt_coverage": scene.gt().coverage(),
        "class_counts": class_counts,
        "objects": scene.objects(),
    });
    write_text(&dir.join("scene.json"), &serde_json::to_string_pretty(&stats).expect("stats serialize"))?;

    let gt = GroundTruth::from_scene(scene);
    write_text(&dir.join("classes.json"), &gt.to_sidecar())?;
    write_map(&dir.join("gt.rslm"), &gt.instances)?;
    println!(
        "image={} size={w}x{h} seed={} objects_requested={} objects_placed={placed} instances={}",
        image_path.display(),
        args.seed,
        args.objects,
        gt.instances.segment_count(),
    );
    Ok(())
}

pub fn render(args: &RenderArgs) -> CliResult {
    let map = read_map(&args.input)?;
    if map.width() > PNG_MAX_SIDE || map.height() > PNG_MAX_SIDE {
        return Err(Failure::at(
            &args.input,
            format!("{}x{} exceeds the {PNG_MAX_SIDE} px PNG limit", map.width(), map.height()),
        ));
    }
    write_png(&args.output, &render_labels(&map, args.palette_seed))
}
