//! `mosaicseg`: tiled multi-pass segmentation of large rasters.
//!
//! Exit status is 0 on success, 2 for usage and input errors and 3 when the
//! proposal backend or its wire protocol fails.

mod fail;
mod files;
mod run;
mod settings;
mod tools;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "mosaicseg", version, about = "Tiled multi-pass mask-proposal segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment a raster: tile, run multi-pass proposals per tile, merge.
    Segment(run::SegmentArgs),
    /// Merge an unmerged label map using its tile plan.
    Merge(run::MergeArgs),
    /// Score a label map against ground truth.
    Eval(tools::EvalArgs),
    /// Generate a synthetic scene with ground truth.
    Synth(tools::SynthArgs),
    /// Render a label map as a false-colour PNG.
    Render(tools::RenderArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Segment(a) => run::segment(a),
        Command::Merge(a) => run::merge(a),
        Command::Eval(a) => tools::eval(a),
        Command::Synth(a) => tools::synth(a),
        Command::Render(a) => tools::render(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("mosaicseg: {f}");
            ExitCode::from(f.code)
        }
    }
}
