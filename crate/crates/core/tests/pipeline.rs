use std::sync::Arc;

use mosaicseg_core::backend::{synth_scene, SceneParams, SyntheticBackend};
use mosaicseg_core::config::RunConfig;
use mosaicseg_core::labelmap::{read_rslm, write_rslm};
use mosaicseg_core::merge::MergeStrategy;
use mosaicseg_core::metrics::{evaluate, GroundTruth, DEFAULT_BAND};
use mosaicseg_core::pipeline::{run_pipeline, PipelineConfig};
use mosaicseg_core::raster::{write_rrgb_source, RrgbFile};

fn config(toml: &str) -> PipelineConfig {
    PipelineConfig::from(&RunConfig::from_toml(toml).unwrap())
}

#[test]
fn toml_config_drives_the_pipeline() {
    let cfg = config(
        "[tiling]\ntile_size = 200\npadding = 20\n[segmentation]\npoints_per_side = 32\n[run]\nworkers = 2\n",
    );
    assert_eq!((cfg.tile_size, cfg.padding, cfg.workers), (200, 20, 2));
    assert_eq!(cfg.pass.points_per_side, 32);
    assert_eq!(cfg.merge.strategy, MergeStrategy::BestMatch);

    let scene = Arc::new(synth_scene(&SceneParams::new(5, 600, 400, 6, (0.7, 0.95))).unwrap());
    let out = run_pipeline(scene.as_ref(), &SyntheticBackend::new(scene.clone()), &cfg, None).unwrap();
    assert_eq!(out.plan.tiles.len(), 6);
    assert!(out.map.coverage() >= 0.99);
    assert_eq!(out.map.next_label() as usize, out.merge.segments_final + 1);
    let back = read_rslm(&write_rslm(&out.map).unwrap()).unwrap();
    assert_eq!(back, out.map);
}

#[test]
fn streamed_file_input_matches_in_memory_scene() {
    let scene = Arc::new(synth_scene(&SceneParams::new(8, 700, 500, 8, (0.65, 0.95))).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.rrgb");
    write_rrgb_source(scene.as_ref(), std::fs::File::create(&path).unwrap()).unwrap();
    let file = RrgbFile::open(&path).unwrap();
    let cfg = PipelineConfig {
        tile_size: 256,
        padding: 16,
        ..PipelineConfig::default()
    };
    let backend = SyntheticBackend::new(scene.clone());
    let from_file = run_pipeline(&file, &backend, &cfg, None).unwrap();
    let from_memory = run_pipeline(scene.as_ref(), &backend, &cfg, None).unwrap();
    assert_eq!(from_file.map, from_memory.map);
}

#[test]
fn skipping_the_merge_leaves_tile_seams() {
    let scene = Arc::new(synth_scene(&SceneParams::new(21, 768, 768, 10, (0.7, 0.95))).unwrap());
    let backend = SyntheticBackend::new(scene.clone());
    let run = |strategy: &str| {
        let cfg = config(&format!(
            "[tiling]\ntile_size = 256\npadding = 16\n[merge]\nstrategy = \"{strategy}\"\n"
        ));
        run_pipeline(scene.as_ref(), &backend, &cfg, None).unwrap()
    };
    let merged = run("best_match");
    let seams = run("none");
    assert_eq!(seams.merge.merges, 0);
    assert!(seams.map.segment_count() > merged.map.segment_count());

    let gt = GroundTruth::from_scene((*scene).clone());
    let with = evaluate(&merged.map, &gt, DEFAULT_BAND).unwrap();
    let without = evaluate(&seams.map, &gt, DEFAULT_BAND).unwrap();
    // Without merging, objects cut by tile lines need several segments.
    assert!(without.global.n_bar > with.global.n_bar);
    assert!(without.global.ss_det05 <= with.global.ss_det05);
}

#[test]
fn more_workers_same_answer() {
    let scene = Arc::new(synth_scene(&SceneParams::new(31, 900, 700, 12, (0.62, 0.98))).unwrap());
    let backend = SyntheticBackend::new(scene.clone());
    let base = PipelineConfig {
        tile_size: 256,
        padding: 24,
        ..PipelineConfig::default()
    };
    let one = run_pipeline(scene.as_ref(), &backend, &base, None).unwrap();
    for workers in [2, 4, 7] {
        let cfg = PipelineConfig { workers, ..base.clone() };
        assert_eq!(run_pipeline(scene.as_ref(), &backend, &cfg, None).unwrap().map, one.map);
    }
}
