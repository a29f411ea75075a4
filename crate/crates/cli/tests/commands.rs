use std::path::Path;
use std::process::{Command, Output};

use mosaicseg_core::labelmap::read_rslm;

fn mosaicseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mosaicseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, format: &str) {
    let o = mosaicseg(&[
        "synth", "--seed", "7", "--size", "640x512", "--objects", "8", "--quality", "0.7,0.98",
        "--out-dir", p(dir), "--format", format,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

fn segment(dir: &Path, image: &str, out: &str, extra: &[&str]) -> Output {
    let input = dir.join(image);
    let output = dir.join(out);
    let scene = dir.join("scene.json");
    let mut args = vec![
        "segment", "--input", p(&input), "--output", p(&output), "--backend", "synthetic:7",
        "--scene", p(&scene), "--tile-size", "256", "--padding", "16", "--points-per-side", "32", "-q",
    ];
    args.extend_from_slice(extra);
    mosaicseg(&args)
}

#[test]
fn synth_writes_scene_matching_the_request() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "png");
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("scene.json")).unwrap()).unwrap();
    assert_eq!(stats["params"]["seed"], 7);
    assert_eq!(stats["params"]["width"], 640);
    assert_eq!(stats["params"]["height"], 512);
    assert_eq!(stats["params"]["n_objects"], 8);
    assert_eq!(stats["objects_requested"], 8);
    assert_eq!(stats["gt_coverage"], 1.0);
    let gt = read_rslm(&std::fs::read(dir.path().join("gt.rslm")).unwrap()).unwrap();
    assert_eq!(gt.dims(), (640, 512));
    assert_eq!(stats["instances"], gt.segment_count());

    let again = tempfile::tempdir().unwrap();
    synth(again.path(), "png");
    for f in ["image.png", "gt.rslm", "classes.json", "scene.json"] {
        assert_eq!(
            std::fs::read(dir.path().join(f)).unwrap(),
            std::fs::read(again.path().join(f)).unwrap(),
            "{f} differs between runs"
        );
    }
}

#[test]
fn segment_is_reproducible_and_scores_well() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "png");
    let trace = d.join("trace");
    let report = d.join("merge.json");
    let a = segment(d, "image.png", "a.rslm", &["--trace", p(&trace), "--report", p(&report)]);
    assert!(a.status.success(), "{}", stderr(&a));
    let summary = stdout(&a);
    assert!(summary.contains("tile_size=256 padding=16 points_per_side=32"), "{summary}");
    assert!(summary.contains("strategy=best_match"), "{summary}");
    assert!(summary.contains("backend=synthetic:7"), "{summary}");

    let b = segment(d, "image.png", "b.rslm", &["--workers", "2"]);
    assert!(b.status.success(), "{}", stderr(&b));
    assert_eq!(std::fs::read(d.join("a.rslm")).unwrap(), std::fs::read(d.join("b.rslm")).unwrap());

    let traces = std::fs::read_dir(&trace).unwrap().count();
    assert_eq!(traces, 6);
    let first = std::fs::read_to_string(trace.join("tile_r000_c000.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(rec["pass"], 1);
    let merge: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(merge["strategy"], "best_match");

    let e = mosaicseg(&[
        "eval", "--pred", p(&d.join("a.rslm")), "--gt", p(&d.join("gt.rslm")),
        "--classes", p(&d.join("classes.json")), "--json", p(&d.join("eval.json")),
    ]);
    assert!(e.status.success(), "{}", stderr(&e));
    assert!(stdout(&e).contains("Det@0.5"));
    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("eval.json")).unwrap()).unwrap();
    assert!(eval["coverage"].as_f64().unwrap() > 0.95);
}

#[test]
fn streamed_rrgb_input_matches_png() {
    let png_dir = tempfile::tempdir().unwrap();
    let raw_dir = tempfile::tempdir().unwrap();
    synth(png_dir.path(), "png");
    synth(raw_dir.path(), "rrgb");
    assert!(segment(png_dir.path(), "image.png", "out.rslm", &[]).status.success());
    let o = segment(raw_dir.path(), "image.rrgb", "out.rslm", &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(png_dir.path().join("out.rslm")).unwrap(),
        std::fs::read(raw_dir.path().join("out.rslm")).unwrap()
    );
}

#[test]
fn merge_none_keeps_seams_and_merge_command_reproduces_segment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "png");
    let none = segment(d, "image.png", "none.rslm", &["--merge", "none"]);
    assert!(none.status.success(), "{}", stderr(&none));
    let full = segment(
        d,
        "image.png",
        "full.rslm",
        &["--unmerged", p(&d.join("raw.rslm")), "--plan", p(&d.join("plan.json"))],
    );
    assert!(full.status.success());
    let seams = read_rslm(&std::fs::read(d.join("none.rslm")).unwrap()).unwrap();
    let merged = read_rslm(&std::fs::read(d.join("full.rslm")).unwrap()).unwrap();
    assert!(seams.segment_count() > merged.segment_count());
    // A label never crosses the vertical tile line at x=256 without merging.
    let crossing = (0..seams.height()).filter(|&y| seams.get(255, y) == seams.get(256, y) && seams.get(255, y) != 0);
    assert_eq!(crossing.count(), 0);

    let m = mosaicseg(&[
        "merge", "--input", p(&d.join("raw.rslm")), "--plan", p(&d.join("plan.json")),
        "--output", p(&d.join("remerged.rslm")),
    ]);
    assert!(m.status.success(), "{}", stderr(&m));
    assert_eq!(std::fs::read(d.join("full.rslm")).unwrap(), std::fs::read(d.join("remerged.rslm")).unwrap());
}

#[test]
fn config_file_is_used_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "png");
    let cfg = d.join("run.toml");
    std::fs::write(&cfg, "[tiling]\ntile_size = 320\npadding = 9\n[merge]\nstrategy = \"naive\"\n[run]\nworkers = 2\n").unwrap();
    let o = segment(d, "image.png", "out.rslm", &["--config", p(&cfg), "--workers", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    // --tile-size and --padding from the helper beat the file; the rest comes from the file.
    assert!(s.contains("tile_size=256 padding=16"), "{s}");
    assert!(s.contains("strategy=naive"), "{s}");
    assert!(s.contains("workers=1"), "{s}");
    assert!(s.contains("min_mask_area=100"), "{s}");
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.png");
    let o = mosaicseg(&[
        "segment", "--input", p(&missing), "--output", p(&dir.path().join("o.rslm")), "--backend", "synthetic:1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.png"), "{}", stderr(&o));
}

#[test]
fn truncated_rslm_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "png");
    let bytes = std::fs::read(d.join("gt.rslm")).unwrap();
    std::fs::write(d.join("cut.rslm"), &bytes[..bytes.len() / 2]).unwrap();
    let o = mosaicseg(&["eval", "--pred", p(&d.join("cut.rslm")), "--gt", p(&d.join("gt.rslm"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("cut.rslm") && err.contains("truncated"), "{err}");
}

#[test]
fn eval_of_gt_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "png");
    let gt = p(&d.join("gt.rslm")).to_string();
    let o = mosaicseg(&[
        "eval", "--pred", &gt, "--gt", &gt, "--classes", p(&d.join("classes.json")), "--json",
        p(&d.join("e.json")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let e: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("e.json")).unwrap()).unwrap();
    for row in e["classes"].as_array().unwrap().iter().chain([&e["global"]]) {
        for k in ["det05", "ss_det05", "miou", "biou", "asa", "n_bar"] {
            assert_eq!(row[k], 1.0, "{k} in {row}");
        }
    }
}

#[test]
fn dimension_mismatch_in_eval_is_exit_2() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), "png");
    let o = mosaicseg(&[
        "synth", "--seed", "7", "--size", "320x200", "--objects", "2", "--out-dir", p(b.path()),
    ]);
    assert!(o.status.success());
    let o = mosaicseg(&["eval", "--pred", p(&a.path().join("gt.rslm")), "--gt", p(&b.path().join("gt.rslm"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unreachable_worker_is_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "png");
    // Bind then drop a listener so the port is very likely closed.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = format!("worker:tcp://127.0.0.1:{port}");
    let o = mosaicseg(&[
        "segment", "--input", p(&d.join("image.png")), "--output", p(&d.join("o.rslm")), "--backend", &backend,
        "--tile-size", "320", "-q",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn bad_usage_is_exit_2() {
    assert_eq!(mosaicseg(&["segment"]).status.code(), Some(2));
    assert_eq!(mosaicseg(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let o = mosaicseg(&[
        "segment", "--output", p(&dir.path().join("o.rslm")), "--backend", "magic:1", "--size", "64x64",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown backend"));
}

#[test]
fn render_is_deterministic_with_black_background() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let map = mosaicseg_core::labelmap::LabelMap::from_fn(40, 30, |x, y| if x < 5 { 0 } else { 1 + x / 10 + 4 * (y / 10) });
    std::fs::write(d.join("m.rslm"), mosaicseg_core::labelmap::write_rslm(&map).unwrap()).unwrap();
    for out in ["a.png", "b.png"] {
        let o = mosaicseg(&["render", "--input", p(&d.join("m.rslm")), "--output", p(&d.join(out))]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = std::fs::read(d.join("a.png")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.png")).unwrap());
    let img = image::load_from_memory(&a).unwrap().into_rgb8();
    assert_eq!(img.get_pixel(0, 0).0, [0, 0, 0]);
    assert_eq!(
        img.get_pixel(12, 3).0,
        mosaicseg_core::labelmap::palette_color(map.get(12, 3), 0)
    );
    assert_ne!(img.get_pixel(9, 3).0, img.get_pixel(10, 3).0);
}
