//! Python module `mosaicseg`.
//!
//! Label maps, synthetic scenes, the tiled pipeline, tile planning and
//! evaluation. Reports cross the boundary as JSON strings, decoded to dicts
//! with the standard `json` module.

use std::sync::Arc;

use mosaicseg_core::backend::{
    synth_scene, ProposalBackend, SceneParams, SyntheticBackend, SyntheticScene, WireBackend, WireTransport,
};
use mosaicseg_core::config::RunConfig;
use mosaicseg_core::labelmap::{palette_color, read_rslm, render_labels, write_rslm, LabelMap};
use mosaicseg_core::merge::MergeStrategy;
use mosaicseg_core::metrics::{evaluate as eval_maps, GroundTruth, DEFAULT_BAND};
use mosaicseg_core::multipass::TileError;
use mosaicseg_core::pipeline::{run_pipeline, PipelineConfig, PipelineError};
use mosaicseg_core::raster::{RasterSource, RgbImage};
use mosaicseg_core::tiler::plan_tiles as plan;
use pyo3::exceptions::{PyIOError, PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_loads<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

/// Dense map of segment ids; 0 is unlabeled.
#[pyclass(name = "LabelMap", module = "mosaicseg", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLabelMap {
    inner: LabelMap,
}

#[pymethods]
impl PyLabelMap {
    /// Builds a map from a row-major list of ids.
    #[new]
    fn new(width: u32, height: u32, labels: Vec<u32>) -> PyResult<Self> {
        LabelMap::from_labels(width, height, labels)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    #[staticmethod]
    fn from_rslm(data: &[u8]) -> PyResult<Self> {
        read_rslm(data).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        read_rslm(&bytes)
            .map(|inner| Self { inner })
            .map_err(|e| value_err(format!("{path}: {e}")))
    }

    fn to_rslm<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = write_rslm(&self.inner).map_err(value_err)?;
        Ok(PyBytes::new(py, &bytes))
    }

    fn write(&self, path: &str) -> PyResult<()> {
        let bytes = write_rslm(&self.inner).map_err(value_err)?;
        std::fs::write(path, bytes).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
    }

    #[getter]
    fn width(&self) -> u32 {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.height()
    }

    fn get(&self, x: u32, y: u32) -> PyResult<u32> {
        if x >= self.inner.width() || y >= self.inner.height() {
            return Err(PyIndexError::new_err(format!("({x}, {y}) outside the map")));
        }
        Ok(self.inner.get(x, y))
    }

    fn labels(&self) -> Vec<u32> {
        self.inner.labels().to_vec()
    }

    fn segment_count(&self) -> usize {
        self.inner.segment_count()
    }

    fn coverage(&self) -> f64 {
        self.inner.coverage()
    }

    /// False-colour RGB8 bytes, row-major; label 0 is black.
    #[pyo3(signature = (palette_seed = 0))]
    fn render<'py>(&self, py: Python<'py>, palette_seed: u32) -> Bound<'py, PyBytes> {
        PyBytes::new(py, render_labels(&self.inner, palette_seed).as_raw())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "LabelMap({}x{}, {} segments)",
            self.inner.width(),
            self.inner.height(),
            self.inner.segment_count()
        )
    }
}

/// Synthetic scene with ground truth.
#[pyclass(name = "Scene", module = "mosaicseg", frozen)]
struct PyScene {
    inner: Arc<SyntheticScene>,
}

#[pymethods]
impl PyScene {
    #[getter]
    fn width(&self) -> u32 {
        self.inner.dims().0
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.dims().1
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed()
    }

    /// RGB8 bytes, row-major.
    fn image<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.image().as_raw())
    }

    fn gt(&self) -> PyLabelMap {
        PyLabelMap {
            inner: self.inner.gt().clone(),
        }
    }

    /// `{"classes": {"<gt id>": "<name>"}}` as JSON text.
    fn classes_json(&self) -> String {
        GroundTruth::from_scene(self.inner.as_ref().clone()).to_sidecar()
    }

    /// Per-instance records: label, kind, quality, colour, bbox, area.
    fn objects<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let text = serde_json::to_string(self.inner.objects()).map_err(value_err)?;
        json_loads(py, &text)
    }
}

/// Generates a synthetic scene.
#[pyfunction]
#[pyo3(signature = (seed, width, height, n_objects = 60, quality = (0.62, 0.98)))]
fn synth(py: Python<'_>, seed: u64, width: u32, height: u32, n_objects: u32, quality: (f64, f64)) -> PyResult<PyScene> {
    let params = SceneParams::new(seed, width, height, n_objects, quality);
    let scene = py.detach(|| synth_scene(&params)).map_err(value_err)?;
    Ok(PyScene { inner: Arc::new(scene) })
}

fn build_config(
    config_toml: Option<&str>,
    tile_size: Option<u32>,
    padding: Option<u32>,
    points_per_side: Option<u32>,
    merge: Option<&str>,
    workers: Option<usize>,
) -> PyResult<RunConfig> {
    let mut cfg = match config_toml {
        Some(text) => RunConfig::from_toml(text).map_err(value_err)?,
        None => RunConfig::default(),
    };
    if let Some(v) = tile_size {
        cfg.tiling.tile_size = v;
    }
    if let Some(v) = padding {
        cfg.tiling.padding = v;
    }
    if let Some(v) = points_per_side {
        cfg.segmentation.points_per_side = v;
    }
    if let Some(v) = merge {
        cfg.merge.strategy = v.parse::<MergeStrategy>().map_err(value_err)?;
    }
    if let Some(v) = workers {
        cfg.run.workers = v;
    }
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

fn pipeline_err(e: PipelineError) -> PyErr {
    match &e {
        PipelineError::Tile {
            source: TileError::Backend { .. },
            ..
        } => PyRuntimeError::new_err(e.to_string()),
        _ => value_err(e),
    }
}

fn run<'py, S: RasterSource + ?Sized>(
    py: Python<'py>,
    source: &S,
    backend: &dyn ProposalBackend,
    cfg: &RunConfig,
) -> PyResult<(PyLabelMap, Bound<'py, PyAny>)> {
    let pcfg = PipelineConfig::from(cfg);
    let out = py
        .detach(|| run_pipeline(source, backend, &pcfg, None))
        .map_err(pipeline_err)?;
    let report = json_loads(py, &out.merge.to_json())?;
    Ok((PyLabelMap { inner: out.map }, report))
}

/// Segments a synthetic scene with its own backend.
///
/// Returns `(label_map, merge_report)`.
#[pyfunction]
#[pyo3(signature = (scene, *, config_toml = None, tile_size = None, padding = None, points_per_side = None, merge = None, workers = None))]
#[allow(clippy::too_many_arguments)]
fn segment_scene<'py>(
    py: Python<'py>,
    scene: &PyScene,
    config_toml: Option<&str>,
    tile_size: Option<u32>,
    padding: Option<u32>,
    points_per_side: Option<u32>,
    merge: Option<&str>,
    workers: Option<usize>,
) -> PyResult<(PyLabelMap, Bound<'py, PyAny>)> {
    let cfg = build_config(config_toml, tile_size, padding, points_per_side, merge, workers)?;
    let backend = SyntheticBackend::new(scene.inner.clone());
    run(py, scene.inner.as_ref(), &backend, &cfg)
}

/// Segments an RGB8 image through an external worker
/// (`tcp://host:port` or a command line).
#[pyfunction]
#[pyo3(signature = (rgb, width, height, worker, *, config_toml = None, tile_size = None, padding = None, points_per_side = None, merge = None, workers = None))]
#[allow(clippy::too_many_arguments)]
fn segment_image<'py>(
    py: Python<'py>,
    rgb: &[u8],
    width: u32,
    height: u32,
    worker: &str,
    config_toml: Option<&str>,
    tile_size: Option<u32>,
    padding: Option<u32>,
    points_per_side: Option<u32>,
    merge: Option<&str>,
    workers: Option<usize>,
) -> PyResult<(PyLabelMap, Bound<'py, PyAny>)> {
    let cfg = build_config(config_toml, tile_size, padding, points_per_side, merge, workers)?;
    let image = RgbImage::from_raw(width, height, rgb.to_vec()).map_err(value_err)?;
    let backend = WireBackend::new(WireTransport::parse(worker).map_err(value_err)?);
    run(py, &image, &backend, &cfg)
}

/// Scores `pred` against ground-truth instances. Returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (pred, gt, classes_json = None, band = DEFAULT_BAND))]
fn evaluate<'py>(
    py: Python<'py>,
    pred: &PyLabelMap,
    gt: &PyLabelMap,
    classes_json: Option<&str>,
    band: u32,
) -> PyResult<Bound<'py, PyAny>> {
    let truth = match classes_json {
        Some(text) => GroundTruth::from_sidecar(gt.inner.clone(), text).map_err(value_err)?,
        None => GroundTruth::single_class(gt.inner.clone()),
    };
    let report = py.detach(|| eval_maps(&pred.inner, &truth, band)).map_err(value_err)?;
    json_loads(py, &report.to_json())
}

/// Tile layout for an image, as a dict.
#[pyfunction]
#[pyo3(signature = (width, height, tile_size = 1000, padding = 50))]
fn plan_tiles<'py>(py: Python<'py>, width: u32, height: u32, tile_size: u32, padding: u32) -> PyResult<Bound<'py, PyAny>> {
    let p = plan(width, height, tile_size, padding).map_err(value_err)?;
    json_loads(py, &p.to_json())
}

/// Render colour of a label.
#[pyfunction]
#[pyo3(signature = (label, palette_seed = 0))]
fn label_color(label: u32, palette_seed: u32) -> (u8, u8, u8) {
    let [r, g, b] = palette_color(label, palette_seed);
    (r, g, b)
}

/// Effective default configuration as TOML.
#[pyfunction]
fn default_config() -> String {
    RunConfig::default().to_toml()
}

#[pymodule]
fn mosaicseg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLabelMap>()?;
    m.add_class::<PyScene>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(segment_scene, m)?)?;
    m.add_function(wrap_pyfunction!(segment_image, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(plan_tiles, m)?)?;
    m.add_function(wrap_pyfunction!(label_color, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    Ok(())
}
