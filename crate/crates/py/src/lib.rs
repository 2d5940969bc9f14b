//! Python bindings: datasets, noise injection, training, evaluation and
//! gradient checking.

use pyo3::exceptions::{PyIOError, PyIndexError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use oamil::data::{self, AnnotatedDataset, LayoutSpec, Provenance};
use oamil::detector::{self as det, Checkpoint, ToyDetector};
use oamil::eval::{self, Detection, EvalSpec, MetricsRecord};
use oamil::experiment::{self, SweepSpec};
use oamil::trainer::{self, Mode};
use oamil::{gradcheck, mil, noise, BBox, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait OrPy<T> {
    fn or_py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for oamil::Result<T> {
    fn or_py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Axis-aligned box in corner form.
#[pyclass(name = "BBox", module = "oamil", frozen, eq, from_py_object)]
#[derive(Clone, Copy, PartialEq)]
struct PyBBox(BBox);

#[pymethods]
impl PyBBox {
    #[new]
    fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> PyResult<Self> {
        BBox::try_new(x1, y1, x2, y2).map(PyBBox).or_py()
    }

    #[getter]
    fn x1(&self) -> f64 {
        self.0.x1
    }
    #[getter]
    fn y1(&self) -> f64 {
        self.0.y1
    }
    #[getter]
    fn x2(&self) -> f64 {
        self.0.x2
    }
    #[getter]
    fn y2(&self) -> f64 {
        self.0.y2
    }

    fn width(&self) -> f64 {
        self.0.width()
    }

    fn height(&self) -> f64 {
        self.0.height()
    }

    fn area(&self) -> f64 {
        self.0.area()
    }

    fn iou(&self, other: &PyBBox) -> f64 {
        self.0.iou(&other.0)
    }

    /// `alpha * self + (1 - alpha) * other`, per corner.
    fn lerp(&self, other: &PyBBox, alpha: f64) -> PyBBox {
        PyBBox(self.0.lerp(&other.0, alpha))
    }

    /// Regression deltas `(dx, dy, dw, dh)` mapping `anchor` onto this box.
    fn encode(&self, anchor: &PyBBox) -> [f64; 4] {
        self.0.encode(&anchor.0).to_array()
    }

    fn decode(&self, deltas: [f64; 4]) -> PyBBox {
        PyBBox(self.0.decode(&oamil::geometry::BoxDeltas::from_array(deltas)))
    }

    #[allow(clippy::wrong_self_convention)]
    fn to_tuple(&self) -> (f64, f64, f64, f64) {
        (self.0.x1, self.0.y1, self.0.x2, self.0.y2)
    }

    fn __repr__(&self) -> String {
        format!("BBox({}, {}, {}, {})", self.0.x1, self.0.y1, self.0.x2, self.0.y2)
    }
}

/// COCO-style annotation set, optionally carrying synthetic scene geometry.
#[pyclass(name = "Dataset", module = "oamil", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset(AnnotatedDataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        data::read_annotations(path).map(PyDataset).or_py()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        data::read_annotations_str(text, "<string>").map(PyDataset).or_py()
    }

    fn write(&self, path: &str) -> PyResult<()> {
        data::write_annotations(&self.0, path).or_py()
    }

    fn to_json(&self) -> PyResult<String> {
        data::to_json_string(&self.0).or_py()
    }

    fn __len__(&self) -> usize {
        self.0.images.len()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    #[getter]
    fn annotation_count(&self) -> usize {
        self.0.annotation_count()
    }

    /// `None` for clean data, otherwise `(r, seed)`.
    #[getter]
    fn noise(&self) -> Option<(f64, u64)> {
        match self.0.provenance {
            Provenance::Clean => None,
            Provenance::Noisy { r, seed } => Some((r, seed)),
        }
    }

    /// Annotated boxes of image `index` as `(BBox, class_index)` pairs.
    fn boxes(&self, index: usize) -> PyResult<Vec<(PyBBox, usize)>> {
        self.check(index)?;
        let b = self.0.labeled_boxes(index).or_py()?;
        Ok(b.into_iter().map(|l| (PyBBox(l.bbox), l.class_id)).collect())
    }

    /// Object boxes of the scene behind image `index`.
    fn clean_boxes(&self, index: usize) -> PyResult<Vec<(PyBBox, usize)>> {
        self.check(index)?;
        let b = self.0.clean_boxes(index).or_py()?;
        Ok(b.into_iter().map(|l| (PyBBox(l.bbox), l.class_id)).collect())
    }

    /// Perturb every box with shift/scale noise of level `r`.
    fn inject_noise(&self, r: f64, seed: u64) -> PyResult<PyDataset> {
        let spec = noise::NoiseSpec::new(r, seed).or_py()?;
        noise::perturb_dataset(&self.0, &spec).map(PyDataset).or_py()
    }

    /// Mean IoU between corresponding boxes of two datasets.
    fn mean_iou(&self, other: &PyDataset) -> PyResult<f64> {
        noise::mean_annotation_iou(&self.0, &other.0).or_py()
    }

    fn split(&self, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        data::split_indices(self.0.images.len(), val_fraction, seed)
    }
}

impl PyDataset {
    fn check(&self, index: usize) -> PyResult<()> {
        if index >= self.0.images.len() {
            return Err(PyIndexError::new_err(format!("image index {index} out of range")));
        }
        Ok(())
    }
}

#[pyfunction]
#[pyo3(signature = (scenes, classes=3, seed=0, width=128, height=128, min_objects=1, max_objects=4))]
fn generate_scenes(
    scenes: usize,
    classes: usize,
    seed: u64,
    width: u32,
    height: u32,
    min_objects: usize,
    max_objects: usize,
) -> PyResult<PyDataset> {
    let layout = LayoutSpec {
        width,
        height,
        num_classes: classes,
        min_objects,
        max_objects,
        ..LayoutSpec::default()
    };
    data::generate_scenes(scenes, &layout, seed).map(PyDataset).or_py()
}

/// Training configuration. Keyword arguments override the defaults; see
/// `to_dict()` for every field.
#[pyclass(name = "TrainConfig", module = "oamil", skip_from_py_object)]
#[derive(Clone)]
struct PyTrainConfig(trainer::TrainConfig);

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut c = PyTrainConfig(trainer::TrainConfig::default());
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                c.set(&k.extract::<String>()?, &v)?;
            }
        }
        c.0.validate().or_py()?;
        Ok(c)
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let c = &mut self.0;
        match key {
            "mode" => c.mode = value.extract::<String>()?.parse::<Mode>().or_py()?,
            "epochs" => c.epochs = value.extract()?,
            "batch_size" => c.batch_size = value.extract()?,
            "learning_rate" => c.learning_rate = value.extract()?,
            "momentum" => c.momentum = value.extract()?,
            "seed" => c.seed = value.extract()?,
            "init_scale" => c.init_scale = value.extract()?,
            "shared" => c.shared = value.extract()?,
            "val_fraction" => c.val_fraction = value.extract()?,
            "track_val_map" => c.track_val_map = value.extract()?,
            "gamma" => c.mil.gamma = value.extract()?,
            "theta" => c.mil.theta = value.extract()?,
            "n_extend" => c.mil.n_extend = value.extract()?,
            "lambda_" | "lambda" => c.mil.lambda = value.extract()?,
            "label_iou" => c.mil.label_iou = value.extract()?,
            "assign_iou" => c.mil.assign_iou = value.extract()?,
            "negative_bag_size" => c.mil.negative_bag_size = value.extract()?,
            "beta" => c.mil.beta = value.extract()?,
            "per_object" => c.proposals.per_object = value.extract()?,
            "jitter" => c.proposals.jitter = value.extract()?,
            "negatives" => c.proposals.negatives = value.extract()?,
            other => return Err(PyKeyError::new_err(format!("unknown training option `{other}`"))),
        }
        Ok(())
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = &self.0;
        let d = PyDict::new(py);
        d.set_item("mode", c.mode.as_str())?;
        d.set_item("epochs", c.epochs)?;
        d.set_item("batch_size", c.batch_size)?;
        d.set_item("learning_rate", c.learning_rate)?;
        d.set_item("momentum", c.momentum)?;
        d.set_item("seed", c.seed)?;
        d.set_item("init_scale", c.init_scale)?;
        d.set_item("shared", c.shared)?;
        d.set_item("val_fraction", c.val_fraction)?;
        d.set_item("track_val_map", c.track_val_map)?;
        d.set_item("gamma", c.mil.gamma)?;
        d.set_item("theta", c.mil.theta)?;
        d.set_item("n_extend", c.mil.n_extend)?;
        d.set_item("lambda", c.mil.lambda)?;
        d.set_item("label_iou", c.mil.label_iou)?;
        d.set_item("assign_iou", c.mil.assign_iou)?;
        d.set_item("negative_bag_size", c.mil.negative_bag_size)?;
        d.set_item("beta", c.mil.beta)?;
        d.set_item("per_object", c.proposals.per_object)?;
        d.set_item("jitter", c.proposals.jitter)?;
        d.set_item("negatives", c.proposals.negatives)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("TrainConfig(mode={:?}, epochs={}, seed={})", self.0.mode.as_str(), self.0.epochs, self.0.seed)
    }
}

/// A trained detector.
#[pyclass(name = "Detector", module = "oamil", skip_from_py_object)]
#[derive(Clone)]
struct PyDetector(Checkpoint);

#[pymethods]
impl PyDetector {
    #[new]
    #[pyo3(signature = (num_classes, shared=true))]
    fn new(num_classes: usize, shared: bool) -> Self {
        PyDetector(Checkpoint::new(ToyDetector::new(num_classes, shared)))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        det::load_checkpoint(path).map(PyDetector).or_py()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        det::save_checkpoint(&self.0, path).or_py()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.detector.num_classes()
    }

    #[getter]
    fn meta(&self) -> std::collections::BTreeMap<String, String> {
        self.0.meta.clone()
    }

    /// Post-NMS detections on image `index` as dicts.
    fn detect<'py>(&self, py: Python<'py>, dataset: &PyDataset, index: usize) -> PyResult<Bound<'py, PyList>> {
        dataset.check(index)?;
        let scene = dataset.0.images[index].scene().or_py()?;
        let dets = eval::detect(&self.0.detector, scene, &Default::default(), index).or_py()?;
        let out = PyList::empty(py);
        for d in dets {
            out.append(detection_dict(py, &d)?)?;
        }
        Ok(out)
    }

    /// mAP@0.5 and the classification/localization diagnostic against clean
    /// scene geometry, over `indices` or every image.
    #[pyo3(signature = (dataset, indices=None))]
    fn evaluate<'py>(&self, py: Python<'py>, dataset: &PyDataset, indices: Option<Vec<usize>>) -> PyResult<Bound<'py, PyDict>> {
        if let Some(ix) = &indices {
            for &i in ix {
                dataset.check(i)?;
            }
        }
        let spec = EvalSpec::default();
        let report = py
            .detach(|| eval::evaluate(&self.0.detector, &dataset.0, indices.as_deref(), &spec))
            .or_py()?;
        let d = PyDict::new(py);
        d.set_item("map50", report.map50)?;
        d.set_item("per_class_ap", report.ap.per_class)?;
        d.set_item("cls_acc", report.diagnostic.cls_acc)?;
        d.set_item("loc_prec", report.diagnostic.loc_prec)?;
        Ok(d)
    }
}

fn detection_dict<'py>(py: Python<'py>, d: &Detection) -> PyResult<Bound<'py, PyDict>> {
    let x = PyDict::new(py);
    x.set_item("bbox", PyBBox(d.bbox))?;
    x.set_item("class_id", d.class_id)?;
    x.set_item("confidence", d.confidence)?;
    Ok(x)
}

fn metrics_dict<'py>(py: Python<'py>, m: &MetricsRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("run_id", &m.run_id)?;
    d.set_item("mode", &m.mode)?;
    d.set_item("noise_r", m.noise_r)?;
    d.set_item("seed", m.seed)?;
    d.set_item("map50", m.map50)?;
    d.set_item("cls_acc", m.cls_acc)?;
    d.set_item("loc_prec", m.loc_prec)?;
    Ok(d)
}

/// Train a detector. Returns `(detector, log)` where `log` is a list of
/// per-epoch dicts.
#[pyfunction]
#[pyo3(signature = (dataset, config=None))]
fn train<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    config: Option<&PyTrainConfig>,
) -> PyResult<(PyDetector, Bound<'py, PyList>)> {
    let cfg = config.map(|c| c.0.clone()).unwrap_or_default();
    let (detector, log) = py.detach(|| trainer::train(&dataset.0, &cfg)).or_py()?;
    let rows = PyList::empty(py);
    for e in &log.epochs {
        let d = PyDict::new(py);
        d.set_item("epoch", e.epoch)?;
        d.set_item("total_loss", e.loss.total)?;
        d.set_item("selector", e.loss.selector)?;
        d.set_item("classifier", e.loss.classifier)?;
        d.set_item("generator", e.loss.generator)?;
        d.set_item("val_map50", e.val_map50)?;
        rows.append(d)?;
    }
    let mut ckpt = Checkpoint::new(detector);
    ckpt.meta.insert("mode".into(), cfg.mode.to_string());
    ckpt.meta.insert("seed".into(), cfg.seed.to_string());
    ckpt.meta.insert("val_fraction".into(), cfg.val_fraction.to_string());
    Ok((PyDetector(ckpt), rows))
}

/// Grid of train/evaluate runs; one metrics dict per cell, sorted by mode,
/// noise level and seed.
#[pyfunction]
#[pyo3(signature = (modes, r_levels, seeds=5, scenes=250, config=None))]
fn sweep<'py>(
    py: Python<'py>,
    modes: Vec<String>,
    r_levels: Vec<f64>,
    seeds: u64,
    scenes: usize,
    config: Option<&PyTrainConfig>,
) -> PyResult<Bound<'py, PyList>> {
    let spec = SweepSpec {
        modes: modes.iter().map(|m| m.parse()).collect::<oamil::Result<_>>().or_py()?,
        r_levels,
        seeds,
        scenes,
        layout: LayoutSpec::default(),
        train: config.map(|c| c.0.clone()).unwrap_or_default(),
    };
    let rows = py.detach(|| experiment::sweep(&spec)).or_py()?;
    let out = PyList::empty(py);
    for r in &rows {
        out.append(metrics_dict(py, r)?)?;
    }
    Ok(out)
}

/// Bounded selection weight `min(x ** gamma, theta)`.
#[pyfunction]
#[pyo3(signature = (x, gamma=7.5, theta=0.85))]
fn phi(x: f64, gamma: f64, theta: f64) -> PyResult<f64> {
    mil::phi(x, gamma, theta).or_py()
}

/// Finite-difference check of the loss gradients on random configurations.
#[pyfunction]
#[pyo3(signature = (seed=0, configurations=20))]
fn gradient_check<'py>(py: Python<'py>, seed: u64, configurations: usize) -> PyResult<Bound<'py, PyDict>> {
    let r = py.detach(|| gradcheck::gradient_check(seed, configurations)).or_py()?;
    let d = PyDict::new(py);
    d.set_item("configurations", r.configurations)?;
    d.set_item("coordinates", r.coordinates)?;
    d.set_item("max_relative_error", r.max_relative_error)?;
    d.set_item("all_terms_covered", r.all_terms_covered)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "oamil")]
fn oamil_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("MODES", Mode::ALL.map(Mode::as_str).to_vec())?;
    m.add_class::<PyBBox>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyDetector>()?;
    m.add_function(wrap_pyfunction!(generate_scenes, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(phi, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    Ok(())
}
