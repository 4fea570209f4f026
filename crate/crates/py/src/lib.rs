//! Python module `mrha`: synthetic skeletons, the classifier, the event
//! decider and alert formatting.
//!
//! Build with `cargo build --release -p mrha-py --features extension-module`
//! and copy `libmrha_py.so` to `mrha.so` on the Python path.

use std::path::PathBuf;

use mrha_core::alert::{format_alert, is_e164, GatewayConfig};
use mrha_core::model::{classify_sequence, init_parameters, load_checkpoint, save_checkpoint, ModelConfig, ModelParams};
use mrha_core::skeleton::{
    parse_sequence_file, prepare_frames, prepare_sample, serialize_sequence, write_sequence_file, ActivityClass,
    LabeledSample, Provenance, SkeletonSequence, Split, SplitMode, SynthOptions, MODEL_FPS,
};
use mrha_core::stream::{ActivityEvent, EventDecider, StreamConfig};
use mrha_core::tensor::Tensor;
use mrha_core::train::{cross_entropy_loss, evaluate, train, TrainConfig};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn class_of(code: &str) -> PyResult<ActivityClass> {
    code.parse().map_err(value_err)
}

fn to_grid(t: &Tensor) -> Vec<Vec<f64>> {
    let side = t.shape()[t.rank() - 1];
    t.data().chunks(side).map(<[f64]>::to_vec).collect()
}

fn from_grid(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    let side = rows.len();
    if side == 0 || rows.iter().any(|r| r.len() != side) {
        return Err(value_err("each frame must be a square list of rows"));
    }
    Tensor::new(vec![1, side, side], rows.concat()).map_err(value_err)
}

/// One labeled skeleton recording.
#[pyclass(name = "Sequence", module = "mrha")]
struct PySequence {
    inner: SkeletonSequence,
}

#[pymethods]
impl PySequence {
    /// Deterministic synthetic recording of `code` (e.g. "A43").
    #[staticmethod]
    #[pyo3(signature = (code, index = 0, seed = 0, duration = 2.0))]
    fn synthetic(code: &str, index: usize, seed: u64, duration: f64) -> PyResult<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(value_err("duration must be positive"));
        }
        let mut opts = SynthOptions::new(1, seed);
        opts.duration = duration;
        let inner = mrha_core::skeleton::generate_sequence(class_of(code)?, index, &opts);
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        parse_sequence_file(&path).map(|inner| Self { inner }).map_err(value_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_sequence_file(&self.inner, &path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn to_jsonl(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        serialize_sequence(&self.inner, &mut buf).map_err(value_err)?;
        String::from_utf8(buf).map_err(value_err)
    }

    #[getter]
    fn label(&self) -> Option<&'static str> {
        self.inner.label.map(ActivityClass::code)
    }

    #[getter]
    fn subject(&self) -> u32 {
        self.inner.subject_id
    }

    #[getter]
    fn camera(&self) -> u32 {
        self.inner.camera_id
    }

    #[getter]
    fn fps(&self) -> f64 {
        self.inner.source_fps
    }

    fn __len__(&self) -> usize {
        self.inner.frames.len()
    }

    /// `(timestamp, joints)` pairs, joints as 25 `[x, y, z]` triples.
    fn frames(&self) -> Vec<(f64, Vec<[f64; 3]>)> {
        self.inner.frames.iter().map(|f| (f.timestamp, f.joints.to_vec())).collect()
    }

    /// Resampled to `fps` and rendered as `grid x grid` images.
    #[pyo3(signature = (grid, fps = MODEL_FPS))]
    fn rasters(&self, grid: usize, fps: f64) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let frames = prepare_frames(&self.inner, grid, fps).map_err(value_err)?;
        Ok(frames.iter().map(to_grid).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Sequence(label={}, subject={}, camera={}, frames={})",
            self.label().unwrap_or("None"),
            self.inner.subject_id,
            self.inner.camera_id,
            self.inner.frames.len()
        )
    }
}

fn samples(seqs: &[PyRef<'_, PySequence>], grid: usize) -> PyResult<Vec<LabeledSample>> {
    seqs.iter()
        .enumerate()
        .map(|(i, s)| prepare_sample(&s.inner, grid, MODEL_FPS, format!("seq{i}")).map_err(value_err))
        .collect()
}

/// Classifier parameters with their configuration.
#[pyclass(name = "Model", module = "mrha")]
struct PyModel {
    params: ModelParams,
}

#[pymethods]
impl PyModel {
    /// Fresh weights for a preset ("desk", "full", "gradient_check") or a
    /// model configuration given as JSON.
    #[new]
    #[pyo3(signature = (config = "desk", seed = 0))]
    fn new(config: &str, seed: u64) -> PyResult<Self> {
        let cfg = match config {
            "desk" => ModelConfig::desk(),
            "full" => ModelConfig::default(),
            "gradient_check" => ModelConfig::gradient_check(),
            json => serde_json::from_str(json).map_err(value_err)?,
        };
        init_parameters(&cfg, seed).map(|params| Self { params }).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_checkpoint(&path).map(|params| Self { params }).map_err(value_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.params, &path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn input_grid(&self) -> usize {
        self.params.config().input_grid
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.params.config().num_classes
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(self.params.config()).map_err(value_err)
    }

    /// Posterior over classes for a list of `grid x grid` frames.
    fn classify(&self, frames: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<f64>> {
        let frames = frames.iter().map(|f| from_grid(f)).collect::<PyResult<Vec<_>>>()?;
        Ok(classify_sequence(&frames, &self.params).map_err(value_err)?.data().to_vec())
    }

    /// Posterior for a whole skeleton recording.
    fn classify_sequence(&self, seq: PyRef<'_, PySequence>) -> PyResult<Vec<f64>> {
        let frames = prepare_frames(&seq.inner, self.input_grid(), MODEL_FPS).map_err(value_err)?;
        Ok(classify_sequence(&frames, &self.params).map_err(value_err)?.data().to_vec())
    }

    /// Trains in place; returns `(epoch, loss, accuracy)` per epoch.
    #[pyo3(signature = (sequences, epochs = 10, learning_rate = 1e-3, batch_size = 16, seed = 0))]
    fn fit(
        &mut self,
        sequences: Vec<PyRef<'_, PySequence>>,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<Vec<(usize, f64, f64)>> {
        let data = samples(&sequences, self.input_grid())?;
        let tc = TrainConfig {
            epochs,
            learning_rate,
            batch_size,
            seed,
            ..Default::default()
        };
        let out = train(self.params.clone(), &data, &tc, |_| true).map_err(value_err)?;
        self.params = out.params;
        Ok(out.history.iter().map(|r| (r.epoch, r.loss, r.accuracy)).collect())
    }

    fn accuracy(&self, sequences: Vec<PyRef<'_, PySequence>>) -> PyResult<f64> {
        let data = samples(&sequences, self.input_grid())?;
        Ok(evaluate(&self.params, &data).map_err(value_err)?.accuracy)
    }
}

/// A debounced activity event.
#[pyclass(name = "Event", module = "mrha", get_all)]
struct PyEvent {
    id: u64,
    code: &'static str,
    name: &'static str,
    critical: bool,
    confidence: f64,
    window_start: f64,
    window_end: f64,
}

impl PyEvent {
    fn core(&self) -> PyResult<ActivityEvent> {
        Ok(ActivityEvent {
            id: self.id,
            label: mrha_core::skeleton::ActivityLabel::new(class_of(self.code)?, self.critical),
            confidence: self.confidence,
            window_start: self.window_start,
            window_end: self.window_end,
        })
    }
}

#[pymethods]
impl PyEvent {
    /// SMS text; `window_end` is read as Unix seconds.
    #[pyo3(signature = (patient, utc_offset = "+00:00"))]
    fn alert_text(&self, patient: &str, utc_offset: &str) -> PyResult<String> {
        let gw = GatewayConfig {
            utc_offset: utc_offset.into(),
            ..Default::default()
        };
        format_alert(&self.core()?, patient, gw.offset().map_err(value_err)?).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("Event(id={}, code={}, confidence={:.3}, window_end={})", self.id, self.code, self.confidence, self.window_end)
    }
}

#[pyclass(name = "EventDecider", module = "mrha")]
struct PyEventDecider {
    inner: EventDecider,
}

#[pymethods]
impl PyEventDecider {
    #[new]
    #[pyo3(signature = (threshold = 0.7, consecutive = 2, cooldown = 30.0))]
    fn new(threshold: f64, consecutive: usize, cooldown: f64) -> PyResult<Self> {
        let cfg = StreamConfig {
            confidence_threshold: threshold,
            consecutive_required: consecutive,
            cooldown_seconds: cooldown,
            ..Default::default()
        };
        cfg.validate().map_err(value_err)?;
        Ok(Self { inner: EventDecider::new(cfg) })
    }

    /// Feeds one window posterior; returns an event when one fires.
    fn decide(&mut self, posterior: Vec<f64>, window_start: f64, window_end: f64) -> PyResult<Option<PyEvent>> {
        let p = Tensor::new(vec![posterior.len()], posterior).map_err(value_err)?;
        Ok(self.inner.decide(&p, window_start, window_end).map(|e| PyEvent {
            id: e.id,
            code: e.label.code(),
            name: e.label.display_name(),
            critical: e.label.critical,
            confidence: e.confidence,
            window_start: e.window_start,
            window_end: e.window_end,
        }))
    }
}

/// `(code, name, critical by default)` for the twelve classes.
#[pyfunction]
fn classes() -> Vec<(&'static str, &'static str, bool)> {
    ActivityClass::ALL.iter().map(|c| (c.code(), c.display_name(), c.is_default_critical())).collect()
}

#[pyfunction]
fn cross_entropy(probabilities: Vec<f64>, target: usize) -> PyResult<f64> {
    let p = Tensor::new(vec![probabilities.len()], probabilities).map_err(value_err)?;
    cross_entropy_loss(&p, target).map_err(value_err)
}

struct Tag(u32, u32);

impl Provenance for Tag {
    fn subject_id(&self) -> u32 {
        self.0
    }
    fn camera_id(&self) -> u32 {
        self.1
    }
}

/// Group-disjoint split; returns `(train_indices, test_indices)`.
#[pyfunction]
#[pyo3(signature = (subjects, cameras, mode = "cross-subject", train_fraction = 0.8, seed = 0))]
fn split(
    subjects: Vec<u32>,
    cameras: Vec<u32>,
    mode: &str,
    train_fraction: f64,
    seed: u64,
) -> PyResult<(Vec<usize>, Vec<usize>)> {
    if subjects.len() != cameras.len() {
        return Err(value_err("subjects and cameras differ in length"));
    }
    let mode = match mode {
        "cross-subject" => SplitMode::CrossSubject,
        "cross-view" => SplitMode::CrossView,
        other => return Err(value_err(format!("unknown split mode '{other}'"))),
    };
    let items: Vec<Tag> = subjects.into_iter().zip(cameras).map(|(s, c)| Tag(s, c)).collect();
    let s = Split::compute(&items, mode, train_fraction, seed).map_err(value_err)?;
    Ok((s.train, s.test))
}

#[pyfunction(name = "is_e164")]
fn py_is_e164(number: &str) -> bool {
    is_e164(number)
}

#[pymodule]
#[pyo3(name = "mrha")]
fn mrha_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySequence>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyEvent>()?;
    m.add_class::<PyEventDecider>()?;
    m.add_function(wrap_pyfunction!(classes, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(py_is_e164, m)?)?;
    m.add("MODEL_FPS", MODEL_FPS)?;
    Ok(())
}
