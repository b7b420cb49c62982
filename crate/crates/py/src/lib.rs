//! Python bindings: metrics, query refinement, mixture synthesis, model
//! construction and checkpoint loading, and refined extraction.

use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyOSError, PyValueError};
use pyo3::prelude::*;

use tse_core::metrics;
use tse_core::model::{self, ModelConfig, ScalePreset, TseModel};
use tse_core::refinement::{self, RefinementConfig, RefinementMode};
use tse_core::synthesis::{self, ClassVocabulary, MixturePreset};
use tse_core::{Query, TseError};

fn py_err(e: TseError) -> PyErr {
    match e {
        TseError::MissingArtifact(p) => PyFileNotFoundError::new_err(p.display().to_string()),
        TseError::Io(e) => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn scale_preset(name: &str) -> PyResult<ScalePreset> {
    match name {
        "paper" => Ok(ScalePreset::Paper),
        "toy" => Ok(ScalePreset::Toy),
        "miniature" => Ok(ScalePreset::Miniature),
        other => Err(PyValueError::new_err(format!("unknown scale {other:?}; expected paper, toy or miniature"))),
    }
}

fn refinement_config(mode: &str, theta: f64) -> PyResult<RefinementConfig> {
    let mode = RefinementMode::parse(mode)
        .ok_or_else(|| PyValueError::new_err(format!("unknown mode {mode:?}; expected off, model or oracle")))?;
    RefinementConfig::new(theta, mode).map_err(py_err)
}

/// SNR of `estimate` against `reference`, in dB.
#[pyfunction]
fn snr(reference: Vec<f64>, estimate: Vec<f64>) -> PyResult<f64> {
    metrics::snr_samples(&reference, &estimate).map_err(py_err)
}

/// SNR improvement of `estimate` over `mixture` with respect to `target`, in dB.
#[pyfunction]
fn snr_improvement(target: Vec<f64>, estimate: Vec<f64>, mixture: Vec<f64>) -> PyResult<f64> {
    metrics::snr_improvement_samples(&target, &estimate, &mixture).map_err(py_err)
}

/// Output-to-mixture energy ratio in dB; lower means stronger suppression.
#[pyfunction]
fn attenuation_ratio(mixture: Vec<f64>, estimate: Vec<f64>) -> PyResult<f64> {
    metrics::attenuation_ratio_samples(&mixture, &estimate).map_err(py_err)
}

/// Keeps the queried classes whose probability is at least `theta`.
#[pyfunction]
fn refine_query(query: Vec<bool>, probs: Vec<f64>, theta: f64) -> PyResult<Vec<bool>> {
    refinement::refine_query(&Query::new(query), &probs, theta).map(|q| q.bits().to_vec()).map_err(py_err)
}

/// `(parameters, MACs per second of audio)` for a model configuration.
#[pyfunction]
#[pyo3(signature = (scale, classes, classifier=true))]
fn count_params_macs(scale: &str, classes: usize, classifier: bool) -> PyResult<(usize, f64)> {
    let c = model::count_params_macs(&ModelConfig::for_scale(scale_preset(scale)?, classes, classifier));
    Ok((c.params, c.macs_per_second))
}

/// Number of encoder frames for `samples` input samples.
#[pyfunction]
fn frame_count(samples: usize, window: usize, hop: usize) -> PyResult<usize> {
    model::frame_count(samples, window, hop).map_err(py_err)
}

/// Names of the built-in toy sound classes.
#[pyfunction]
fn toy_classes() -> Vec<String> {
    ClassVocabulary::toy().names().to_vec()
}

/// A synthesized mixture with its per-class stems and activity labels.
#[pyclass(module = "tse_lab", frozen)]
struct Mixture {
    inner: synthesis::MixtureSample,
}

#[pymethods]
impl Mixture {
    #[getter]
    fn mixture(&self) -> Vec<f64> {
        self.inner.mixture.samples().to_vec()
    }

    #[getter]
    fn activity(&self) -> Vec<bool> {
        self.inner.activity.clone()
    }

    #[getter]
    fn active_classes(&self) -> Vec<usize> {
        self.inner.active_indices()
    }

    #[getter]
    fn snr_db(&self) -> f64 {
        self.inner.snr_db
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    /// Sum of the stems of `classes`; silence when none of them is active.
    fn target(&self, classes: Vec<usize>) -> Vec<f64> {
        self.inner.target_for(&classes).samples().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.mixture.samples().len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Mixture(seed={}, samples={}, active={:?}, snr_db={:.2})",
            self.inner.seed,
            self.inner.mixture.samples().len(),
            self.inner.active_indices(),
            self.inner.snr_db
        )
    }
}

/// Deterministically synthesizes one toy-preset mixture over the first `classes` toy classes.
#[pyfunction]
#[pyo3(signature = (seed, classes=None))]
fn synthesize_toy_mixture(seed: u64, classes: Option<usize>) -> PyResult<Mixture> {
    let vocab = match classes {
        Some(c) => ClassVocabulary::toy_subset(c).map_err(py_err)?,
        None => ClassVocabulary::toy(),
    };
    let inner = synthesis::synthesize_mixture(&vocab, &MixturePreset::toy(), seed).map_err(py_err)?;
    Ok(Mixture { inner })
}

/// Result of one refined extraction.
#[pyclass(module = "tse_lab", frozen, get_all)]
struct Extraction {
    estimate: Vec<f64>,
    refined_query: Vec<bool>,
    probs: Option<Vec<f64>>,
}

#[pymethods]
impl Extraction {
    fn __repr__(&self) -> String {
        format!("Extraction(samples={}, refined_query={:?})", self.estimate.len(), self.refined_query)
    }
}

/// Extraction network with an optional event-classifier head.
#[pyclass(module = "tse_lab", frozen)]
struct Model {
    inner: TseModel<f32>,
}

#[pymethods]
impl Model {
    /// Randomly initialised model at a named scale.
    #[new]
    #[pyo3(signature = (scale, classes, classifier=true, seed=0))]
    fn new(scale: &str, classes: usize, classifier: bool, seed: u64) -> PyResult<Self> {
        let cfg = ModelConfig::for_scale(scale_preset(scale)?, classes, classifier);
        Ok(Self { inner: TseModel::new(cfg, seed).map_err(py_err)? })
    }

    /// Loads a checkpoint written by the training pipeline.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = model::load_checkpoint(&path, None).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    #[getter]
    fn has_classifier(&self) -> bool {
        self.inner.has_classifier()
    }

    #[getter]
    fn num_params(&self) -> usize {
        model::count_params_macs(self.inner.config()).params
    }

    /// Clip-level class presence probabilities for a mixture.
    fn classify(&self, py: Python<'_>, mixture: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = model::to_model_input::<f32>(&mixture);
        py.detach(|| {
            let analysis = self.inner.analyze(&x)?;
            match analysis.prediction {
                Some(p) => Ok(p.clip_probs_f64()),
                None => Err(TseError::NoClassifier("classification needs the proposed system".into())),
            }
        })
        .map_err(py_err)
    }

    /// Extracts the queried classes; `mode` is off, model or oracle (the latter needs `activity`).
    #[pyo3(signature = (mixture, query, mode="off", theta=0.0, activity=None))]
    fn extract(
        &self,
        py: Python<'_>,
        mixture: Vec<f64>,
        query: Vec<bool>,
        mode: &str,
        theta: f64,
        activity: Option<Vec<bool>>,
    ) -> PyResult<Extraction> {
        let cfg = refinement_config(mode, theta)?;
        let x = model::to_model_input::<f32>(&mixture);
        let query = Query::new(query);
        let out = py
            .detach(|| refinement::extract_with_refinement(&self.inner, &x, &query, &cfg, activity.as_deref()))
            .map_err(py_err)?;
        Ok(Extraction {
            estimate: model::to_f64(&out.estimate),
            refined_query: out.refined_query.bits().to_vec(),
            probs: out.probs,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(scale={:?}, classes={}, classifier={})",
            self.inner.config().scale,
            self.inner.classes(),
            self.inner.has_classifier()
        )
    }
}

#[pymodule]
fn tse_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(snr, m)?)?;
    m.add_function(wrap_pyfunction!(snr_improvement, m)?)?;
    m.add_function(wrap_pyfunction!(attenuation_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(refine_query, m)?)?;
    m.add_function(wrap_pyfunction!(count_params_macs, m)?)?;
    m.add_function(wrap_pyfunction!(frame_count, m)?)?;
    m.add_function(wrap_pyfunction!(toy_classes, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize_toy_mixture, m)?)?;
    m.add_class::<Mixture>()?;
    m.add_class::<Extraction>()?;
    m.add_class::<Model>()?;
    m.add("SAMPLE_RATE", tse_core::SAMPLE_RATE)?;
    Ok(())
}
