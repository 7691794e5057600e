//! Python bindings. Structured results (reports, policy specs, leaderboards)
//! cross the boundary as plain dicts and lists through their JSON form.

use modelsel_core::data::{load_labels_path, load_predictions_path};
use modelsel_core::engine::{expected_posterior_entropy as core_expected_entropy, update_posterior};
use modelsel_core::eval::{build_report, run_experiment as core_run_experiment};
use modelsel_core::policies::{final_selection, init_state, leaderboard, next_query, record_label};
use modelsel_core::synth::{drift_collection, generate_collection as core_generate};
use modelsel_core::tuning::{build_noisy_oracle, tune_epsilon as core_tune};
use modelsel_core::{
    ClassMode, EpsilonGrid, ErrorRate, ExperimentConfig, LabelVector, NoisyOracleConfig, PolicySpec, Provenance,
    SelectionState, SyntheticSpec,
};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = PyModule::import(value.py(), "json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

/// A policy is either a kind name (`"random"`) or a dict such as
/// `{"kind": "model_selector", "epsilon": 0.45}`.
fn policy(value: &Bound<'_, PyAny>) -> PyResult<PolicySpec> {
    let spec: PolicySpec = match value.extract::<String>() {
        Ok(kind) => serde_json::from_value(serde_json::json!({ "kind": kind })).map_err(err)?,
        Err(_) => from_py(value)?,
    };
    spec.validate().map_err(err)?;
    Ok(spec)
}

fn class_mode(name: &str) -> PyResult<ClassMode> {
    serde_json::from_value(serde_json::Value::String(name.into())).map_err(err)
}

fn eps(value: f64) -> PyResult<ErrorRate> {
    ErrorRate::new(value).map_err(err)
}

#[pyclass(name = "PredictionMatrix", module = "modelsel", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMatrix {
    inner: modelsel_core::PredictionMatrix,
}

#[pymethods]
impl PyMatrix {
    #[new]
    #[pyo3(signature = (rows, num_classes=None, example_ids=None, model_names=None))]
    fn new(
        rows: Vec<Vec<u32>>,
        num_classes: Option<usize>,
        example_ids: Option<Vec<String>>,
        model_names: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let inner = match (example_ids, model_names) {
            (None, None) => modelsel_core::PredictionMatrix::from_rows(rows, num_classes),
            (ids, names) => {
                let n = rows.len();
                let m = rows.first().map_or(0, Vec::len);
                let ids = ids.unwrap_or_else(|| (0..n).map(|i| format!("x{i}")).collect());
                let names = names.unwrap_or_else(|| (1..=m).map(|j| format!("h{j}")).collect());
                modelsel_core::PredictionMatrix::new(ids, names, rows, num_classes)
            }
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    /// Reads a predictions CSV.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: load_predictions_path(path).map_err(err)?,
        })
    }

    /// Reads a labels CSV aligned to this matrix.
    fn load_labels(&self, path: &str) -> PyResult<Vec<u32>> {
        Ok(load_labels_path(path, &self.inner).map_err(err)?.labels().to_vec())
    }

    #[getter]
    fn num_examples(&self) -> usize {
        self.inner.num_examples()
    }

    #[getter]
    fn num_models(&self) -> usize {
        self.inner.num_models()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn model_names(&self) -> Vec<String> {
        self.inner.model_names().to_vec()
    }

    #[getter]
    fn example_ids(&self) -> Vec<String> {
        self.inner.example_ids().to_vec()
    }

    fn row(&self, i: usize) -> PyResult<Vec<u32>> {
        self.inner.check_example(i).map_err(err)?;
        Ok(self.inner.row(i).to_vec())
    }

    /// Accuracy of every model against `labels`.
    fn accuracies(&self, labels: Vec<u32>) -> PyResult<Vec<f64>> {
        let labels = self.labels(labels)?;
        Ok(modelsel_core::accuracy_profile(&self.inner, &labels).map_err(err)?.per_model_accuracy)
    }

    fn __repr__(&self) -> String {
        format!(
            "PredictionMatrix(n={}, m={}, k={})",
            self.inner.num_examples(),
            self.inner.num_models(),
            self.inner.num_classes()
        )
    }
}

impl PyMatrix {
    fn labels(&self, labels: Vec<u32>) -> PyResult<LabelVector> {
        LabelVector::new(labels, Provenance::Oracle, &self.inner).map_err(err)
    }
}

#[pyclass(name = "ModelPosterior", module = "modelsel", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPosterior {
    inner: modelsel_core::ModelPosterior,
}

#[pymethods]
impl PyPosterior {
    #[new]
    fn new(probs: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: modelsel_core::ModelPosterior::from_probs(&probs).map_err(err)?,
        })
    }

    #[staticmethod]
    fn uniform(num_models: usize) -> PyResult<Self> {
        Ok(Self {
            inner: modelsel_core::ModelPosterior::uniform(num_models).map_err(err)?,
        })
    }

    #[getter]
    fn probs(&self) -> Vec<f64> {
        self.inner.probs()
    }

    #[getter]
    fn log_probs(&self) -> Vec<f64> {
        self.inner.log_probs().to_vec()
    }

    /// Entropy in nats.
    fn entropy(&self) -> f64 {
        self.inner.entropy()
    }

    /// Posterior after one observation; `correct[j]` says whether model j
    /// predicted the observed label.
    fn update(&self, correct: Vec<bool>, epsilon: f64) -> PyResult<Self> {
        Ok(Self {
            inner: update_posterior(&self.inner, &correct, eps(epsilon)?).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("ModelPosterior({:?})", self.inner.probs())
    }
}

/// Expected posterior entropy after labeling `example`.
#[pyfunction]
#[pyo3(signature = (matrix, example, posterior, epsilon, class_mode="predictive"))]
fn expected_posterior_entropy(
    matrix: &PyMatrix,
    example: usize,
    posterior: &PyPosterior,
    epsilon: f64,
    class_mode: &str,
) -> PyResult<f64> {
    let mode = self::class_mode(class_mode)?;
    core_expected_entropy(&matrix.inner, example, &posterior.inner, eps(epsilon)?, mode).map_err(err)
}

/// One interactive selection run: ask for a query, record the label, repeat.
#[pyclass(name = "Selector", module = "modelsel")]
struct PySelector {
    matrix: modelsel_core::PredictionMatrix,
    spec: PolicySpec,
    state: SelectionState,
    pending: Option<usize>,
}

#[pymethods]
impl PySelector {
    #[new]
    #[pyo3(signature = (matrix, policy, seed=0))]
    fn new(matrix: &PyMatrix, policy: &Bound<'_, PyAny>, seed: u64) -> PyResult<Self> {
        let spec = self::policy(policy)?;
        let state = init_state(&matrix.inner, &spec, seed).map_err(err)?;
        Ok(Self {
            matrix: matrix.inner.clone(),
            spec,
            state,
            pending: None,
        })
    }

    /// The example to label next. Repeated calls return the same example
    /// until it is labeled.
    fn next_query(&mut self) -> PyResult<usize> {
        if let Some(q) = self.pending {
            return Ok(q);
        }
        let q = next_query(&mut self.state, &self.matrix, &self.spec).map_err(err)?;
        self.pending = Some(q);
        Ok(q)
    }

    fn record(&mut self, example: usize, label: u32) -> PyResult<()> {
        record_label(&mut self.state, &self.matrix, example, label, &self.spec).map_err(err)?;
        if self.pending == Some(example) {
            self.pending = None;
        }
        Ok(())
    }

    #[getter]
    fn step(&self) -> usize {
        self.state.step()
    }

    #[getter]
    fn posterior(&self) -> PyPosterior {
        PyPosterior {
            inner: self.state.posterior().clone(),
        }
    }

    #[getter]
    fn label(&self) -> String {
        self.spec.label()
    }

    /// `{"model_index", "labeled_accuracy", "posterior_mass"}`.
    fn final_selection<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &final_selection(&self.state, &self.matrix).map_err(err)?)
    }

    fn leaderboard<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &leaderboard(&self.state, &self.matrix))
    }
}

/// Surrogate labels built from the model predictions alone.
#[pyfunction]
#[pyo3(signature = (matrix, mode="auto", auto_threshold=10, seed=0))]
fn noisy_oracle(matrix: &PyMatrix, mode: &str, auto_threshold: usize, seed: u64) -> PyResult<Vec<u32>> {
    let cfg: NoisyOracleConfig = serde_json::from_value(serde_json::json!({
        "mode": mode, "auto_threshold": auto_threshold, "seed": seed
    }))
    .map_err(err)?;
    Ok(build_noisy_oracle(&matrix.inner, &cfg).map_err(err)?.labels().to_vec())
}

/// Runs the realization protocol and returns the metrics report as a dict.
#[pyfunction]
#[pyo3(signature = (matrix, labels, policies, pool_size, max_budget, realizations, master_seed=0))]
#[allow(clippy::too_many_arguments)]
fn run_experiment<'py>(
    py: Python<'py>,
    matrix: &PyMatrix,
    labels: Vec<u32>,
    policies: Vec<Bound<'py, PyAny>>,
    pool_size: usize,
    max_budget: usize,
    realizations: usize,
    master_seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let labels = matrix.labels(labels)?;
    let specs = policies.iter().map(policy).collect::<PyResult<Vec<_>>>()?;
    let cfg = ExperimentConfig::new(pool_size, max_budget, realizations, master_seed, specs);
    let report = py
        .detach(|| {
            let results = core_run_experiment(&matrix.inner, &labels, &cfg)?;
            build_report(&matrix.inner, &cfg, &results)
        })
        .map_err(err)?;
    to_py(py, &report)
}

/// Chooses ε without true labels and returns the tuning report as a dict.
/// `grid=None` uses the two-stage grid.
#[pyfunction]
#[pyo3(signature = (matrix, pool_size, max_budget, realizations, master_seed=0, grid=None))]
fn tune_epsilon<'py>(
    py: Python<'py>,
    matrix: &PyMatrix,
    pool_size: usize,
    max_budget: usize,
    realizations: usize,
    master_seed: u64,
    grid: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let grid = grid.map(EpsilonGrid::new).transpose().map_err(err)?;
    let cfg = ExperimentConfig::new(pool_size, max_budget, realizations, master_seed, Vec::new());
    let report = py
        .detach(|| core_tune(&matrix.inner, grid.as_ref(), &cfg, &NoisyOracleConfig::default()))
        .map_err(err)?;
    to_py(py, &report)
}

/// Returns `(matrix, labels)` for a synthetic collection.
#[pyfunction]
#[pyo3(signature = (num_examples, num_classes, accuracy_targets, correlation=0.0, seed=0, drift=false))]
fn generate_collection(
    num_examples: usize,
    num_classes: usize,
    accuracy_targets: Vec<f64>,
    correlation: f64,
    seed: u64,
    drift: bool,
) -> PyResult<(PyMatrix, Vec<u32>)> {
    let spec = SyntheticSpec {
        num_examples,
        num_classes,
        accuracy_targets,
        correlation,
        seed,
    };
    let c = if drift { drift_collection(&spec) } else { core_generate(&spec) }.map_err(err)?;
    Ok((PyMatrix { inner: c.matrix }, c.labels.labels().to_vec()))
}

#[pymodule]
fn modelsel(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMatrix>()?;
    m.add_class::<PyPosterior>()?;
    m.add_class::<PySelector>()?;
    m.add_function(wrap_pyfunction!(expected_posterior_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(noisy_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(tune_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(generate_collection, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_modes_parse_by_name() {
        assert_eq!(class_mode("predictive").unwrap(), ClassMode::Predictive);
        assert_eq!(class_mode("posterior-weighted").unwrap(), ClassMode::PosteriorWeighted);
        assert!(class_mode("votes").is_err());
    }

    #[test]
    fn epsilon_is_range_checked() {
        assert!(eps(0.45).is_ok());
        assert!(eps(1.5).is_err());
    }
}
