//! Python bindings: configuration, training and prediction, head
//! arithmetic, and the experiment runners.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use aotsnn::config::ExperimentConfig;
use aotsnn::data::{self, Dataset};
use aotsnn::heads::{self, BinSpec, GaussianStepOutput, HeadKind, PredictiveDistribution};
use aotsnn::numcore::{Matrix, Rng};
use aotsnn::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Dimension { .. } | Error::Data(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(py_err)
}

fn dataset(x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<Dataset> {
    Dataset::new("python", matrix(x)?, y).map_err(py_err)
}

fn head_kind(name: &str) -> PyResult<HeadKind> {
    name.parse().map_err(py_err)
}

/// Flat experiment configuration.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// Benchmark defaults, or toy defaults with `toy=True`.
    #[new]
    #[pyo3(signature = (toy = false))]
    fn new(toy: bool) -> Self {
        let inner = if toy {
            ExperimentConfig::toy()
        } else {
            ExperimentConfig::bench()
        };
        PyConfig { inner }
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: ExperimentConfig::parse(text).map_err(py_err)?,
        })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(py_err)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    fn emit(&self) -> String {
        self.inner.emit()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        format!("Config(hash={})", self.inner.hash())
    }
}

/// One predictive distribution in original target units.
#[pyclass(name = "Prediction", frozen, skip_from_py_object)]
struct PyPrediction {
    inner: PredictiveDistribution,
}

#[pymethods]
impl PyPrediction {
    #[getter]
    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    #[getter]
    fn variance(&self) -> f64 {
        self.inner.variance()
    }

    /// Lower and upper edge of the central band: `μ ± 2σ` for the
    /// Gaussian head, the 2.5% and 97.5% quantiles for the RAC head.
    fn band(&self) -> (f64, f64) {
        self.inner.band()
    }

    fn nll(&self, y: f64) -> f64 {
        self.inner.nll(y)
    }

    fn __repr__(&self) -> String {
        format!(
            "Prediction(mean={:.6}, variance={:.6})",
            self.inner.mean(),
            self.inner.variance()
        )
    }
}

/// A trained network with its output head.
#[pyclass(name = "Regressor", skip_from_py_object)]
struct PyRegressor {
    inner: aotsnn::model::Regressor,
}

#[pymethods]
impl PyRegressor {
    /// Trains on rows `x` and targets `y` with the settings in `config`.
    #[staticmethod]
    #[pyo3(signature = (x, y, head, config, dropout = None, seed = None))]
    fn fit(
        py: Python<'_>,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        head: &str,
        config: &PyConfig,
        dropout: Option<f64>,
        seed: Option<u64>,
    ) -> PyResult<Self> {
        let head = head_kind(head)?;
        let data = dataset(x, y)?;
        let settings = config.inner.train_settings(head);
        let rate = dropout.unwrap_or(config.inner.dropout_rates[0]);
        let rng = Rng::new(seed.unwrap_or(config.inner.seed));
        let inner = py
            .detach(|| aotsnn::model::Regressor::fit(&data, head, rate, &settings, &rng))
            .map_err(py_err)?;
        Ok(PyRegressor { inner })
    }

    #[getter]
    fn head(&self) -> &'static str {
        self.inner.head().as_str()
    }

    #[getter]
    fn dropout(&self) -> f64 {
        self.inner.dropout_rate()
    }

    #[pyo3(signature = (x, forwards = 1, seed = 0))]
    fn predict(&self, py: Python<'_>, x: Vec<Vec<f64>>, forwards: usize, seed: u64) -> PyResult<Vec<PyPrediction>> {
        let x = matrix(x)?;
        let dists = py
            .detach(|| self.inner.predict(&x, forwards, &Rng::new(seed)))
            .map_err(py_err)?;
        Ok(dists.into_iter().map(|inner| PyPrediction { inner }).collect())
    }

    /// `(rmse, nll)` on the given rows.
    #[pyo3(signature = (x, y, forwards = 1, seed = 0))]
    fn evaluate(
        &self,
        py: Python<'_>,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        forwards: usize,
        seed: u64,
    ) -> PyResult<(f64, f64)> {
        let data = dataset(x, y)?;
        let m = py
            .detach(|| self.inner.evaluate(&data, forwards, &Rng::new(seed)))
            .map_err(py_err)?;
        Ok((m.rmse, m.nll))
    }
}

#[pyfunction]
fn gaussian_nll(y: f64, mean: f64, var: f64) -> PyResult<f64> {
    heads::gaussian_nll(y, mean, var).map_err(py_err)
}

/// Pools per-step `(mean, var)` pairs into `(mean, var)`.
#[pyfunction]
fn aggregate_gaussian(means: Vec<f64>, variances: Vec<f64>) -> PyResult<(f64, f64)> {
    if means.len() != variances.len() {
        return Err(PyValueError::new_err("means and variances differ in length"));
    }
    let steps: Vec<GaussianStepOutput> = means
        .into_iter()
        .zip(variances)
        .map(|(mean, var)| GaussianStepOutput { mean, var })
        .collect();
    let d = heads::aggregate_gaussian(&steps).map_err(py_err)?;
    Ok((d.mean(), d.variance()))
}

#[pyfunction]
fn bin_midpoints(k: usize, y_min: f64, y_max: f64) -> PyResult<Vec<f64>> {
    Ok(BinSpec::new(k, y_min, y_max).map_err(py_err)?.midpoints())
}

#[pyfunction]
fn discretize(y: f64, k: usize, y_min: f64, y_max: f64) -> PyResult<usize> {
    Ok(heads::discretize(y, &BinSpec::new(k, y_min, y_max).map_err(py_err)?))
}

/// `-log` density of `y` under the piecewise-uniform distribution `probs`.
#[pyfunction]
fn rac_nll(y: f64, probs: Vec<f64>, y_min: f64, y_max: f64) -> PyResult<f64> {
    let bins = BinSpec::new(probs.len(), y_min, y_max).map_err(py_err)?;
    let dist = heads::rac_density(&probs, &bins).map_err(py_err)?;
    Ok(heads::rac_nll(y, &dist))
}

#[pyfunction]
fn average_probs(per_step: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    heads::average_probs(&per_step).map_err(py_err)
}

/// Toy cubic as drawn by `run_toy` for the same seed:
/// `((x_train, y_train), (x_test, y_test))`.
#[pyfunction]
#[pyo3(signature = (seed = 0, n_train = 100, noise_std = 3.0))]
fn gen_toy(
    seed: u64,
    n_train: usize,
    noise_std: f64,
) -> PyResult<((Vec<Vec<f64>>, Vec<f64>), (Vec<Vec<f64>>, Vec<f64>))> {
    let (train, test) = data::gen_toy(&Rng::new(seed).substream("toy"), n_train, noise_std).map_err(py_err)?;
    let rows = |d: &Dataset| (0..d.len()).map(|r| d.x.row(r).to_vec()).collect::<Vec<_>>();
    Ok(((rows(&train), train.y.clone()), (rows(&test), test.y.clone())))
}

/// `[(train, validation, test)]` index lists per fold.
#[pyfunction]
#[pyo3(signature = (n, n_folds, seed = 0, validation_fraction = 0.2))]
fn make_folds(
    n: usize,
    n_folds: usize,
    seed: u64,
    validation_fraction: f64,
) -> PyResult<Vec<(Vec<usize>, Vec<usize>, Vec<usize>)>> {
    Ok(data::make_folds(n, n_folds, &Rng::new(seed), validation_fraction)
        .map_err(py_err)?
        .into_iter()
        .map(|f| (f.train, f.validation, f.test))
        .collect())
}

/// `(passed, [(head, slot, max_rel_error)])`.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn gradcheck(seed: u64) -> PyResult<(bool, Vec<(String, String, f64)>)> {
    let report = aotsnn::gradcheck::run_gradcheck(seed, None).map_err(py_err)?;
    let slots = report
        .slots
        .iter()
        .map(|s| (s.head.to_string(), s.slot.clone(), s.max_rel_error))
        .collect();
    Ok((report.passed(), slots))
}

/// Runs the toy experiment; one `(head, rmse, nll, interior_sigma)` per head.
#[pyfunction]
fn run_toy(py: Python<'_>, config: &PyConfig) -> PyResult<Vec<(String, f64, f64, f64)>> {
    let cfg = config.inner.clone();
    let out = py.detach(|| aotsnn::experiment::run_toy(&cfg)).map_err(py_err)?;
    Ok(out
        .heads
        .iter()
        .map(|h| (h.head.to_string(), h.metrics.rmse, h.metrics.nll, h.interior_sigma))
        .collect())
}

#[pymodule]
fn aotsnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    aotsnn::alloc::retain_freed_memory();
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyPrediction>()?;
    m.add_class::<PyRegressor>()?;
    m.add_function(wrap_pyfunction!(gaussian_nll, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(bin_midpoints, m)?)?;
    m.add_function(wrap_pyfunction!(discretize, m)?)?;
    m.add_function(wrap_pyfunction!(rac_nll, m)?)?;
    m.add_function(wrap_pyfunction!(average_probs, m)?)?;
    m.add_function(wrap_pyfunction!(gen_toy, m)?)?;
    m.add_function(wrap_pyfunction!(make_folds, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(run_toy, m)?)?;
    Ok(())
}
