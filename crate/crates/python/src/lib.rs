//! Python bindings: g-polynomial laws, layered stacks, run configs and the
//! pipeline commands.

use std::fmt::Display;
use std::path::PathBuf;

use forchup::commands::{self, LayeredQuery, Manifest, Regime, Scale};
use forchup::config::RunConfig;
use forchup::forchheimer::{self as law, GPolynomial, Term};
use forchup::layered;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_error(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn run_error(e: forchup::Error) -> PyErr {
    match e {
        forchup::Error::Config(_) | forchup::Error::Invalid(_) | forchup::Error::Domain(_) => value_error(e),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// `g(s) = 1 + Σ a s^α`, built from `(a, alpha)` pairs.
#[pyclass(name = "Law", from_py_object)]
#[derive(Clone)]
struct PyLaw(GPolynomial);

#[pymethods]
impl PyLaw {
    #[new]
    fn new(terms: Vec<(f64, f64)>) -> PyResult<Self> {
        let terms = terms.into_iter().map(|(a, alpha)| Term { a, alpha }).collect();
        GPolynomial::new(terms).map(Self).map_err(run_error)
    }

    #[staticmethod]
    fn darcy() -> Self {
        Self(GPolynomial::darcy())
    }

    #[staticmethod]
    fn two_term(beta: f64) -> PyResult<Self> {
        GPolynomial::two_term(beta).map(Self).map_err(run_error)
    }

    #[getter]
    fn terms(&self) -> Vec<(f64, f64)> {
        self.0.terms().iter().map(|t| (t.a, t.alpha)).collect()
    }

    fn g(&self, s: f64) -> PyResult<f64> {
        self.0.g(s).map_err(run_error)
    }

    fn h(&self, s: f64) -> PyResult<f64> {
        self.0.h(s).map_err(run_error)
    }

    fn invert_h(&self, xi: f64) -> PyResult<f64> {
        self.0.invert_h(xi).map_err(run_error)
    }

    fn mobility(&self, xi: f64) -> PyResult<f64> {
        self.0.mobility(xi).map_err(run_error)
    }

    fn __repr__(&self) -> String {
        format!("Law({:?})", self.terms())
    }
}

#[pyfunction]
fn mobility_two_term(xi: f64, beta: f64) -> PyResult<f64> {
    law::mobility_two_term(xi, beta).map_err(run_error)
}

/// Stack of homogeneous layers.
#[pyclass(name = "LayerStack")]
struct PyLayerStack(layered::LayerStack);

#[pymethods]
impl PyLayerStack {
    /// `layers` holds `(thickness, k, law)` triples.
    #[new]
    fn new(layers: Vec<(f64, f64, PyLaw)>) -> PyResult<Self> {
        let layers = layers.into_iter().map(|(t, k, g)| layered::Layer::new(t, k, g.0)).collect();
        layered::LayerStack::new(layers).map(Self).map_err(run_error)
    }

    /// Parses the `[[layer]]` TOML format read by `forchup layered`.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        commands::parse_stack(text).map(Self).map_err(run_error)
    }

    fn kstar_parallel(&self) -> f64 {
        self.0.kstar_parallel()
    }

    fn kstar_perpendicular(&self) -> f64 {
        self.0.kstar_perpendicular()
    }

    fn gstar_parallel(&self, xi: f64) -> PyResult<f64> {
        self.0.gstar_parallel(xi).map_err(run_error)
    }

    /// Returns `(gstar, layer_gradients)` at flux `q`.
    #[pyo3(signature = (q, length = 1.0))]
    fn gstar_perpendicular(&self, q: f64, length: f64) -> PyResult<(f64, Vec<f64>)> {
        let f = self.0.gstar_perpendicular(q, length).map_err(run_error)?;
        Ok((f.gstar, f.layer_gradient))
    }

    #[pyo3(signature = (xi = None, q = None, length = 1.0))]
    fn report(&self, xi: Option<f64>, q: Option<f64>, length: f64) -> PyResult<String> {
        let query = match (xi, q) {
            (Some(_), Some(_)) => return Err(value_error("give xi or q, not both")),
            (Some(xi), None) => LayeredQuery::Gradient(xi),
            (None, Some(q)) => LayeredQuery::Flux { q, length },
            (None, None) => LayeredQuery::None,
        };
        commands::layered(&self.0, query).map_err(run_error)
    }
}

/// Run configuration. Built from a preset, a TOML string or a file.
#[pyclass(name = "RunConfig")]
struct PyRunConfig(RunConfig);

#[pymethods]
impl PyRunConfig {
    #[new]
    fn new() -> Self {
        Self(RunConfig::default())
    }

    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        RunConfig::preset(name).map(Self).map_err(run_error)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        RunConfig::from_toml_str(text).map(Self).map_err(run_error)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        RunConfig::load(&path).map(Self).map_err(run_error)
    }

    fn to_toml(&self) -> PyResult<String> {
        self.0.to_toml_string().map_err(run_error)
    }

    fn hash(&self) -> String {
        self.0.hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.0.seed = seed;
    }

    #[getter]
    fn variant(&self) -> String {
        self.0.upscale.variant.name().to_string()
    }

    #[setter]
    fn set_variant(&mut self, name: &str) -> PyResult<()> {
        self.0.upscale.variant = name.parse().map_err(value_error)?;
        Ok(())
    }

    #[getter]
    fn workers(&self) -> Option<usize> {
        self.0.workers
    }

    #[setter]
    fn set_workers(&mut self, workers: Option<usize>) {
        self.0.workers = workers;
    }
}

fn to_dict(py: Python<'_>, manifest: Manifest) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(&manifest).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn checked(config: &RunConfig) -> PyResult<()> {
    config.validate().map_err(run_error)
}

#[pyfunction]
fn generate(py: Python<'_>, config: &PyRunConfig, out: PathBuf) -> PyResult<Py<PyAny>> {
    checked(&config.0)?;
    let m = py.detach(|| commands::generate(&config.0, &out)).map_err(run_error)?;
    to_dict(py, m)
}

#[pyfunction]
fn upscale(py: Python<'_>, config: &PyRunConfig, out: PathBuf) -> PyResult<Py<PyAny>> {
    checked(&config.0)?;
    let m = py.detach(|| commands::upscale(&config.0, &out)).map_err(run_error)?;
    to_dict(py, m)
}

#[pyfunction]
#[pyo3(signature = (config, out, scale = "fine", regime = "steady"))]
fn solve(py: Python<'_>, config: &PyRunConfig, out: PathBuf, scale: &str, regime: &str) -> PyResult<Py<PyAny>> {
    checked(&config.0)?;
    let scale: Scale = scale.parse().map_err(value_error)?;
    let regime: Regime = regime.parse().map_err(value_error)?;
    let m = py.detach(|| commands::solve(&config.0, &out, scale, regime)).map_err(run_error)?;
    to_dict(py, m)
}

#[pyfunction]
fn compare(py: Python<'_>, config: &PyRunConfig, out: PathBuf) -> PyResult<Py<PyAny>> {
    checked(&config.0)?;
    let m = py.detach(|| commands::compare(&config.0, &out)).map_err(run_error)?;
    to_dict(py, m)
}

#[pyfunction]
fn productivity_index(py: Python<'_>, config: &PyRunConfig, out: PathBuf) -> PyResult<Py<PyAny>> {
    checked(&config.0)?;
    let m = py.detach(|| commands::pi(&config.0, &out)).map_err(run_error)?;
    to_dict(py, m)
}

#[pymodule]
#[pyo3(name = "forchup")]
fn forchup_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLaw>()?;
    m.add_class::<PyLayerStack>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_function(wrap_pyfunction!(mobility_two_term, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(upscale, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(productivity_index, m)?)?;
    m.add("PRESETS", forchup::config::PRESETS.to_vec())?;
    Ok(())
}
