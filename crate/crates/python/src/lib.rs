//! Python bindings: problems, datasets, checkpoints, training, rewinding,
//! unlearning and noise calibration.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use r2d_core::{Constants, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Divergence { .. } | Error::ProxNotConverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn params(v: Vec<f64>) -> PyResult<r2d_core::ParamVector> {
    r2d_core::ParamVector::new(v).map_err(to_py)
}

#[pyclass(name = "Dataset", module = "r2d", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset(r2d_core::Dataset);

#[pymethods]
impl PyDataset {
    /// Rows of `(features, label)`.
    #[new]
    fn new(rows: Vec<(Vec<f64>, f64)>) -> PyResult<Self> {
        r2d_core::Dataset::new(rows).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn read_csv(path: PathBuf) -> PyResult<Self> {
        r2d_core::Dataset::read_csv(path).map(Self).map_err(to_py)
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        self.0.write_csv(path).map_err(to_py)
    }

    fn fingerprint(&self) -> u64 {
        self.0.fingerprint()
    }

    fn rows(&self) -> Vec<(Vec<f64>, f64)> {
        self.0.iter().map(|s| (s.x.to_vec(), s.y)).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// A built-in problem together with its declared constants `G` and `L`.
#[pyclass(name = "Problem", module = "r2d", skip_from_py_object)]
#[derive(Clone)]
struct PyProblem {
    spec: r2d_core::ProblemSpec,
    constants: Option<Constants>,
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (name, d=None))]
    fn new(name: &str, d: Option<usize>) -> PyResult<Self> {
        let mut spec = r2d_core::ProblemSpec::by_name(name).map_err(to_py)?;
        if let Some(d) = d {
            spec = spec.with_inputs(d).map_err(to_py)?;
        }
        Ok(Self { spec, constants: None })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.spec.name()
    }

    #[getter]
    fn param_dim(&self) -> usize {
        self.spec.param_dim()
    }

    fn generate(&self, n: usize, seed: u64) -> PyResult<PyDataset> {
        self.spec.generate(n, seed).map(PyDataset).map_err(to_py)
    }

    /// Derives `(G, L)` over the unit ball around the seeded start and keeps them.
    fn derive_constants(&mut self, data: &PyDataset, seed: u64) -> PyResult<(f64, f64)> {
        let theta0 = r2d_core::init_theta(self.spec.param_dim(), seed);
        let c = self.spec.nominal_constants(&data.0, theta0.as_slice(), seed).map_err(to_py)?;
        self.constants = Some(c);
        Ok((c.grad_bound, c.smoothness))
    }

    fn set_constants(&mut self, grad_bound: f64, smoothness: f64) {
        self.constants = Some(Constants {
            smoothness,
            grad_bound,
            pl: None,
        });
    }

    #[getter]
    fn constants(&self) -> Option<(f64, f64)> {
        self.constants.map(|c| (c.grad_bound, c.smoothness))
    }

    fn loss(&self, data: &PyDataset, theta: Vec<f64>) -> PyResult<f64> {
        r2d_core::empirical_loss(&self.model()?, &data.0, &theta).map_err(to_py)
    }

    fn grad(&self, data: &PyDataset, theta: Vec<f64>) -> PyResult<Vec<f64>> {
        r2d_core::empirical_grad(&self.model()?, &data.0, &theta)
            .map(|g| g.into_vec())
            .map_err(to_py)
    }
}

impl PyProblem {
    fn model(&self) -> PyResult<r2d_core::Problem> {
        let c = self
            .constants
            .ok_or_else(|| PyValueError::new_err("constants not set; call derive_constants or set_constants"))?;
        Ok(self.spec.model(c))
    }
}

#[pyclass(name = "Checkpoint", module = "r2d", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCheckpoint(r2d_core::Checkpoint);

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        r2d_core::Checkpoint::load(path).map(Self).map_err(to_py)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(to_py)
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.0.theta.as_slice().to_vec()
    }

    #[getter]
    fn step_index(&self) -> u64 {
        self.0.step_index
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.0.eta
    }

    #[getter]
    fn fingerprint(&self) -> u64 {
        self.0.fingerprint
    }

    #[getter]
    fn problem(&self) -> String {
        self.0.problem.clone()
    }

    #[getter]
    fn reconstructed(&self) -> bool {
        self.0.reconstructed
    }
}

#[pyclass(name = "Certificate", module = "r2d", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyCertificate {
    epsilon: f64,
    delta: f64,
    sigma: f64,
    k: usize,
    steps: usize,
    m: usize,
    n: usize,
    eta: f64,
    grad_bound: f64,
    smoothness: f64,
    h: f64,
    bound: f64,
}

impl From<r2d_core::Certificate> for PyCertificate {
    fn from(c: r2d_core::Certificate) -> Self {
        Self {
            epsilon: c.epsilon,
            delta: c.delta,
            sigma: c.sigma,
            k: c.k,
            steps: c.steps,
            m: c.m,
            n: c.n,
            eta: c.eta,
            grad_bound: c.grad_bound,
            smoothness: c.smoothness,
            h: c.h,
            bound: c.bound,
        }
    }
}

#[pymethods]
impl PyCertificate {
    fn to_report(&self) -> String {
        r2d_core::Certificate {
            epsilon: self.epsilon,
            delta: self.delta,
            sigma: self.sigma,
            k: self.k,
            steps: self.steps,
            m: self.m,
            n: self.n,
            eta: self.eta,
            grad_bound: self.grad_bound,
            smoothness: self.smoothness,
            h: self.h,
            bound: self.bound,
        }
        .to_report()
    }

    fn __repr__(&self) -> String {
        format!("Certificate(epsilon={}, delta={}, sigma={}, K={}, T={})", self.epsilon, self.delta, self.sigma, self.k, self.steps)
    }
}

#[pyfunction]
fn init_theta(dim: usize, seed: u64) -> Vec<f64> {
    r2d_core::init_theta(dim, seed).into_vec()
}

/// Returns `(final_theta, checkpoint, losses)`.
#[pyfunction]
#[pyo3(signature = (problem, data, theta0, eta, steps, k, m=0))]
fn train(
    problem: &PyProblem,
    data: &PyDataset,
    theta0: Vec<f64>,
    eta: f64,
    steps: usize,
    k: usize,
    m: usize,
) -> PyResult<(Vec<f64>, PyCheckpoint, Vec<f64>)> {
    let cfg = r2d_core::TrainConfig::new(eta, steps, k).with_planned_forget(m);
    let out = r2d_core::train(&problem.model()?, &data.0, &params(theta0)?, &cfg).map_err(to_py)?;
    Ok((out.theta_final.into_vec(), PyCheckpoint(out.checkpoint), out.trajectory.losses))
}

/// Reconstructs the iterate `k` steps back. Returns `(theta, max_residual, inner_iterations)`.
#[pyfunction]
fn rewind(problem: &PyProblem, data: &PyDataset, theta: Vec<f64>, eta: f64, k: usize) -> PyResult<(Vec<f64>, f64, usize)> {
    let (theta, stats) = r2d_core::rewind(
        &problem.model()?,
        &data.0,
        &params(theta)?,
        eta,
        k,
        &r2d_core::ProxConfig::default(),
    )
    .map_err(to_py)?;
    Ok((theta.into_vec(), stats.max_residual(), stats.inner_iterations()))
}

/// `K` steps on the retained data from `checkpoint`, plus `N(0, sigma^2 I)` noise.
#[pyfunction]
#[pyo3(signature = (problem, data, forget, checkpoint, k, sigma, seed=0))]
fn unlearn(
    problem: &PyProblem,
    data: &PyDataset,
    forget: Vec<usize>,
    checkpoint: &PyCheckpoint,
    k: usize,
    sigma: f64,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let mut forget = forget;
    forget.sort_unstable();
    forget.dedup();
    let split = r2d_core::SplitSpec::new(forget).map_err(to_py)?;
    let mut noise = r2d_core::NoiseStream::new(seed, "unlearn");
    r2d_core::unlearn(&problem.model()?, &data.0, &split, &checkpoint.0, k, sigma, &mut noise)
        .map(|o| o.theta_noisy.into_vec())
        .map_err(to_py)
}

#[allow(clippy::too_many_arguments)]
#[pyfunction]
fn calibrate_sigma(
    epsilon: f64,
    delta: f64,
    grad_bound: f64,
    smoothness: f64,
    n: usize,
    m: usize,
    eta: f64,
    steps: usize,
    k: usize,
) -> PyResult<PyCertificate> {
    let budget = r2d_core::PrivacyBudget::new(epsilon, delta).map_err(to_py)?;
    let cal = r2d_core::Calibration {
        grad_bound,
        smoothness,
        n,
        m,
        eta,
        steps,
    };
    r2d_core::calibrate_sigma(&budget, &cal, k).map(Into::into).map_err(to_py)
}

#[pyfunction]
fn h_of_k(eta: f64, smoothness: f64, n: usize, m: usize, steps: usize, k: usize) -> PyResult<f64> {
    r2d_core::h_of_k(eta, smoothness, n, m, steps, k).map_err(to_py)
}

#[pymodule]
fn r2d(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_class::<PyCertificate>()?;
    m.add_function(wrap_pyfunction!(init_theta, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(rewind, m)?)?;
    m.add_function(wrap_pyfunction!(unlearn, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_sigma, m)?)?;
    m.add_function(wrap_pyfunction!(h_of_k, m)?)?;
    Ok(())
}
