//! Python bindings. Matrices cross the boundary as row-major nested lists;
//! trajectories as one row per time step.

use hdsysid::experiment::{records_to_csv, ExperimentConfig};
use hdsysid::io::{matrix_to_rows, rows_to_matrix, Rows, SystemSpec, TrajectorySpec};
use hdsysid::metrics::{min_pairwise_cb_distance, SharedNoise, DEFAULT_HARD_FAMILY_BUDGET};
use hdsysid::{subspace, ObsNoise, StreamKey, SubspaceBasis, SysIdError, DEFAULT_DELTA};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: SysIdError) -> PyErr {
    let msg = format!("{}: {e}", e.label());
    if e.is_validation() {
        PyValueError::new_err(msg)
    } else {
        PyRuntimeError::new_err(msg)
    }
}

fn matrix(rows: &Rows, name: &str) -> PyResult<DMatrix<f64>> {
    rows_to_matrix(rows, name).map_err(to_py)
}

/// Linear system `x' = Ax + Bu + w`, `y = Cx + η`.
#[pyclass(name = "System", module = "hdsysid", frozen)]
struct PySystem {
    inner: hdsysid::SystemParams,
}

#[pymethods]
impl PySystem {
    /// Observation noise is `obs_noise_var · I` unless `obs_noise_cov` is given; missing
    /// covariances default to zero process noise and identity input covariance.
    #[new]
    #[pyo3(signature = (a, b, c, process_noise=None, obs_noise_var=0.0, obs_noise_cov=None, input_cov=None))]
    fn new(
        a: Rows,
        b: Rows,
        c: Rows,
        process_noise: Option<Rows>,
        obs_noise_var: f64,
        obs_noise_cov: Option<Rows>,
        input_cov: Option<Rows>,
    ) -> PyResult<Self> {
        let a = matrix(&a, "a")?;
        let b = matrix(&b, "b")?;
        let c = matrix(&c, "c")?;
        let (r, m) = (a.nrows(), b.ncols());
        let sigma_w = match process_noise {
            Some(p) => matrix(&p, "process_noise")?,
            None => DMatrix::zeros(r, r),
        };
        let obs_noise = match obs_noise_cov {
            Some(cov) => ObsNoise::Full(matrix(&cov, "obs_noise_cov")?),
            None => ObsNoise::Isotropic(obs_noise_var),
        };
        let sigma_u = match input_cov {
            Some(u) => matrix(&u, "input_cov")?,
            None => DMatrix::identity(m, m),
        };
        let inner = hdsysid::SystemParams::new(a, b, c, sigma_w, obs_noise, sigma_u).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// The scalar-latent study system with a random orthonormal observer.
    #[staticmethod]
    #[pyo3(signature = (n, seed=0, obs_noise_std=1.0))]
    fn scalar_study(n: usize, seed: u64, obs_noise_std: f64) -> PyResult<Self> {
        let template = hdsysid::experiment::SystemTemplate {
            obs_noise_std,
            ..Default::default()
        };
        let (inner, _) = template.build(n, &StreamKey::new(seed)).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec: SystemSpec = hdsysid::io::from_json_str(text).map_err(to_py)?;
        Ok(Self {
            inner: spec.to_system().map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        hdsysid::io::to_json_string(&SystemSpec::from_system(&self.inner)).map_err(to_py)
    }

    #[getter]
    fn a(&self) -> Rows {
        matrix_to_rows(&self.inner.a)
    }

    #[getter]
    fn b(&self) -> Rows {
        matrix_to_rows(&self.inner.b)
    }

    #[getter]
    fn c(&self) -> Rows {
        matrix_to_rows(&self.inner.c)
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn markov_parameters(&self, count: usize) -> Vec<Rows> {
        self.inner.markov_parameters(count).iter().map(matrix_to_rows).collect()
    }

    fn is_minimal(&self) -> bool {
        hdsysid::check_minimal(&self.inner).is_minimal()
    }

    /// Simulates `length` steps from `x_0 = 0`; stream `index` of `seed`.
    #[pyo3(signature = (length, seed=0, index=0, keep_latents=false))]
    fn simulate(&self, py: Python<'_>, length: usize, seed: u64, index: u64, keep_latents: bool) -> PyResult<PyTrajectory> {
        let key = StreamKey::new(seed).child(index);
        let inner = py
            .detach(|| hdsysid::simulate(&self.inner, length, &key, keep_latents))
            .map_err(to_py)?;
        Ok(PyTrajectory { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "System(latent_dim={}, obs_dim={}, input_dim={})",
            self.inner.latent_dim(),
            self.inner.obs_dim(),
            self.inner.input_dim()
        )
    }
}

#[pyclass(name = "Trajectory", module = "hdsysid", frozen)]
struct PyTrajectory {
    inner: hdsysid::Trajectory,
}

#[pymethods]
impl PyTrajectory {
    /// `inputs`: T rows of length m; `observations`: T + 1 rows of length n.
    #[new]
    fn new(inputs: Rows, observations: Rows) -> PyResult<Self> {
        let spec = TrajectorySpec {
            inputs,
            observations,
            latents: None,
        };
        Ok(Self {
            inner: spec.to_trajectory().map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn read(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: hdsysid::io::read_trajectory(&path).map_err(to_py)?,
        })
    }

    fn write(&self, path: std::path::PathBuf) -> PyResult<()> {
        hdsysid::io::write_trajectory(&self.inner, &path).map_err(to_py)
    }

    fn to_csv(&self) -> String {
        hdsysid::io::trajectory_csv_string(&self.inner)
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: hdsysid::io::parse_trajectory_csv(text.as_bytes()).map_err(to_py)?,
        })
    }

    #[getter]
    fn inputs(&self) -> Rows {
        TrajectorySpec::from_trajectory(&self.inner).inputs
    }

    #[getter]
    fn observations(&self) -> Rows {
        TrajectorySpec::from_trajectory(&self.inner).observations
    }

    #[getter]
    fn latents(&self) -> Option<Rows> {
        TrajectorySpec::from_trajectory(&self.inner).latents
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn prefix(&self, length: usize) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.prefix(length).map_err(to_py)?,
        })
    }

    fn concatenate(&self, other: &PyTrajectory) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.concatenate(&other.inner).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyclass(name = "Realization", module = "hdsysid", frozen)]
struct PyRealization {
    inner: hdsysid::Realization,
}

#[pymethods]
impl PyRealization {
    #[new]
    fn new(a: Rows, b: Rows, c: Rows) -> PyResult<Self> {
        let inner = hdsysid::Realization::new(matrix(&a, "a")?, matrix(&b, "b")?, matrix(&c, "c")?).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn a(&self) -> Rows {
        matrix_to_rows(&self.inner.a)
    }

    #[getter]
    fn b(&self) -> Rows {
        matrix_to_rows(&self.inner.b)
    }

    #[getter]
    fn c(&self) -> Rows {
        matrix_to_rows(&self.inner.c)
    }

    fn markov_parameters(&self, count: usize) -> Vec<Rows> {
        self.inner.markov_parameters(count).iter().map(matrix_to_rows).collect()
    }

    fn cb_error(&self, truth: &PySystem) -> PyResult<f64> {
        hdsysid::cb_error(&self.inner, &truth.inner).map_err(to_py)
    }

    fn markov_error(&self, truth: &PySystem, depth: usize) -> PyResult<Vec<f64>> {
        hdsysid::markov_error(&self.inner, &truth.inner, depth).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Realization(latent_dim={}, obs_dim={}, input_dim={})",
            self.inner.latent_dim(),
            self.inner.obs_dim(),
            self.inner.input_dim()
        )
    }
}

#[pyclass(name = "ColApproxResult", module = "hdsysid", frozen, get_all)]
struct PyColApprox {
    basis: Rows,
    estimated_rank: usize,
    eigenvalues: Vec<f64>,
    threshold: f64,
}

#[pyclass(name = "PipelineReport", module = "hdsysid", frozen)]
struct PyReport {
    inner: hdsysid::PipelineReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn realization(&self) -> PyRealization {
        PyRealization {
            inner: self.inner.realization.clone(),
        }
    }

    #[getter]
    fn basis(&self) -> Rows {
        matrix_to_rows(self.inner.basis.matrix())
    }

    #[getter]
    fn low_c(&self) -> Rows {
        matrix_to_rows(&self.inner.low_c)
    }

    #[getter]
    fn estimated_rank(&self) -> usize {
        self.inner.estimated_rank
    }

    #[getter]
    fn markov_residual(&self) -> f64 {
        self.inner.markov_residual
    }
}

#[pyfunction]
#[pyo3(signature = (trajectory, rank=None))]
fn col_approx(py: Python<'_>, trajectory: &PyTrajectory, rank: Option<usize>) -> PyResult<PyColApprox> {
    let res = py
        .detach(|| subspace::col_approx(trajectory.inner.observations(), rank))
        .map_err(to_py)?;
    Ok(PyColApprox {
        basis: matrix_to_rows(res.basis.matrix()),
        estimated_rank: res.estimated_rank,
        eigenvalues: res.eigenvalues,
        threshold: res.threshold,
    })
}

#[pyfunction]
#[pyo3(signature = (trajectory, latent_dim, delta=DEFAULT_DELTA))]
fn ho_kalman(py: Python<'_>, trajectory: &PyTrajectory, latent_dim: usize, delta: f64) -> PyResult<PyRealization> {
    let inner = py
        .detach(|| hdsysid::ho_kalman(&trajectory.inner, latent_dim, delta))
        .map_err(to_py)?;
    Ok(PyRealization { inner })
}

#[pyfunction]
#[pyo3(signature = (d1, d2, latent_dim, delta=DEFAULT_DELTA, rank=None))]
fn col_adapted_sysid(
    py: Python<'_>,
    d1: &PyTrajectory,
    d2: &PyTrajectory,
    latent_dim: usize,
    delta: f64,
    rank: Option<usize>,
) -> PyResult<PyReport> {
    let inner = py
        .detach(|| hdsysid::col_adapted_sysid(&d1.inner, &d2.inner, latent_dim, delta, rank))
        .map_err(to_py)?;
    Ok(PyReport { inner })
}

/// One entry per trajectory: a report, or the exception that system raised.
#[pyfunction]
#[pyo3(signature = (trajectories, latent_dim, delta=DEFAULT_DELTA, rank=None))]
fn meta_sysid(
    py: Python<'_>,
    trajectories: Vec<PyRef<'_, PyTrajectory>>,
    latent_dim: usize,
    delta: f64,
    rank: Option<usize>,
) -> PyResult<Vec<Py<PyAny>>> {
    let data: Vec<hdsysid::Trajectory> = trajectories.iter().map(|t| t.inner.clone()).collect();
    let reports = py
        .detach(|| hdsysid::meta_sysid(&data, latent_dim, delta, rank))
        .map_err(to_py)?;
    reports
        .into_iter()
        .map(|r| match r {
            Ok(inner) => Ok(Py::new(py, PyReport { inner })?.into_any()),
            Err(e) => Ok(to_py(e).into_value(py).into_any()),
        })
        .collect()
}

/// Sine of the largest principal angle between two orthonormal bases.
#[pyfunction]
fn principal_angle_error(estimate: Rows, truth: Rows) -> PyResult<f64> {
    let est = SubspaceBasis::new(matrix(&estimate, "estimate")?).map_err(to_py)?;
    let tru = SubspaceBasis::new(matrix(&truth, "truth")?).map_err(to_py)?;
    hdsysid::principal_angle_error(&est, &tru).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (n, eps, latent_dim=1, input_dim=None, max_members=64, budget=DEFAULT_HARD_FAMILY_BUDGET, seed=0))]
fn hard_instance_family(
    py: Python<'_>,
    n: usize,
    eps: f64,
    latent_dim: usize,
    input_dim: Option<usize>,
    max_members: usize,
    budget: usize,
    seed: u64,
) -> PyResult<(Vec<PySystem>, f64)> {
    let m = input_dim.unwrap_or(latent_dim);
    let noise = SharedNoise {
        sigma_w: DMatrix::zeros(latent_dim, latent_dim),
        obs_noise: ObsNoise::Isotropic(1.0),
        sigma_u: DMatrix::identity(m, m),
    };
    let family = py
        .detach(|| {
            hdsysid::hard_instance_family(n, eps, latent_dim, m, max_members, budget, &noise, &StreamKey::new(seed))
        })
        .map_err(to_py)?;
    let dist = min_pairwise_cb_distance(&family);
    Ok((family.into_iter().map(|inner| PySystem { inner }).collect(), dist))
}

/// Runs a sweep described by a JSON config and returns the result CSV.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(to_py)?;
    let records = py.detach(|| hdsysid::experiment::run_experiment(&cfg)).map_err(to_py)?;
    Ok(records_to_csv(&records))
}

#[pymodule]
#[pyo3(name = "hdsysid")]
fn hdsysid_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystem>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyRealization>()?;
    m.add_class::<PyColApprox>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(col_approx, m)?)?;
    m.add_function(wrap_pyfunction!(ho_kalman, m)?)?;
    m.add_function(wrap_pyfunction!(col_adapted_sysid, m)?)?;
    m.add_function(wrap_pyfunction!(meta_sysid, m)?)?;
    m.add_function(wrap_pyfunction!(principal_angle_error, m)?)?;
    m.add_function(wrap_pyfunction!(hard_instance_family, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
