//! Python bindings for `gp_leapfrog`.
//!
//! Vectors cross the boundary as lists of floats; reports come back as plain
//! dicts built from their JSON form.

use nalgebra::DVector;
use pyo3::exceptions::{PyArithmeticError, PyNotImplementedError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

use gp_leapfrog::analysis::{
    energy_drift_study, fit_order as core_fit_order, global_error_study, modified_matching_study, moment_estimate,
    ms_local_error_study, tail_probe, taylor_remainder_study, FitOutcome, StudyReport,
};
use gp_leapfrog::cli::{parse_config_str, RunConfig};
use gp_leapfrog::gp_field::{
    sample_realization, FieldConfig, KernelSpec, MeanSpec, Potential, PotentialRealization, SamplerKind,
};
use gp_leapfrog::hamiltonian::{energy as core_energy, MassMatrix, PhaseState};
use gp_leapfrog::integrators::{
    integrate as core_integrate, leapfrog_param_step, reference_solve as core_reference_solve, Scheme, SchemeParams,
};
use gp_leapfrog::Error;

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Config { .. } | Error::Usage(_) | Error::DimensionMismatch { .. } => PyValueError::new_err(msg),
        Error::Unsupported(_) => PyNotImplementedError::new_err(msg),
        Error::Overflow { .. } => PyArithmeticError::new_err(msg),
        Error::Io(_) => PyOSError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let loads = PyModule::import(py, "json")?.getattr("loads")?;
    Ok(loads.call1((text,))?.unbind())
}

fn to_json<T: serde::Serialize>(v: &T) -> PyResult<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

fn vec(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

fn mass_from(diag: Option<Vec<f64>>, dim: usize) -> PyResult<MassMatrix> {
    match diag {
        None => Ok(MassMatrix::identity(dim)),
        Some(d) => MassMatrix::diagonal(&d).map_err(py_err),
    }
}

fn state(y: Vec<f64>, x: Vec<f64>) -> PyResult<PhaseState> {
    PhaseState::from_slices(&y, &x).map_err(py_err)
}

/// One sample path of the Gaussian-process potential.
#[pyclass(unsendable, module = "gp_leapfrog_py")]
struct Realization {
    inner: PotentialRealization,
    config: FieldConfig,
}

#[pymethods]
impl Realization {
    /// Squared-exponential field with the confining quadratic mean.
    #[new]
    #[pyo3(signature = (seed=0, dim=2, variance=1.0, lengthscale=1.0, sampler="fourier-feature", features=512))]
    fn new(seed: u64, dim: usize, variance: f64, lengthscale: f64, sampler: &str, features: usize) -> PyResult<Self> {
        let config = FieldConfig {
            dim,
            kernel: KernelSpec::new(variance, lengthscale).map_err(py_err)?,
            mean: MeanSpec::confining(dim),
            sampler: sampler.parse::<SamplerKind>().map_err(py_err)?,
            features,
            seed,
        };
        let inner = sample_realization(&config).map_err(py_err)?;
        Ok(Self { inner, config })
    }

    /// Field described by the `[field]`, `[kernel]` and `[mean]` sections of a
    /// run configuration.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let cfg = parse_config_str(text).map_err(py_err)?;
        let inner = sample_realization(&cfg.field).map_err(py_err)?;
        Ok(Self { inner, config: cfg.field })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.config.seed
    }

    #[getter]
    fn sampler(&self) -> &'static str {
        self.config.sampler.name()
    }

    fn value(&self, y: Vec<f64>) -> PyResult<f64> {
        self.inner.value(&vec(y)).map_err(py_err)
    }

    fn grad(&self, y: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.grad(&vec(y)).map_err(py_err)?.as_slice().to_vec())
    }

    /// Hessian as a list of rows.
    fn hessian(&self, y: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let h = self.inner.hessian(&vec(y)).map_err(py_err)?;
        Ok(h.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    /// Third derivative contracted with `v1` and `v2`.
    fn third(&self, y: Vec<f64>, v1: Vec<f64>, v2: Vec<f64>) -> PyResult<Vec<f64>> {
        let t = self.inner.third(&vec(y), &vec(v1), &vec(v2)).map_err(py_err)?;
        Ok(t.as_slice().to_vec())
    }

    /// Frequencies and weights as a JSON string. Fourier-feature fields only.
    fn export_json(&self) -> PyResult<String> {
        let f = self
            .inner
            .as_fourier()
            .ok_or_else(|| PyNotImplementedError::new_err("export of a conditioned realization"))?;
        serde_json::to_string(&f.export()).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("Realization(dim={}, seed={}, sampler='{}')", self.inner.dim(), self.config.seed, self.config.sampler.name())
    }
}

/// One step of the parameterized leapfrog. Returns `(y, x)`.
#[pyfunction]
#[pyo3(signature = (field, y, x, dt, alpha1=0.0, alpha2=0.0, beta1=0.0, beta2=0.0, mass=None))]
#[allow(clippy::too_many_arguments)]
fn leapfrog_step(
    field: &Realization,
    y: Vec<f64>,
    x: Vec<f64>,
    dt: f64,
    alpha1: f64,
    alpha2: f64,
    beta1: f64,
    beta2: f64,
    mass: Option<Vec<f64>>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let params = SchemeParams::new(alpha1, alpha2, beta1, beta2).map_err(py_err)?;
    let m = mass_from(mass, field.inner.dim())?;
    let s = leapfrog_param_step(&field.inner, &m, &params, dt, &state(y, x)?).map_err(py_err)?;
    Ok((s.y.as_slice().to_vec(), s.x.as_slice().to_vec()))
}

/// Trajectory of the parameterized scheme up to `horizon`, as a dict with
/// keys `dt`, `termination`, `y`, `x`, `energy`. With `standard=True` the
/// parameters are ignored and the plain leapfrog is used.
#[pyfunction]
#[pyo3(signature = (field, y, x, dt, horizon, alpha1=0.0, alpha2=0.0, beta1=0.0, beta2=0.0, standard=false, mass=None, escape_radius=1e3))]
#[allow(clippy::too_many_arguments)]
fn integrate(
    py: Python<'_>,
    field: &Realization,
    y: Vec<f64>,
    x: Vec<f64>,
    dt: f64,
    horizon: f64,
    alpha1: f64,
    alpha2: f64,
    beta1: f64,
    beta2: f64,
    standard: bool,
    mass: Option<Vec<f64>>,
    escape_radius: f64,
) -> PyResult<Py<PyAny>> {
    let scheme = if standard {
        Scheme::Standard
    } else {
        Scheme::Parameterized(SchemeParams::new(alpha1, alpha2, beta1, beta2).map_err(py_err)?)
    };
    let m = mass_from(mass, field.inner.dim())?;
    let traj = core_integrate(scheme, &field.inner, &m, dt, &state(y, x)?, horizon, escape_radius).map_err(py_err)?;
    json_to_py(py, &traj.to_json())
}

/// Reference solution of the exact flow at `horizon`. Returns `(y, x)`.
#[pyfunction]
#[pyo3(signature = (field, y, x, horizon, dt, substeps=64, mass=None))]
#[allow(clippy::too_many_arguments)]
fn reference_solve(
    field: &Realization,
    y: Vec<f64>,
    x: Vec<f64>,
    horizon: f64,
    dt: f64,
    substeps: usize,
    mass: Option<Vec<f64>>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let m = mass_from(mass, field.inner.dim())?;
    let s = core_reference_solve(&field.inner, &m, &state(y, x)?, horizon, dt, substeps).map_err(py_err)?;
    Ok((s.y.as_slice().to_vec(), s.x.as_slice().to_vec()))
}

#[pyfunction]
#[pyo3(signature = (field, y, x, mass=None))]
fn energy(field: &Realization, y: Vec<f64>, x: Vec<f64>, mass: Option<Vec<f64>>) -> PyResult<f64> {
    let m = mass_from(mass, field.inner.dim())?;
    core_energy(&field.inner, &m, &state(y, x)?).map_err(py_err)
}

/// Least-squares slope of log error against log step size. Returns
/// `(slope, intercept, r_squared)`, or None when the errors are degenerate.
#[pyfunction]
fn fit_order(points: Vec<(f64, f64)>) -> PyResult<Option<(f64, f64, f64)>> {
    Ok(match core_fit_order(&points).map_err(py_err)? {
        FitOutcome::Fitted(f) => Some((f.slope, f.intercept, f.r_squared)),
        FitOutcome::Degenerate { .. } => None,
    })
}

fn study_value(report: &StudyReport) -> PyResult<serde_json::Value> {
    let mut v = to_json(report)?;
    v["reliability"] = to_json(&report.reliability())?;
    v["verdicts"] = to_json(&report.verdicts())?;
    Ok(v)
}

fn run_study(kind: &str, cfg: &RunConfig) -> PyResult<serde_json::Value> {
    let study = cfg.study_config();
    match kind {
        "local-order" => study_value(&ms_local_error_study(&study).map_err(py_err)?),
        "modified-match" => study_value(&modified_matching_study(&study).map_err(py_err)?),
        "taylor-order" => study_value(&taylor_remainder_study(&study).map_err(py_err)?),
        "global-order" => study_value(&global_error_study(&study).map_err(py_err)?),
        "moments" => {
            cfg.check_moment_resolution().map_err(py_err)?;
            to_json(
                &moment_estimate(&cfg.field, &cfg.probe, cfg.resolution, cfg.seeds, cfg.master_seed).map_err(py_err)?,
            )
        }
        "tails" => to_json(
            &tail_probe(&cfg.field, &cfg.probe, cfg.resolution, &cfg.levels, cfg.seeds, cfg.master_seed)
                .map_err(py_err)?,
        ),
        "energy-drift" => to_json(&energy_drift_study(&cfg.system, cfg.dt).map_err(py_err)?),
        other => Err(PyValueError::new_err(format!(
            "unknown study `{other}`; expected one of local-order, modified-match, taylor-order, global-order, moments, tails, energy-drift"
        ))),
    }
}

/// Runs a study named like the CLI subcommand, configured by TOML text, and
/// returns its report as a dict.
#[pyfunction]
#[pyo3(signature = (kind, config=""))]
fn study(py: Python<'_>, kind: &str, config: &str) -> PyResult<Py<PyAny>> {
    let cfg = parse_config_str(config).map_err(py_err)?;
    let value = py.detach(|| run_study(kind, &cfg))?;
    json_to_py(py, &value)
}

#[pymodule]
fn gp_leapfrog_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Realization>()?;
    m.add_function(wrap_pyfunction!(leapfrog_step, m)?)?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(reference_solve, m)?)?;
    m.add_function(wrap_pyfunction!(energy, m)?)?;
    m.add_function(wrap_pyfunction!(fit_order, m)?)?;
    m.add_function(wrap_pyfunction!(study, m)?)?;
    Ok(())
}
