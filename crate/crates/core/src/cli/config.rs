//! TOML run configuration. Every section and key is optional; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::analysis::{default_dt_grid, default_params, default_tail_levels, ProbeBox, StudyConfig, DEFAULT_MASTER_SEED, DEFAULT_SEEDS, MIN_MOMENT_RESOLUTION};
use crate::error::{Error, Result};
use crate::gp_field::{FieldConfig, KernelSpec, MeanSpec, SamplerKind, DEFAULT_DIM, DEFAULT_FEATURES};
use crate::hamiltonian::{default_initial_state, MassMatrix, PhaseState, SystemConfig, DEFAULT_ESCAPE_RADIUS};
use crate::integrators::{SchemeParams, DEFAULT_SUBSTEPS};

pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_HORIZON: f64 = 1.0;
pub const DEFAULT_RESOLUTION: usize = 16;
pub const DEFAULT_TAIL_LEVELS: usize = 26;
pub const DEFAULT_OUTPUT_DIR: &str = "gp-leapfrog-runs";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    run: RawRun,
    #[serde(default)]
    field: RawField,
    #[serde(default)]
    kernel: RawKernel,
    #[serde(default)]
    mean: RawMean,
    #[serde(default)]
    system: RawSystem,
    #[serde(default)]
    scheme: RawScheme,
    #[serde(default)]
    probe: RawProbe,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    master_seed: Option<u64>,
    seeds: Option<usize>,
    dt_grid: Option<Vec<f64>>,
    dt: Option<f64>,
    substeps: Option<usize>,
    output_dir: Option<PathBuf>,
    plot: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawField {
    dim: Option<usize>,
    sampler: Option<String>,
    features: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKernel {
    variance: Option<f64>,
    lengthscale: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MatrixSpec {
    Named(String),
    Diagonal(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMean {
    constant: Option<f64>,
    linear: Option<Vec<f64>>,
    quadratic: Option<MatrixSpec>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    mass: Option<MatrixSpec>,
    y0: Option<Vec<f64>>,
    x0: Option<Vec<f64>>,
    horizon: Option<f64>,
    escape_radius: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScheme {
    alpha1: Option<f64>,
    alpha2: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProbe {
    lo: Option<Vec<f64>>,
    hi: Option<Vec<f64>>,
    resolution: Option<usize>,
    levels: Option<Vec<f64>>,
}

/// Fully resolved and validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub master_seed: u64,
    pub seeds: usize,
    pub dt_grid: Vec<f64>,
    pub dt: f64,
    pub substeps: usize,
    pub output_dir: PathBuf,
    pub plot: bool,
    /// Field with `seed` set to the single-realization seed.
    pub field: FieldConfig,
    pub system: SystemConfig,
    pub params: SchemeParams,
    pub probe: ProbeBox,
    pub resolution: usize,
    pub levels: Vec<f64>,
    /// Keys filled from defaults, as `section.key`.
    pub defaulted: Vec<String>,
}

struct Defaults(Vec<String>);

impl Defaults {
    fn take<T>(&mut self, key: &str, value: Option<T>, default: impl FnOnce() -> T) -> T {
        value.unwrap_or_else(|| {
            self.0.push(key.to_string());
            default()
        })
    }
}

fn matrix_from_rows(key: &str, rows: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::config(key, format!("a {d}x{d} matrix")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn quadratic(spec: Option<MatrixSpec>, d: usize) -> Result<DMatrix<f64>> {
    match spec {
        None => Ok(DMatrix::identity(d, d)),
        Some(MatrixSpec::Named(s)) if s == "identity" => Ok(DMatrix::identity(d, d)),
        Some(MatrixSpec::Named(s)) if s == "zero" => Ok(DMatrix::zeros(d, d)),
        Some(MatrixSpec::Diagonal(v)) if v.len() == d => Ok(DMatrix::from_diagonal(&DVector::from_vec(v))),
        Some(MatrixSpec::Rows(rows)) => matrix_from_rows("mean.quadratic", &rows, d),
        Some(_) => Err(Error::config(
            "mean.quadratic",
            format!("\"identity\", \"zero\", a list of {d} diagonal entries, or a {d}x{d} matrix"),
        )),
    }
}

fn mass(spec: Option<MatrixSpec>, d: usize) -> Result<MassMatrix> {
    let bad = || Error::config("system.mass", format!("\"identity\", a list of {d} positive diagonal entries, or a {d}x{d} SPD matrix"));
    match spec {
        None => Ok(MassMatrix::identity(d)),
        Some(MatrixSpec::Named(s)) if s == "identity" => Ok(MassMatrix::identity(d)),
        Some(MatrixSpec::Diagonal(v)) if v.len() == d => MassMatrix::diagonal(&v),
        Some(MatrixSpec::Rows(rows)) => MassMatrix::dense(matrix_from_rows("system.mass", &rows, d)?),
        Some(_) => Err(bad()),
    }
}

fn vector(key: &str, v: Vec<f64>, d: usize) -> Result<DVector<f64>> {
    if v.len() != d {
        return Err(Error::config(key, format!("of length field.dim = {d}")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::config(key, "finite"));
    }
    Ok(DVector::from_vec(v))
}

/// Parses and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

/// Parses and validates configuration text.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
    resolve(raw)
}

fn resolve(raw: RawConfig) -> Result<RunConfig> {
    let mut df = Defaults(Vec::new());
    let RawConfig {
        run,
        field,
        kernel,
        mean,
        system,
        scheme,
        probe,
    } = raw;

    let master_seed = df.take("run.master_seed", run.master_seed, || DEFAULT_MASTER_SEED);
    let seeds = df.take("run.seeds", run.seeds, || DEFAULT_SEEDS);
    let dt_grid = df.take("run.dt_grid", run.dt_grid, default_dt_grid);
    let dt = df.take("run.dt", run.dt, || DEFAULT_DT);
    let substeps = df.take("run.substeps", run.substeps, || DEFAULT_SUBSTEPS);
    let output_dir = df.take("run.output_dir", run.output_dir, || PathBuf::from(DEFAULT_OUTPUT_DIR));
    let plot = df.take("run.plot", run.plot, || false);
    if seeds == 0 {
        return Err(Error::config("run.seeds", ">= 1"));
    }
    if substeps == 0 {
        return Err(Error::config("run.substeps", ">= 1"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config("run.dt", "> 0"));
    }
    if dt_grid.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(Error::config("run.dt_grid", "finite values > 0"));
    }

    let d = df.take("field.dim", field.dim, || DEFAULT_DIM);
    if d == 0 {
        return Err(Error::config("field.dim", ">= 1"));
    }
    let sampler: SamplerKind = df.take("field.sampler", field.sampler, || "fourier-feature".into()).parse()?;
    let features = df.take("field.features", field.features, || DEFAULT_FEATURES);
    let seed = df.take("field.seed", field.seed, || master_seed);
    let kernel = KernelSpec::new(
        df.take("kernel.variance", kernel.variance, || 1.0),
        df.take("kernel.lengthscale", kernel.lengthscale, || 1.0),
    )?;
    let constant = df.take("mean.constant", mean.constant, || 0.0);
    if !constant.is_finite() {
        return Err(Error::config("mean.constant", "finite"));
    }
    let linear = vector("mean.linear", df.take("mean.linear", mean.linear, || vec![0.0; d]), d)?;
    if mean.quadratic.is_none() {
        df.0.push("mean.quadratic".into());
    }
    let mean = MeanSpec::new(constant, linear, quadratic(mean.quadratic, d)?).map_err(|e| match e {
        Error::Config { constraint, .. } => Error::Config {
            key: "mean.quadratic".into(),
            constraint,
        },
        other => other,
    })?;
    let field = FieldConfig {
        dim: d,
        kernel,
        mean,
        sampler,
        features,
        seed,
    };
    field.validate()?;

    if system.mass.is_none() {
        df.0.push("system.mass".into());
    }
    let mass = mass(system.mass, d)?;
    let init = default_initial_state(d);
    let y0 = vector("system.y0", df.take("system.y0", system.y0, || init.y.as_slice().to_vec()), d)?;
    let x0 = vector("system.x0", df.take("system.x0", system.x0, || init.x.as_slice().to_vec()), d)?;
    let system = SystemConfig {
        field: field.clone(),
        mass,
        initial: PhaseState::new(y0, x0)?,
        horizon: df.take("system.horizon", system.horizon, || DEFAULT_HORIZON),
        escape_radius: df.take("system.escape_radius", system.escape_radius, || DEFAULT_ESCAPE_RADIUS),
    };
    system.validate()?;

    let base = default_params();
    let params = SchemeParams::new(
        df.take("scheme.alpha1", scheme.alpha1, || base.alpha1),
        df.take("scheme.alpha2", scheme.alpha2, || base.alpha2),
        df.take("scheme.beta1", scheme.beta1, || base.beta1),
        df.take("scheme.beta2", scheme.beta2, || base.beta2),
    )?;

    let lo = df.take("probe.lo", probe.lo, || vec![-1.0; d]);
    let hi = df.take("probe.hi", probe.hi, || vec![1.0; d]);
    if lo.len() != d {
        return Err(Error::config("probe.lo", format!("of length field.dim = {d}")));
    }
    let probe_box = ProbeBox::new(lo, hi)?;
    let resolution = df.take("probe.resolution", probe.resolution, || DEFAULT_RESOLUTION);
    if resolution == 0 {
        return Err(Error::config("probe.resolution", ">= 1"));
    }
    let levels = df.take("probe.levels", probe.levels, || {
        default_tail_levels(&field, &probe_box, resolution, DEFAULT_TAIL_LEVELS)
    });
    if levels.is_empty() || levels.windows(2).any(|w| !(w[0] < w[1])) || levels.iter().any(|u| !u.is_finite()) {
        return Err(Error::config("probe.levels", "finite and strictly increasing"));
    }

    Ok(RunConfig {
        master_seed,
        seeds,
        dt_grid,
        dt,
        substeps,
        output_dir,
        plot,
        field,
        system,
        params,
        probe: probe_box,
        resolution,
        levels,
        defaulted: df.0,
    })
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl RunConfig {
    pub fn study_config(&self) -> StudyConfig {
        StudyConfig {
            system: self.system.clone(),
            params: self.params,
            dt_grid: self.dt_grid.clone(),
            seeds: self.seeds,
            master_seed: self.master_seed,
            substeps: self.substeps,
        }
    }

    /// Moment studies need at least this resolution.
    pub fn check_moment_resolution(&self) -> Result<()> {
        if self.resolution < MIN_MOMENT_RESOLUTION {
            return Err(Error::config("probe.resolution", format!(">= {MIN_MOMENT_RESOLUTION}")));
        }
        Ok(())
    }

    /// The complete effective configuration, in the same layout as the input
    /// file. Keys are sorted, so the rendering is canonical.
    pub fn effective(&self) -> Value {
        json!({
            "run": {
                "master_seed": self.master_seed,
                "seeds": self.seeds,
                "dt_grid": self.dt_grid,
                "dt": self.dt,
                "substeps": self.substeps,
                "output_dir": self.output_dir.to_string_lossy(),
                "plot": self.plot,
            },
            "field": {
                "dim": self.field.dim,
                "sampler": self.field.sampler.name(),
                "features": self.field.features,
                "seed": self.field.seed,
            },
            "kernel": {
                "variance": self.field.kernel.variance(),
                "lengthscale": self.field.kernel.lengthscale(),
            },
            "mean": {
                "constant": self.field.mean.constant(),
                "linear": self.field.mean.linear().as_slice(),
                "quadratic": rows(self.field.mean.quadratic()),
            },
            "system": {
                "mass": rows(self.system.mass.matrix()),
                "y0": self.system.initial.y.as_slice(),
                "x0": self.system.initial.x.as_slice(),
                "horizon": self.system.horizon,
                "escape_radius": self.system.escape_radius,
            },
            "scheme": self.params,
            "probe": {
                "lo": self.probe.lo(),
                "hi": self.probe.hi(),
                "resolution": self.resolution,
                "levels": self.levels,
            },
        })
    }

    /// Effective configuration without the keys that do not affect results.
    pub fn identity(&self) -> Value {
        let mut v = self.effective();
        if let Some(run) = v.get_mut("run").and_then(Value::as_object_mut) {
            run.remove("output_dir");
            run.remove("plot");
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_documented_defaults() {
        let cfg = parse_config_str("").unwrap();
        assert_eq!(cfg.master_seed, 42);
        assert_eq!(cfg.seeds, 64);
        assert_eq!(cfg.dt_grid, default_dt_grid());
        assert_eq!(cfg.field.dim, 2);
        assert_eq!(cfg.field.features, 512);
        assert_eq!(cfg.field.seed, 42);
        assert_eq!(cfg.params, default_params());
        assert_eq!(cfg.system.horizon, 1.0);
        assert_eq!(cfg.levels.len(), DEFAULT_TAIL_LEVELS);
        assert!(cfg.defaulted.contains(&"kernel.lengthscale".to_string()));
        let echo = cfg.effective();
        assert_eq!(echo["scheme"]["beta2"], 2.0);
        assert_eq!(echo["mean"]["quadratic"], json!([[1.0, 0.0], [0.0, 1.0]]));
        // The echo is itself a valid configuration reproducing the same run.
        let text = toml::to_string(&echo).unwrap();
        let again = parse_config_str(&text).unwrap();
        assert_eq!(again.effective(), echo);
        assert!(again.defaulted.is_empty());
    }

    #[test]
    fn zero_lengthscale_names_key_and_constraint() {
        let err = parse_config_str("[kernel]\nlengthscale = 0.0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("kernel.lengthscale") && msg.contains("> 0"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_config_str("[kernel]\nlenghtscale = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("lenghtscale"), "{err}");
        assert!(parse_config_str("[plotting]\nx = 1\n").is_err());
    }

    #[test]
    fn matrix_forms() {
        let cfg = parse_config_str("[system]\nmass = [2.0, 3.0]\n[mean]\nquadratic = \"zero\"\n").unwrap();
        assert_eq!(cfg.system.mass.matrix()[(1, 1)], 3.0);
        assert_eq!(cfg.field.mean.quadratic(), &DMatrix::zeros(2, 2));
        let cfg = parse_config_str("[system]\nmass = [[2.0, 0.5], [0.5, 1.0]]\n").unwrap();
        assert_eq!(cfg.system.mass.kind_name(), "dense");
        let err = parse_config_str("[system]\nmass = [[1.0, 2.0], [2.0, 1.0]]\n").unwrap_err();
        assert!(err.to_string().contains("system.mass"), "{err}");
        let err = parse_config_str("[field]\ndim = 3\n[system]\ny0 = [1.0]\n").unwrap_err();
        assert!(err.to_string().contains("system.y0"), "{err}");
    }
}
