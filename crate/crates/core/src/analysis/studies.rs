use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::fit::{fit_rows, FitOutcome};
use crate::error::{Error, Result};
use crate::gp_field::{sample_realization, Potential, PotentialRealization};
use crate::hamiltonian::{MassMatrix, PhaseState, SystemConfig};
use crate::integrators::{
    exact_taylor_step, integrate, leapfrog_param_step, modified_flow_step, reference_solve, step_count, Scheme,
    SchemeParams, DEFAULT_SUBSTEPS, MIN_MODIFIED_SUBSTEPS,
};

pub const DEFAULT_SEEDS: usize = 64;
pub const DEFAULT_MASTER_SEED: u64 = 42;

/// A study is unreliable once more than this fraction of samples at any step
/// size is excluded.
pub const EXCLUSION_LIMIT: f64 = 0.01;

/// `{2⁻⁴, …, 2⁻⁹}`.
pub fn default_dt_grid() -> Vec<f64> {
    (4..=9).map(|k| 0.5f64.powi(k)).collect()
}

/// `α₁ = β₁ = 0`, `α₂ = 1`, `β₂ = 2`.
pub fn default_params() -> SchemeParams {
    SchemeParams {
        alpha1: 0.0,
        alpha2: 1.0,
        beta1: 0.0,
        beta2: 2.0,
    }
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    /// System template; the field seed is replaced per Monte Carlo sample.
    pub system: SystemConfig,
    pub params: SchemeParams,
    pub dt_grid: Vec<f64>,
    pub seeds: usize,
    pub master_seed: u64,
    /// Reference RK4 substeps per step of the finest grid step size.
    pub substeps: usize,
}

impl StudyConfig {
    pub fn new(system: SystemConfig) -> Self {
        Self {
            system,
            params: default_params(),
            dt_grid: default_dt_grid(),
            seeds: DEFAULT_SEEDS,
            master_seed: DEFAULT_MASTER_SEED,
            substeps: DEFAULT_SUBSTEPS,
        }
    }

    /// Realization seed of Monte Carlo sample `i`. The same list is reused at
    /// every step size.
    pub fn seed(&self, i: usize) -> u64 {
        self.master_seed.wrapping_add(i as u64)
    }

    pub fn dt_min(&self) -> f64 {
        self.dt_grid.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        SchemeParams::new(self.params.alpha1, self.params.alpha2, self.params.beta1, self.params.beta2)?;
        if self.dt_grid.len() < 4 {
            return Err(Error::usage(format!(
                "run.dt_grid must hold at least 4 distinct step sizes, got {}",
                self.dt_grid.len()
            )));
        }
        for (i, &dt) in self.dt_grid.iter().enumerate() {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::config("run.dt_grid", "finite values > 0"));
            }
            if self.dt_grid[..i].contains(&dt) {
                return Err(Error::config("run.dt_grid", "distinct values"));
            }
        }
        if self.seeds == 0 {
            return Err(Error::config("run.seeds", ">= 1"));
        }
        if self.substeps == 0 {
            return Err(Error::config("run.substeps", ">= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    LocalOrder,
    ModifiedMatch,
    TaylorOrder,
    GlobalOrder,
}

impl StudyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StudyKind::LocalOrder => "local-order",
            StudyKind::ModifiedMatch => "modified-match",
            StudyKind::TaylorOrder => "taylor-order",
            StudyKind::GlobalOrder => "global-order",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Y,
    X,
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorNorms {
    pub y: f64,
    pub x: f64,
    pub joint: f64,
}

impl ErrorNorms {
    pub fn from_diff(dy: &DVector<f64>, dx: &DVector<f64>) -> Self {
        let (y, x) = (dy.norm(), dx.norm());
        Self {
            y,
            x,
            joint: y.hypot(x),
        }
    }

    pub fn get(&self, c: Component) -> f64 {
        match c {
            Component::Y => self.y,
            Component::X => self.x,
            Component::Joint => self.joint,
        }
    }
}

/// One Monte Carlo error measurement. Excluded samples (escape or overflow)
/// carry no norms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorSample {
    pub dt: f64,
    pub seed: u64,
    pub norms: Option<ErrorNorms>,
}

impl ErrorSample {
    pub fn excluded(&self) -> bool {
        self.norms.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmsRow {
    pub dt: f64,
    pub included: usize,
    pub excluded: usize,
    pub rms_y: f64,
    pub rms_x: f64,
    pub rms_joint: f64,
}

impl RmsRow {
    pub fn rms(&self, c: Component) -> f64 {
        match c {
            Component::Y => self.rms_y,
            Component::X => self.rms_x,
            Component::Joint => self.rms_joint,
        }
    }

    pub fn excluded_fraction(&self) -> f64 {
        self.excluded as f64 / (self.included + self.excluded) as f64
    }
}

/// Pass/fail check of a fitted slope against its acceptance window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub check: String,
    pub component: Component,
    pub slope: Option<f64>,
    pub lower: f64,
    pub upper: Option<f64>,
    pub min_r_squared: Option<f64>,
    pub pass: bool,
}

fn verdict(check: &str, fit: &FitOutcome, component: Component, lower: f64, upper: Option<f64>, min_r2: Option<f64>) -> Verdict {
    let pass = fit.fit().is_some_and(|f| {
        f.slope >= lower && upper.is_none_or(|u| f.slope <= u) && min_r2.is_none_or(|r| f.r_squared >= r)
    });
    Verdict {
        check: check.into(),
        component,
        slope: fit.slope(),
        lower,
        upper,
        min_r_squared: min_r2,
        pass,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reliability {
    pub reliable: bool,
    pub max_excluded_fraction: f64,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub kind: StudyKind,
    /// Label of the scheme under test ("parameterized" or "standard").
    pub scheme: &'static str,
    pub params: SchemeParams,
    pub seeds: usize,
    #[serde(skip)]
    pub samples: Vec<ErrorSample>,
    pub table: Vec<RmsRow>,
    pub fit_y: FitOutcome,
    pub fit_x: FitOutcome,
    pub fit_joint: FitOutcome,
    /// Global studies: `max over δt of RMS/δt`.
    pub implied_constant: Option<f64>,
    /// Global studies: the standard leapfrog on the same realizations.
    pub companion: Option<Box<StudyReport>>,
}

impl StudyReport {
    pub fn fit(&self, c: Component) -> &FitOutcome {
        match c {
            Component::Y => &self.fit_y,
            Component::X => &self.fit_x,
            Component::Joint => &self.fit_joint,
        }
    }

    fn is_negative_control(&self) -> bool {
        self.kind == StudyKind::LocalOrder && self.params.alpha1 != 0.0
    }

    /// Components whose fits decide reliability and acceptance.
    pub fn primary_components(&self) -> Vec<Component> {
        match self.kind {
            StudyKind::TaylorOrder => vec![Component::Y, Component::X],
            _ if self.is_negative_control() => vec![Component::X],
            _ => vec![Component::Joint],
        }
    }

    pub fn reliability(&self) -> Reliability {
        let max_excluded_fraction = self.table.iter().map(RmsRow::excluded_fraction).fold(0.0, f64::max);
        let mut reasons = Vec::new();
        for row in &self.table {
            if row.excluded_fraction() > EXCLUSION_LIMIT {
                reasons.push(format!(
                    "{} of {} samples excluded at dt = {}",
                    row.excluded,
                    row.included + row.excluded,
                    row.dt
                ));
            }
        }
        for c in self.primary_components() {
            if let FitOutcome::Degenerate { reason } = self.fit(c) {
                reasons.push(format!("{c:?} fit: {reason}").to_lowercase());
            }
        }
        Reliability {
            reliable: reasons.is_empty(),
            max_excluded_fraction,
            reasons,
        }
    }

    /// Acceptance windows that apply to this study and scheme.
    pub fn verdicts(&self) -> Vec<Verdict> {
        let consistent = self.params.is_consistent();
        match self.kind {
            StudyKind::LocalOrder if consistent => vec![verdict(
                "local order",
                &self.fit_joint,
                Component::Joint,
                1.85,
                Some(2.15),
                Some(0.99),
            )],
            StudyKind::LocalOrder if self.params.alpha1 != 0.0 => vec![verdict(
                "negative control",
                &self.fit_x,
                Component::X,
                0.85,
                Some(1.15),
                None,
            )],
            StudyKind::ModifiedMatch => vec![verdict(
                "modified-equation matching",
                &self.fit_joint,
                Component::Joint,
                2.8,
                Some(3.2),
                None,
            )],
            StudyKind::TaylorOrder => vec![
                verdict("Taylor remainder", &self.fit_y, Component::Y, 3.8, Some(4.2), None),
                verdict("Taylor remainder", &self.fit_x, Component::X, 2.8, Some(3.2), None),
            ],
            StudyKind::GlobalOrder if consistent => {
                vec![verdict("global order", &self.fit_joint, Component::Joint, 0.85, None, None)]
            }
            _ => Vec::new(),
        }
    }

    /// True when RMS is nonincreasing as δt decreases, allowing one inversion
    /// between the two largest step sizes.
    pub fn is_monotone(&self, c: Component) -> bool {
        let mut rows: Vec<_> = self.table.iter().collect();
        rows.sort_by(|a, b| b.dt.total_cmp(&a.dt));
        rows.windows(2)
            .enumerate()
            .all(|(i, w)| i == 0 || w[1].rms(c) <= w[0].rms(c))
    }

    /// CSV columns `dt, seed, excluded, err_y, err_x, err_joint`, ordered by
    /// step size then seed. Excluded samples leave the error cells empty.
    pub fn write_samples_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["dt", "seed", "excluded", "err_y", "err_x", "err_joint"])?;
        for s in &self.samples {
            let (a, b, c) = match s.norms {
                Some(n) => (n.y.to_string(), n.x.to_string(), n.joint.to_string()),
                None => Default::default(),
            };
            out.write_record([s.dt.to_string(), s.seed.to_string(), u8::from(s.excluded()).to_string(), a, b, c])?;
        }
        out.flush()?;
        Ok(())
    }

    /// CSV columns `dt, included, excluded, rms_y, rms_x, rms_joint`.
    pub fn write_rms_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["dt", "included", "excluded", "rms_y", "rms_x", "rms_joint"])?;
        for r in &self.table {
            out.write_record([
                r.dt.to_string(),
                r.included.to_string(),
                r.excluded.to_string(),
                r.rms_y.to_string(),
                r.rms_x.to_string(),
                r.rms_joint.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn assemble(
    kind: StudyKind,
    scheme: &'static str,
    params: SchemeParams,
    cfg: &StudyConfig,
    per_seed: &[Vec<Option<ErrorNorms>>],
) -> StudyReport {
    let mut samples = Vec::with_capacity(cfg.dt_grid.len() * cfg.seeds);
    let mut table = Vec::with_capacity(cfg.dt_grid.len());
    for (k, &dt) in cfg.dt_grid.iter().enumerate() {
        let (mut sy, mut sx, mut sj, mut included) = (0.0, 0.0, 0.0, 0usize);
        for (i, row) in per_seed.iter().enumerate() {
            let norms = row[k];
            if let Some(n) = norms {
                sy += n.y * n.y;
                sx += n.x * n.x;
                sj += n.joint * n.joint;
                included += 1;
            }
            samples.push(ErrorSample {
                dt,
                seed: cfg.seed(i),
                norms,
            });
        }
        let rms = |s: f64| if included == 0 { f64::NAN } else { (s / included as f64).sqrt() };
        table.push(RmsRow {
            dt,
            included,
            excluded: per_seed.len() - included,
            rms_y: rms(sy),
            rms_x: rms(sx),
            rms_joint: rms(sj),
        });
    }
    let rows = |c: Component| -> Vec<(f64, f64, usize)> { table.iter().map(|r| (r.dt, r.rms(c), r.included)).collect() };
    StudyReport {
        kind,
        scheme,
        params,
        seeds: cfg.seeds,
        fit_y: fit_rows(&rows(Component::Y)),
        fit_x: fit_rows(&rows(Component::X)),
        fit_joint: fit_rows(&rows(Component::Joint)),
        samples,
        table,
        implied_constant: None,
        companion: None,
    }
}

/// Runs `per_seed` on every realization in parallel and returns the results
/// in seed order.
fn over_seeds<T, F>(cfg: &StudyConfig, per_seed: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&PotentialRealization) -> Result<T> + Sync,
{
    cfg.validate()?;
    (0..cfg.seeds)
        .into_par_iter()
        .map(|i| {
            let r = sample_realization(&cfg.system.field.with_seed(cfg.seed(i)))?;
            per_seed(&r)
        })
        .collect()
}

fn outside(s: &PhaseState, radius: f64) -> bool {
    !s.is_finite() || s.norm() > radius
}

/// Scheme result, or `None` on escape or overflow.
fn guarded(step: Result<PhaseState>, radius: f64) -> Result<Option<PhaseState>> {
    match step {
        Ok(s) if outside(&s, radius) => Ok(None),
        Ok(s) => Ok(Some(s)),
        Err(Error::Overflow { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn diff(a: &PhaseState, b: &PhaseState) -> ErrorNorms {
    ErrorNorms::from_diff(&(&a.y - &b.y), &(&a.x - &b.x))
}

/// `τ = Φ_δt(s) − Ψ_δt(s)`: the reference one-step flow minus the
/// parameterized step, with `substeps` RK4 steps across `δt`.
pub fn local_truncation<P: Potential + ?Sized>(
    pot: &P,
    mass: &MassMatrix,
    params: &SchemeParams,
    dt: f64,
    s: &PhaseState,
    substeps: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let exact = reference_solve(pot, mass, s, dt, dt, substeps)?;
    let step = leapfrog_param_step(pot, mass, params, dt, s)?;
    Ok((exact.y - step.y, exact.x - step.x))
}

/// RMS local truncation error of the parameterized step from the initial
/// state, per step size.
pub fn ms_local_error_study(cfg: &StudyConfig) -> Result<StudyReport> {
    let sys = &cfg.system;
    let dt_min = cfg.dt_min();
    let per_seed = over_seeds(cfg, |r| {
        cfg.dt_grid
            .iter()
            .map(|&dt| {
                let step = leapfrog_param_step(r, &sys.mass, &cfg.params, dt, &sys.initial);
                let Some(step) = guarded(step, sys.escape_radius)? else {
                    return Ok(None);
                };
                let exact = reference_solve(r, &sys.mass, &sys.initial, dt, dt_min, cfg.substeps)?;
                Ok(Some(diff(&exact, &step)))
            })
            .collect()
    })?;
    Ok(assemble(StudyKind::LocalOrder, "parameterized", cfg.params, cfg, &per_seed))
}

/// RMS one-step gap between the parameterized step and the flow of its
/// first-order modified equation.
pub fn modified_matching_study(cfg: &StudyConfig) -> Result<StudyReport> {
    let sys = &cfg.system;
    let inner = cfg.substeps.max(MIN_MODIFIED_SUBSTEPS);
    let per_seed = over_seeds(cfg, |r| {
        cfg.dt_grid
            .iter()
            .map(|&dt| {
                let step = leapfrog_param_step(r, &sys.mass, &cfg.params, dt, &sys.initial);
                let Some(step) = guarded(step, sys.escape_radius)? else {
                    return Ok(None);
                };
                let modified = modified_flow_step(r, &sys.mass, &cfg.params, dt, &sys.initial, inner)?;
                Ok(Some(diff(&modified, &step)))
            })
            .collect()
    })?;
    Ok(assemble(StudyKind::ModifiedMatch, "parameterized", cfg.params, cfg, &per_seed))
}

/// RMS gap between the reference one-step flow and its truncated Taylor
/// series, per component.
pub fn taylor_remainder_study(cfg: &StudyConfig) -> Result<StudyReport> {
    let sys = &cfg.system;
    let dt_min = cfg.dt_min();
    let per_seed = over_seeds(cfg, |r| {
        cfg.dt_grid
            .iter()
            .map(|&dt| {
                let exact = reference_solve(r, &sys.mass, &sys.initial, dt, dt_min, cfg.substeps);
                let Some(exact) = guarded(exact, sys.escape_radius)? else {
                    return Ok(None);
                };
                let series = exact_taylor_step(r, &sys.mass, dt, &sys.initial)?;
                Ok(Some(diff(&exact, &series)))
            })
            .collect()
    })?;
    Ok(assemble(StudyKind::TaylorOrder, "standard", cfg.params, cfg, &per_seed))
}

/// RMS endpoint error at `T` for the parameterized scheme, with the standard
/// leapfrog on the same realizations reported as a companion.
pub fn global_error_study(cfg: &StudyConfig) -> Result<StudyReport> {
    let sys = &cfg.system;
    for &dt in &cfg.dt_grid {
        let ratio = sys.horizon / dt;
        if dt > 0.0 && (ratio - step_count(sys.horizon, dt) as f64).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::config("run.dt_grid", "step sizes dividing system.horizon"));
        }
    }
    let dt_min = cfg.dt_min();
    let endpoint_error = |r: &PotentialRealization, scheme: Scheme, dt: f64, exact: &PhaseState| -> Result<Option<ErrorNorms>> {
        match integrate(scheme, r, &sys.mass, dt, &sys.initial, sys.horizon, sys.escape_radius) {
            Ok(traj) if traj.escaped() => Ok(None),
            Ok(traj) => Ok(Some(diff(exact, traj.last()))),
            Err(Error::Overflow { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let per_seed = over_seeds(cfg, |r| {
        let exact = reference_solve(r, &sys.mass, &sys.initial, sys.horizon, dt_min, cfg.substeps)?;
        let mut param = Vec::with_capacity(cfg.dt_grid.len());
        let mut standard = Vec::with_capacity(cfg.dt_grid.len());
        for &dt in &cfg.dt_grid {
            param.push(endpoint_error(r, Scheme::Parameterized(cfg.params), dt, &exact)?);
            standard.push(endpoint_error(r, Scheme::Standard, dt, &exact)?);
        }
        Ok((param, standard))
    })?;
    let (param, standard): (Vec<_>, Vec<_>) = per_seed.into_iter().unzip();
    let implied = |rep: &StudyReport| {
        rep.table
            .iter()
            .filter(|r| r.included > 0)
            .map(|r| r.rms_joint / r.dt)
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
    };
    let mut companion = assemble(StudyKind::GlobalOrder, "standard", SchemeParams::standard(), cfg, &standard);
    companion.implied_constant = implied(&companion);
    let mut report = assemble(StudyKind::GlobalOrder, "parameterized", cfg.params, cfg, &param);
    report.implied_constant = implied(&report);
    report.companion = Some(Box::new(companion));
    Ok(report)
}
