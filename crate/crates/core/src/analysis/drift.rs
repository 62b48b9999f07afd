use serde::Serialize;

use crate::error::Result;
use crate::gp_field::sample_realization;
use crate::hamiltonian::SystemConfig;
use crate::integrators::{integrate, Scheme, Termination};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub dt: f64,
    pub steps: usize,
    pub initial_energy: f64,
    /// `max_n |H_n − H₀| / |H₀|`, or the absolute deviation when `H₀ = 0`.
    pub max_deviation: f64,
    pub relative: bool,
    /// Mean deviation over the first and last tenth of the steps.
    pub first_decile_mean: f64,
    pub last_decile_mean: f64,
    /// `last_decile_mean ≤ 2 · first_decile_mean`.
    pub no_monotone_drift: bool,
    pub termination: Termination,
    /// `H_n` for every step, including `H₀`.
    #[serde(skip)]
    pub energies: Vec<f64>,
}

/// Energy deviation of the standard leapfrog on one realization over
/// `system.horizon`.
pub fn energy_drift_study(system: &SystemConfig, dt: f64) -> Result<DriftReport> {
    system.validate()?;
    let r = sample_realization(&system.field)?;
    let traj = integrate(
        Scheme::Standard,
        &r,
        &system.mass,
        dt,
        &system.initial,
        system.horizon,
        system.escape_radius,
    )?;
    let h0 = traj.energies[0];
    let relative = h0 != 0.0;
    let scale = if relative { h0.abs() } else { 1.0 };
    let dev: Vec<f64> = traj.energies[1..].iter().map(|h| (h - h0).abs() / scale).collect();
    let window = (dev.len() / 10).max(1).min(dev.len());
    let mean = |xs: &[f64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };
    let first = mean(&dev[..window]);
    let last = mean(&dev[dev.len() - window..]);
    Ok(DriftReport {
        dt,
        steps: dev.len(),
        initial_energy: h0,
        max_deviation: dev.iter().copied().fold(0.0, f64::max),
        relative,
        first_decile_mean: first,
        last_decile_mean: last,
        no_monotone_drift: last <= 2.0 * first,
        termination: traj.termination,
        energies: traj.energies,
    })
}
