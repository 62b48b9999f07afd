//! Monte Carlo studies of local, modified-equation, Taylor-remainder and
//! global errors, derivative moments and tails, and energy drift.
//!
//! Studies reuse the same realization seeds at every step size and fan out
//! over seeds with rayon. Results are collected in seed order and reduced
//! sequentially, so they do not depend on the worker count.

mod drift;
mod fit;
mod moments;
mod studies;

pub use drift::{energy_drift_study, DriftReport};
pub use fit::{fit_order, FitOutcome, OrderFit, MIN_FIT_POINTS, NOISE_FLOOR};
pub use moments::{
    default_tail_levels, hessian_operator_norm, moment_estimate, tail_probe, tensor_operator_norm, MomentReport,
    ProbeBox, TailReport, TensorNormMethod, MIN_EXCEEDANCES, MIN_MOMENT_RESOLUTION,
};
pub use studies::{
    default_dt_grid, default_params, global_error_study, local_truncation, modified_matching_study,
    ms_local_error_study, taylor_remainder_study, Component, ErrorNorms, ErrorSample, Reliability, RmsRow,
    StudyConfig, StudyKind, StudyReport, Verdict, DEFAULT_MASTER_SEED, DEFAULT_SEEDS, EXCLUSION_LIMIT,
};
