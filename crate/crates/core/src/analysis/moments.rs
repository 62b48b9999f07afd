use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gp_field::{sample_realization, FieldConfig, Potential};

pub const MIN_MOMENT_RESOLUTION: usize = 8;

/// Levels with fewer exceedances than this are left out of the tail fit.
pub const MIN_EXCEEDANCES: usize = 10;

/// Axis-aligned box `[lo₁, hi₁] × … × [lo_d, hi_d]`. Degenerate axes
/// (`lo = hi`) are allowed and probe a single coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ProbeBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::config("probe.hi", "of the same nonzero length as probe.lo"));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b)) {
            return Err(Error::config("probe.lo", "finite and <= probe.hi componentwise"));
        }
        Ok(Self { lo, hi })
    }

    /// `[-h, h]^d`.
    pub fn symmetric(dim: usize, half_width: f64) -> Result<Self> {
        Self::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// Tensor grid with `resolution` nodes per nondegenerate axis, endpoints
    /// included, in row-major order (last axis fastest).
    pub fn grid(&self, resolution: usize) -> Vec<DVector<f64>> {
        let axes: Vec<Vec<f64>> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| {
                if a == b || resolution == 1 {
                    vec![if a == b { a } else { 0.5 * (a + b) }]
                } else {
                    (0..resolution)
                        .map(|i| a + (b - a) * i as f64 / (resolution - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let mut points = vec![Vec::with_capacity(self.dim())];
        for axis in &axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&c| {
                        let mut q = p.clone();
                        q.push(c);
                        q
                    })
                })
                .collect();
        }
        points.into_iter().map(DVector::from_vec).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorNormMethod {
    /// Maximization of `|T(v, v, v)|` over a mesh of unit directions with local
    /// refinement.
    DirectionMesh,
    /// Frobenius norm, an upper bound on the operator norm.
    FrobeniusBound,
}

/// Operator norm of a symmetric matrix: the largest absolute eigenvalue.
pub fn hessian_operator_norm(h: &DMatrix<f64>) -> f64 {
    h.clone().symmetric_eigenvalues().amax()
}

fn cubic_form(t: &[f64], d: usize, v: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            let vij = v[i] * v[j];
            for k in 0..d {
                s += t[(i * d + j) * d + k] * vij * v[k];
            }
        }
    }
    s
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd)
}

/// Operator norm `sup_{‖v₁‖=‖v₂‖=‖v₃‖=1} |T(v₁, v₂, v₃)|` of a symmetric
/// 3-tensor stored row-major as `d³` entries. For symmetric tensors the
/// supremum is attained on the diagonal `v₁ = v₂ = v₃`.
///
/// `d = 2` scans a 1° mesh of the half circle and refines the best cell by
/// golden-section search; `d = 3` scans a 2° sphere mesh and refines by
/// pattern search. Larger `d` returns the Frobenius bound.
pub fn tensor_operator_norm(t: &[f64], d: usize) -> (f64, TensorNormMethod) {
    assert_eq!(t.len(), d * d * d, "tensor must hold d³ entries");
    match d {
        1 => (t[0].abs(), TensorNormMethod::DirectionMesh),
        2 => {
            let f = |th: f64| cubic_form(t, 2, &[th.cos(), th.sin()]).abs();
            let step = 1f64.to_radians();
            let (best, _) = (0..180)
                .map(|k| (k as f64 * step, f(k as f64 * step)))
                .fold((0.0, f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc });
            let refined = golden_max(f, best - step, best + step, 60);
            (refined.max(f(best)), TensorNormMethod::DirectionMesh)
        }
        3 => {
            let dir = |th: f64, ph: f64| [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
            let f = |th: f64, ph: f64| cubic_form(t, 3, &dir(th, ph)).abs();
            let step = 2f64.to_radians();
            let mut best = (0.0, 0.0, f(0.0, 0.0));
            for i in 0..=90 {
                for j in 0..180 {
                    let (th, ph) = (i as f64 * step, j as f64 * step);
                    let v = f(th, ph);
                    if v > best.2 {
                        best = (th, ph, v);
                    }
                }
            }
            let (mut th, mut ph, mut val) = best;
            let mut h = step;
            while h > 1e-10 {
                let mut moved = false;
                for (dt, dp) in [(h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h)] {
                    let v = f(th + dt, ph + dp);
                    if v > val {
                        (th, ph, val) = (th + dt, ph + dp, v);
                        moved = true;
                        break;
                    }
                }
                if !moved {
                    h *= 0.5;
                }
            }
            (val, TensorNormMethod::DirectionMesh)
        }
        _ => (t.iter().map(|x| x * x).sum::<f64>().sqrt(), TensorNormMethod::FrobeniusBound),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    /// `Ê[sup ‖∇V‖²]`, `Ê[sup ‖D²V‖²]`, `Ê[sup ‖D³V‖²]` over the probe grid.
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub stderr: [f64; 3],
    pub probe: ProbeBox,
    pub resolution: usize,
    pub grid_points: usize,
    pub seeds: usize,
    pub master_seed: u64,
    pub tensor_norm: TensorNormMethod,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn seed_of(master: u64, i: usize) -> u64 {
    master.wrapping_add(i as u64)
}

/// Monte Carlo estimates of the expected suprema of squared derivative norms
/// over a grid on `probe`. Requires the Fourier-feature sampler.
pub fn moment_estimate(
    field: &FieldConfig,
    probe: &ProbeBox,
    resolution: usize,
    seeds: usize,
    master_seed: u64,
) -> Result<MomentReport> {
    field.validate()?;
    if probe.dim() != field.dim {
        return Err(Error::config("probe.lo", format!("of length field.dim = {}", field.dim)));
    }
    if resolution < MIN_MOMENT_RESOLUTION {
        return Err(Error::config("probe.resolution", format!(">= {MIN_MOMENT_RESOLUTION}")));
    }
    if seeds == 0 {
        return Err(Error::config("run.seeds", ">= 1"));
    }
    let grid = probe.grid(resolution);
    let d = field.dim;
    let sups: Vec<[f64; 3]> = (0..seeds)
        .into_par_iter()
        .map(|i| {
            let r = sample_realization(&field.with_seed(seed_of(master_seed, i)))?;
            let mut sup = [0.0f64; 3];
            for y in &grid {
                let jet = r.jet(y)?;
                sup[0] = sup[0].max(jet.grad.norm_squared());
                sup[1] = sup[1].max(hessian_operator_norm(&jet.hessian).powi(2));
                sup[2] = sup[2].max(tensor_operator_norm(&jet.third, d).0.powi(2));
            }
            Ok(sup)
        })
        .collect::<Result<_>>()?;
    let column = |k: usize| mean_stderr(&sups.iter().map(|s| s[k]).collect::<Vec<_>>());
    let ((c1, e1), (c2, e2), (c3, e3)) = (column(0), column(1), column(2));
    Ok(MomentReport {
        c1,
        c2,
        c3,
        stderr: [e1, e2, e3],
        probe: probe.clone(),
        resolution,
        grid_points: grid.len(),
        seeds,
        master_seed,
        tensor_norm: tensor_operator_norm(&vec![0.0; d * d * d], d).1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailReport {
    pub levels: Vec<f64>,
    pub exceedances: Vec<usize>,
    pub survival: Vec<f64>,
    /// `ln P(sup > u)`; `-inf` (serialized as null) where no seed exceeds `u`.
    pub log_survival: Vec<f64>,
    /// Empirical mean `Ê` of `sup_D |∂V/∂y₁|`.
    pub empirical_mean: f64,
    pub fit_levels: Vec<f64>,
    /// Levels above `Ê` left out for having fewer than [`MIN_EXCEEDANCES`].
    pub dropped_levels: Vec<f64>,
    /// Fit `ln P ≈ intercept + coefficient · (u − Ê)²` over `fit_levels`.
    pub coefficient: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    /// Log-survival decreasing and concave on the fitted levels, up to three
    /// binomial standard errors.
    pub concave_decreasing: bool,
    pub degenerate: bool,
    pub seeds: usize,
    pub master_seed: u64,
}

/// `n` equally spaced levels from 0 to five standard deviations of `∂V/∂y₁`
/// plus the largest `|∂m/∂y₁|` on the probe grid.
pub fn default_tail_levels(field: &FieldConfig, probe: &ProbeBox, resolution: usize, n: usize) -> Vec<f64> {
    let sd = field.kernel.variance().sqrt() / field.kernel.lengthscale();
    let mean_sup = probe
        .grid(resolution)
        .iter()
        .map(|y| field.mean.grad(y)[0].abs())
        .fold(0.0, f64::max);
    // A deterministic, flat field still gets a usable grid.
    let top = match 5.0 * sd + mean_sup {
        t if t > 0.0 => t,
        _ => 1.0,
    };
    (0..n).map(|i| top * i as f64 / (n - 1).max(1) as f64).collect()
}

/// Empirical survival of `sup_D |∂V/∂y₁|` and a quadratic fit of its log
/// beyond the empirical mean.
pub fn tail_probe(
    field: &FieldConfig,
    probe: &ProbeBox,
    resolution: usize,
    levels: &[f64],
    seeds: usize,
    master_seed: u64,
) -> Result<TailReport> {
    field.validate()?;
    if probe.dim() != field.dim {
        return Err(Error::config("probe.lo", format!("of length field.dim = {}", field.dim)));
    }
    if resolution == 0 {
        return Err(Error::config("probe.resolution", ">= 1"));
    }
    if seeds == 0 {
        return Err(Error::config("run.seeds", ">= 1"));
    }
    if levels.is_empty() || levels.windows(2).any(|w| !(w[0] < w[1])) || levels.iter().any(|u| !u.is_finite()) {
        return Err(Error::usage("tail levels must be finite and strictly increasing"));
    }
    let grid = probe.grid(resolution);
    let sups: Vec<f64> = (0..seeds)
        .into_par_iter()
        .map(|i| {
            let r = sample_realization(&field.with_seed(seed_of(master_seed, i)))?;
            grid.iter()
                .map(|y| r.grad(y).map(|g| g[0].abs()))
                .try_fold(0.0f64, |m, g| g.map(|g| m.max(g)))
        })
        .collect::<Result<_>>()?;
    let n = seeds as f64;
    let empirical_mean = sups.iter().sum::<f64>() / n;
    let exceedances: Vec<usize> = levels.iter().map(|&u| sups.iter().filter(|&&s| s > u).count()).collect();
    let survival: Vec<f64> = exceedances.iter().map(|&k| k as f64 / n).collect();
    let log_survival: Vec<f64> = survival.iter().map(|p| p.ln()).collect();

    let mut fit_idx = Vec::new();
    let mut dropped_levels = Vec::new();
    for (i, &u) in levels.iter().enumerate() {
        if u > empirical_mean {
            if exceedances[i] >= MIN_EXCEEDANCES {
                fit_idx.push(i);
            } else {
                dropped_levels.push(u);
            }
        }
    }
    let fit_levels: Vec<f64> = fit_idx.iter().map(|&i| levels[i]).collect();
    let xs: Vec<f64> = fit_levels.iter().map(|u| (u - empirical_mean).powi(2)).collect();
    let ys: Vec<f64> = fit_idx.iter().map(|&i| log_survival[i]).collect();

    let mut coefficient = None;
    let mut intercept = None;
    let mut r_squared = None;
    if xs.len() >= 3 {
        let m = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / m;
        let my = ys.iter().sum::<f64>() / m;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        if sxx > 0.0 && syy > 0.0 {
            let c = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx;
            let a = my - c * mx;
            let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - a - c * x).powi(2)).sum();
            coefficient = Some(c);
            intercept = Some(a);
            r_squared = Some(1.0 - ss_res / syy);
        }
    }
    let degenerate = coefficient.is_none();

    // Variance of ln p̂ is about (1 - p) / (n p).
    let log_var = |i: usize| (1.0 - survival[i]) / (n * survival[i]);
    let decreasing = fit_idx.windows(2).all(|w| log_survival[w[1]] <= log_survival[w[0]]);
    let concave = fit_idx.windows(3).all(|w| {
        let (a, b, c) = (levels[w[0]], levels[w[1]], levels[w[2]]);
        let (fa, fb, fc) = (log_survival[w[0]], log_survival[w[1]], log_survival[w[2]]);
        // Sign of the second divided difference, tolerant to sampling noise.
        let second = (fc - fb) / (c - b) - (fb - fa) / (b - a);
        let tol = 3.0 * (log_var(w[0]) + 4.0 * log_var(w[1]) + log_var(w[2])).sqrt() / (c - a).min(b - a).min(c - b);
        second <= tol
    });

    Ok(TailReport {
        levels: levels.to_vec(),
        exceedances,
        survival,
        log_survival,
        empirical_mean,
        fit_levels,
        dropped_levels,
        coefficient,
        intercept,
        r_squared,
        concave_decreasing: !degenerate && decreasing && concave,
        degenerate,
        seeds,
        master_seed,
    })
}
