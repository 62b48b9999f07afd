use serde::Serialize;

use crate::error::{Error, Result};

/// Minimum number of distinct step sizes for an order fit.
pub const MIN_FIT_POINTS: usize = 4;

/// RMS errors below this are treated as numerical dust and left out of fits.
pub const NOISE_FLOOR: f64 = 1e-12;

/// Least-squares line through `(log δt, log RMS)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Step sizes used in the fit, in input order.
    pub dts: Vec<f64>,
    /// Included samples per fitted step size. Empty when fitted from bare pairs.
    pub sample_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum FitOutcome {
    Fitted(OrderFit),
    Degenerate { reason: String },
}

impl FitOutcome {
    pub fn fit(&self) -> Option<&OrderFit> {
        match self {
            FitOutcome::Fitted(f) => Some(f),
            FitOutcome::Degenerate { .. } => None,
        }
    }

    pub fn slope(&self) -> Option<f64> {
        self.fit().map(|f| f.slope)
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, FitOutcome::Degenerate { .. })
    }
}

/// Fits `log rms = intercept + slope · log δt`.
///
/// Fewer than four points, or repeated step sizes, are usage errors. Any zero
/// RMS yields a degenerate outcome instead of a fit.
pub fn fit_order(points: &[(f64, f64)]) -> Result<FitOutcome> {
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::usage(format!(
            "order fit needs at least {MIN_FIT_POINTS} step sizes, got {}",
            points.len()
        )));
    }
    for (i, &(dt, rms)) in points.iter().enumerate() {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::usage(format!("step size must be finite and > 0, got {dt}")));
        }
        if !(rms >= 0.0 && rms.is_finite()) {
            return Err(Error::usage(format!("RMS error must be finite and >= 0, got {rms}")));
        }
        if points[..i].iter().any(|&(other, _)| other == dt) {
            return Err(Error::usage(format!("step size {dt} appears twice")));
        }
    }
    if points.iter().any(|&(_, rms)| rms == 0.0) {
        return Ok(FitOutcome::Degenerate {
            reason: "degenerate zero errors".into(),
        });
    }

    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let dts: Vec<f64> = points.iter().map(|p| p.0).collect();
    Ok(FitOutcome::Fitted(OrderFit {
        slope,
        intercept,
        r_squared,
        dt_min: dts.iter().copied().fold(f64::INFINITY, f64::min),
        dt_max: dts.iter().copied().fold(0.0, f64::max),
        dts,
        sample_counts: Vec::new(),
    }))
}

/// Fit used by studies: rows below [`NOISE_FLOOR`] are dropped first, and too
/// few surviving rows give a degenerate outcome rather than an error.
pub(crate) fn fit_rows(rows: &[(f64, f64, usize)]) -> FitOutcome {
    if rows.iter().all(|r| r.1 == 0.0) {
        return FitOutcome::Degenerate {
            reason: "degenerate zero errors".into(),
        };
    }
    let kept: Vec<_> = rows.iter().filter(|r| r.2 > 0 && r.1 >= NOISE_FLOOR).collect();
    if kept.len() < MIN_FIT_POINTS {
        return FitOutcome::Degenerate {
            reason: format!(
                "only {} step sizes with RMS error above {NOISE_FLOOR:e}",
                kept.len()
            ),
        };
    }
    let pairs: Vec<_> = kept.iter().map(|r| (r.0, r.1)).collect();
    match fit_order(&pairs) {
        Ok(FitOutcome::Fitted(mut f)) => {
            f.sample_counts = kept.iter().map(|r| r.2).collect();
            FitOutcome::Fitted(f)
        }
        Ok(other) => other,
        Err(e) => FitOutcome::Degenerate { reason: e.to_string() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fitted(points: &[(f64, f64)]) -> OrderFit {
        fit_order(points).unwrap().fit().cloned().unwrap()
    }

    #[test]
    fn exact_geometric_data() {
        let f = fitted(&[(0.1, 0.01), (0.05, 0.005), (0.025, 0.0025), (0.0125, 0.00125)]);
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!((f.intercept - 0.1f64.ln()).abs() < 1e-12);
        assert_eq!((f.dt_min, f.dt_max), (0.0125, 0.1));

        let f = fitted(&[(0.1, 0.01), (0.05, 0.0025), (0.025, 0.000625), (0.0125, 0.00015625)]);
        assert!((f.slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn three_points_is_a_usage_error() {
        let err = fit_order(&[(0.1, 1.0), (0.05, 0.5), (0.025, 0.25)]).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
        assert!(fit_order(&[(0.1, 1.0), (0.1, 0.5), (0.05, 0.25), (0.02, 0.1)]).is_err());
    }

    #[test]
    fn zero_error_is_degenerate() {
        let out = fit_order(&[(0.1, 0.0), (0.05, 0.0), (0.025, 0.0), (0.0125, 0.0)]).unwrap();
        assert_eq!(out, FitOutcome::Degenerate { reason: "degenerate zero errors".into() });
        let out = fit_order(&[(0.1, 1.0), (0.05, 0.0), (0.025, 0.5), (0.0125, 0.1)]).unwrap();
        assert!(out.is_degenerate());
    }

    #[test]
    fn noisy_fit_matches_normal_equations() {
        // Independent oracle: solve the 2x2 normal equations with nalgebra.
        let pts: [(f64, f64); 5] = [(0.2, 0.05), (0.1, 0.011), (0.05, 0.0031), (0.025, 0.0007), (0.0125, 0.0002)];
        let a = nalgebra::DMatrix::from_fn(5, 2, |i, j| if j == 0 { 1.0 } else { pts[i].0.ln() });
        let b = nalgebra::DVector::from_fn(5, |i, _| pts[i].1.ln());
        let coef = (a.transpose() * &a).lu().solve(&(a.transpose() * b)).unwrap();
        let f = fitted(&pts);
        assert!((f.intercept - coef[0]).abs() < 1e-10);
        assert!((f.slope - coef[1]).abs() < 1e-10);
        assert!(f.r_squared < 1.0 && f.r_squared > 0.99);
    }

    #[test]
    fn rows_below_floor_are_dropped() {
        let rows = [(0.1, 1e-2, 4), (0.05, 2.5e-3, 4), (0.025, 6.25e-4, 4), (0.0125, 1.5625e-4, 4), (0.00625, 1e-13, 4)];
        let f = fit_rows(&rows).fit().cloned().unwrap();
        assert_eq!(f.dts.len(), 4);
        assert_eq!(f.sample_counts, vec![4; 4]);
        assert!((f.slope - 2.0).abs() < 1e-12);
        let rows = [(0.1, 1e-2, 4), (0.05, 1e-13, 4), (0.025, 1e-14, 4), (0.0125, 1e-15, 4)];
        assert!(fit_rows(&rows).is_degenerate());
    }

    proptest! {
        #[test]
        fn scaling_errors_shifts_only_the_intercept(
            logs in proptest::collection::vec(-8.0f64..0.0, 4..8),
            scale in 1e-3f64..1e3,
        ) {
            let pts: Vec<_> = logs.iter().enumerate().map(|(i, l)| (0.5f64.powi(i as i32), l.exp())).collect();
            let scaled: Vec<_> = pts.iter().map(|&(d, r)| (d, r * scale)).collect();
            let a = fitted(&pts);
            let b = fitted(&scaled);
            prop_assert!((a.slope - b.slope).abs() < 1e-9);
            prop_assert!((b.intercept - a.intercept - scale.ln()).abs() < 1e-9);
        }
    }
}
