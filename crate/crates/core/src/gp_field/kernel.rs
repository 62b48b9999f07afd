use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Highest derivative order allowed on either argument of the kernel.
pub const MAX_KERNEL_ORDER: usize = 3;

/// Squared-exponential covariance `k(y, y') = σ² exp(-|y - y'|² / (2ℓ²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    variance: f64,
    lengthscale: f64,
}

impl KernelSpec {
    pub fn new(variance: f64, lengthscale: f64) -> Result<Self> {
        if !(variance.is_finite() && variance >= 0.0) {
            return Err(Error::config("kernel.variance", ">= 0"));
        }
        if !(lengthscale.is_finite() && lengthscale > 0.0) {
            return Err(Error::config("kernel.lengthscale", "> 0"));
        }
        Ok(Self {
            variance,
            lengthscale,
        })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn eval(&self, y: &DVector<f64>, y2: &DVector<f64>) -> f64 {
        let r2 = (y - y2).norm_squared();
        self.variance * (-0.5 * r2 / (self.lengthscale * self.lengthscale)).exp()
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            variance: 1.0,
            lengthscale: 1.0,
        }
    }
}

/// Probabilists' Hermite polynomial He_n(x).
fn hermite(n: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = x * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Mixed partial derivative `∂^a_y ∂^b_{y'} k(y, y')` of the squared-exponential
/// kernel, with `order_a` and `order_b` given as multi-indices (one count per
/// coordinate).
///
/// The kernel factorizes over coordinates as a function of `r = y - y'`, and
/// `dⁿ/drⁿ exp(-r²/2ℓ²) = (-1/ℓ)ⁿ Heₙ(r/ℓ) exp(-r²/2ℓ²)`, so the result is a
/// product of one-dimensional Hermite factors. Each derivative in `y'`
/// contributes an extra sign.
pub fn kernel_cross_derivative(
    kernel: &KernelSpec,
    order_a: &[usize],
    order_b: &[usize],
    y: &DVector<f64>,
    y2: &DVector<f64>,
) -> Result<f64> {
    let d = y.len();
    check_dim(d, y2.len())?;
    check_dim(d, order_a.len())?;
    check_dim(d, order_b.len())?;
    let total_a: usize = order_a.iter().sum();
    let total_b: usize = order_b.iter().sum();
    if total_a > MAX_KERNEL_ORDER || total_b > MAX_KERNEL_ORDER {
        return Err(Error::Unsupported(format!(
            "kernel derivative of order ({total_a}, {total_b}); at most {MAX_KERNEL_ORDER} per argument"
        )));
    }
    let ell = kernel.lengthscale;
    let mut value = kernel.variance;
    for i in 0..d {
        let n = order_a[i] + order_b[i];
        let u = (y[i] - y2[i]) / ell;
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        value *= sign * ell.powi(-(n as i32)) * hermite(n, u) * (-0.5 * u * u).exp();
    }
    if total_b % 2 == 1 {
        value = -value;
    }
    Ok(value)
}

/// Polynomial mean `m(y) = c₀ + c₁·y + ½ yᵀ C₂ y` with symmetric `C₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanSpec {
    constant: f64,
    linear: DVector<f64>,
    quadratic: DMatrix<f64>,
}

impl MeanSpec {
    pub fn new(constant: f64, linear: DVector<f64>, quadratic: DMatrix<f64>) -> Result<Self> {
        let d = linear.len();
        if quadratic.nrows() != d || quadratic.ncols() != d {
            return Err(Error::config(
                "mean.quadratic",
                format!("a {d}x{d} matrix matching mean.linear"),
            ));
        }
        if !constant.is_finite()
            || linear.iter().any(|v| !v.is_finite())
            || quadratic.iter().any(|v| !v.is_finite())
        {
            return Err(Error::config("mean", "finite"));
        }
        if quadratic != quadratic.transpose() {
            return Err(Error::config("mean.quadratic", "symmetric"));
        }
        Ok(Self {
            constant,
            linear,
            quadratic,
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            constant: 0.0,
            linear: DVector::zeros(dim),
            quadratic: DMatrix::zeros(dim, dim),
        }
    }

    /// `m(y) = ½|y|²`, which keeps trajectories confined.
    pub fn confining(dim: usize) -> Self {
        Self {
            constant: 0.0,
            linear: DVector::zeros(dim),
            quadratic: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    pub fn quadratic(&self) -> &DMatrix<f64> {
        &self.quadratic
    }

    pub fn value(&self, y: &DVector<f64>) -> f64 {
        self.constant + self.linear.dot(y) + 0.5 * y.dot(&(&self.quadratic * y))
    }

    pub fn grad(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.linear + &self.quadratic * y
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.quadratic
    }

    /// Partial derivative for a multi-index of total order ≤ 3.
    pub(crate) fn partial(&self, index: &[usize], y: &DVector<f64>) -> f64 {
        let order: usize = index.iter().sum();
        match order {
            0 => self.value(y),
            1 => {
                let i = index.iter().position(|&n| n == 1).unwrap();
                self.grad(y)[i]
            }
            2 => {
                let mut ij = index
                    .iter()
                    .enumerate()
                    .flat_map(|(i, &n)| std::iter::repeat_n(i, n));
                let i = ij.next().unwrap();
                let j = ij.next().unwrap();
                self.quadratic[(i, j)]
            }
            _ => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn hermite_low_orders() {
        assert_eq!(hermite(0, 0.7), 1.0);
        assert_eq!(hermite(1, 0.7), 0.7);
        assert_relative_eq!(hermite(2, 0.7), 0.49 - 1.0, epsilon = 1e-15);
        assert_relative_eq!(hermite(3, 0.7), 0.343 - 2.1, epsilon = 1e-15);
    }

    #[test]
    fn cross_derivative_known_values() {
        let k = KernelSpec::new(1.0, 1.0).unwrap();
        let y = v(&[0.3]);
        assert_relative_eq!(
            kernel_cross_derivative(&k, &[1], &[1], &y, &y).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_eq!(kernel_cross_derivative(&k, &[0], &[0], &y, &y).unwrap(), 1.0);
        assert_eq!(kernel_cross_derivative(&k, &[1], &[0], &y, &y).unwrap(), 0.0);

        let k = KernelSpec::new(2.5, 0.7).unwrap();
        let y = v(&[0.1, -0.4]);
        assert_eq!(
            kernel_cross_derivative(&k, &[0, 0], &[0, 0], &y, &y).unwrap(),
            2.5
        );
        assert_relative_eq!(
            kernel_cross_derivative(&k, &[0, 1], &[0, 1], &y, &y).unwrap(),
            2.5 / 0.49,
            epsilon = 1e-12
        );
    }

    /// Nested central differences of `k` as an independent oracle.
    fn fd_cross(k: &KernelSpec, a: &[usize], b: &[usize], y: &DVector<f64>, y2: &DVector<f64>) -> f64 {
        let h = 1e-3;
        // Pick the first remaining derivative and difference it.
        if let Some(i) = a.iter().position(|&n| n > 0) {
            let mut a2 = a.to_vec();
            a2[i] -= 1;
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[i] += h;
            ym[i] -= h;
            return (fd_cross(k, &a2, b, &yp, y2) - fd_cross(k, &a2, b, &ym, y2)) / (2.0 * h);
        }
        if let Some(i) = b.iter().position(|&n| n > 0) {
            let mut b2 = b.to_vec();
            b2[i] -= 1;
            let mut yp = y2.clone();
            let mut ym = y2.clone();
            yp[i] += h;
            ym[i] -= h;
            return (fd_cross(k, a, &b2, y, &yp) - fd_cross(k, a, &b2, y, &ym)) / (2.0 * h);
        }
        k.eval(y, y2)
    }

    #[test]
    fn cross_derivative_matches_finite_differences() {
        let k = KernelSpec::new(1.3, 0.8).unwrap();
        let y = v(&[0.2, -0.1]);
        let y2 = v(&[-0.3, 0.45]);
        let cases: &[(&[usize], &[usize])] = &[
            (&[1, 0], &[0, 0]),
            (&[0, 0], &[0, 1]),
            (&[1, 0], &[0, 1]),
            (&[1, 1], &[0, 0]),
            (&[2, 0], &[1, 0]),
            (&[0, 1], &[1, 1]),
        ];
        for (a, b) in cases {
            let exact = kernel_cross_derivative(&k, a, b, &y, &y2).unwrap();
            let fd = fd_cross(&k, a, b, &y, &y2);
            assert!(
                (exact - fd).abs() < 1e-5 * (1.0 + exact.abs()),
                "{a:?} {b:?}: {exact} vs {fd}"
            );
        }
    }

    #[test]
    fn cross_derivative_rejects_high_order() {
        let k = KernelSpec::default();
        let y = v(&[0.0]);
        assert!(matches!(
            kernel_cross_derivative(&k, &[4], &[0], &y, &y),
            Err(Error::Unsupported(_))
        ));
        assert!(kernel_cross_derivative(&k, &[3], &[3], &y, &y).is_ok());
    }

    #[test]
    fn kernel_rejects_bad_hyperparameters() {
        let err = KernelSpec::new(1.0, 0.0).unwrap_err().to_string();
        assert!(err.contains("kernel.lengthscale") && err.contains("> 0"), "{err}");
        assert!(KernelSpec::new(-1.0, 1.0).is_err());
    }

    #[test]
    fn mean_partials() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let m = MeanSpec::new(0.5, v(&[1.0, -1.0]), q).unwrap();
        let y = v(&[1.0, 2.0]);
        // 0.5 + (1 - 2) + 0.5 * (2 + 4 + 12)
        assert_relative_eq!(m.value(&y), 8.5);
        assert_eq!(m.grad(&y), v(&[5.0, 6.0]));
        assert_eq!(m.partial(&[1, 1], &y), 1.0);
        assert_eq!(m.partial(&[0, 2], &y), 3.0);
        assert_eq!(m.partial(&[2, 1], &y), 0.0);
        assert!(MeanSpec::new(0.0, v(&[0.0, 0.0]), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
    }
}
