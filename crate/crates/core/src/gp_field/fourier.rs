use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{KernelSpec, MeanSpec};
use super::standard_normal;
use crate::error::{check_dim, Error, Result};

/// A random-Fourier-feature sample path
/// `V(y) = m(y) + Σ_f a_f cos(w_f·y) + b_f sin(w_f·y)`.
///
/// Frequencies are drawn `w_f ~ N(0, ℓ⁻² I)` and weights `a_f, b_f ~ N(0, σ²/F)`.
/// Given the frequencies the field is exactly Gaussian, with covariance
/// converging to the squared-exponential kernel as `F` grows.
#[derive(Debug, Clone)]
pub struct FourierField {
    dim: usize,
    kernel: KernelSpec,
    mean: MeanSpec,
    seed: u64,
    /// Row-major `F x d`.
    frequencies: Vec<f64>,
    cos_weights: Vec<f64>,
    sin_weights: Vec<f64>,
}

/// All derivatives of the field at one point.
#[derive(Debug, Clone)]
pub struct Jet {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hessian: DMatrix<f64>,
    /// Row-major `d x d x d` third-derivative tensor.
    pub third: Vec<f64>,
}

impl FourierField {
    /// Draws the feature set. The RNG stream is consumed in a fixed order:
    /// all frequencies (feature-major), then all cosine weights, then all sine
    /// weights.
    pub fn sample(dim: usize, kernel: KernelSpec, mean: MeanSpec, features: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("field.dim", ">= 1"));
        }
        if features == 0 {
            return Err(Error::config("field.features", ">= 1"));
        }
        check_dim(dim, mean.dim())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inv_ell = 1.0 / kernel.lengthscale();
        let frequencies: Vec<f64> = (0..features * dim)
            .map(|_| inv_ell * standard_normal(&mut rng))
            .collect();
        let scale = (kernel.variance() / features as f64).sqrt();
        let weights = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..features)
                .map(|_| scale * standard_normal(rng))
                .collect()
        };
        let cos_weights = weights(&mut rng);
        let sin_weights = weights(&mut rng);
        Ok(Self {
            dim,
            kernel,
            mean,
            seed,
            frequencies,
            cos_weights,
            sin_weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> usize {
        self.cos_weights.len()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn mean(&self) -> &MeanSpec {
        &self.mean
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frequency(&self, f: usize) -> &[f64] {
        &self.frequencies[f * self.dim..(f + 1) * self.dim]
    }

    pub fn cos_weights(&self) -> &[f64] {
        &self.cos_weights
    }

    pub fn sin_weights(&self) -> &[f64] {
        &self.sin_weights
    }

    fn phase(&self, f: usize, y: &DVector<f64>) -> f64 {
        self.frequency(f).iter().zip(y.iter()).map(|(w, y)| w * y).sum()
    }

    pub fn value(&self, y: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, y.len())?;
        let mut v = self.mean.value(y);
        for f in 0..self.features() {
            let (s, c) = self.phase(f, y).sin_cos();
            v += self.cos_weights[f] * c + self.sin_weights[f] * s;
        }
        Ok(v)
    }

    pub fn grad(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim, y.len())?;
        let mut g = self.mean.grad(y);
        for f in 0..self.features() {
            let (s, c) = self.phase(f, y).sin_cos();
            let coeff = self.sin_weights[f] * c - self.cos_weights[f] * s;
            for (gi, wi) in g.iter_mut().zip(self.frequency(f)) {
                *gi += coeff * wi;
            }
        }
        Ok(g)
    }

    pub fn hessian(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim, y.len())?;
        let d = self.dim;
        let mut h = self.mean.hessian().clone();
        for f in 0..self.features() {
            let (s, c) = self.phase(f, y).sin_cos();
            let coeff = -(self.cos_weights[f] * c + self.sin_weights[f] * s);
            let w = self.frequency(f);
            for i in 0..d {
                for j in 0..=i {
                    h[(i, j)] += coeff * w[i] * w[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                h[(j, i)] = h[(i, j)];
            }
        }
        Ok(h)
    }

    /// `D³V(y)[v₁, v₂]`, the vector with components `Σ_ij ∂³V/∂y_i∂y_j∂y_k v₁ᵢ v₂ⱼ`.
    pub fn third(&self, y: &DVector<f64>, v1: &DVector<f64>, v2: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim, y.len())?;
        check_dim(self.dim, v1.len())?;
        check_dim(self.dim, v2.len())?;
        let mut out = DVector::zeros(self.dim);
        for f in 0..self.features() {
            let (s, c) = self.phase(f, y).sin_cos();
            let coeff = self.cos_weights[f] * s - self.sin_weights[f] * c;
            let w = self.frequency(f);
            let p1: f64 = w.iter().zip(v1.iter()).map(|(a, b)| a * b).sum();
            let p2: f64 = w.iter().zip(v2.iter()).map(|(a, b)| a * b).sum();
            let scale = coeff * p1 * p2;
            for (o, wk) in out.iter_mut().zip(w) {
                *o += scale * wk;
            }
        }
        Ok(out)
    }

    /// Value and derivatives up to third order, sharing one `sin_cos` per feature.
    pub fn jet(&self, y: &DVector<f64>) -> Result<Jet> {
        check_dim(self.dim, y.len())?;
        let d = self.dim;
        let mut value = self.mean.value(y);
        let mut grad = self.mean.grad(y);
        let mut hessian = self.mean.hessian().clone();
        let mut third = vec![0.0; d * d * d];
        for f in 0..self.features() {
            let (s, c) = self.phase(f, y).sin_cos();
            let (a, b) = (self.cos_weights[f], self.sin_weights[f]);
            let w = self.frequency(f);
            value += a * c + b * s;
            let c1 = b * c - a * s;
            let c2 = -(a * c + b * s);
            let c3 = a * s - b * c;
            for i in 0..d {
                grad[i] += c1 * w[i];
                for j in 0..=i {
                    let wij = w[i] * w[j];
                    hessian[(i, j)] += c2 * wij;
                    for k in 0..=j {
                        third[(i * d + j) * d + k] += c3 * wij * w[k];
                    }
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                hessian[(j, i)] = hessian[(i, j)];
            }
        }
        // Fill the remaining permutations from the i >= j >= k entries.
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let mut idx = [i, j, k];
                    idx.sort_unstable_by(|a, b| b.cmp(a));
                    third[(i * d + j) * d + k] = third[(idx[0] * d + idx[1]) * d + idx[2]];
                }
            }
        }
        Ok(Jet {
            value,
            grad,
            hessian,
            third,
        })
    }

    pub fn export(&self) -> FourierExport {
        FourierExport {
            dim: self.dim,
            features: self.features(),
            variance: self.kernel.variance(),
            lengthscale: self.kernel.lengthscale(),
            seed: self.seed,
            mean_constant: self.mean.constant(),
            mean_linear: self.mean.linear().iter().copied().collect(),
            mean_quadratic: row_major(self.mean.quadratic()),
            frequencies: (0..self.features()).map(|f| self.frequency(f).to_vec()).collect(),
            cos_weights: self.cos_weights.clone(),
            sin_weights: self.sin_weights.clone(),
        }
    }

    /// Rebuilds a field from an export, e.g. one produced by another implementation.
    pub fn from_export(e: &FourierExport) -> Result<Self> {
        let kernel = KernelSpec::new(e.variance, e.lengthscale)?;
        let d = e.dim;
        if e.mean_quadratic.len() != d || e.mean_quadratic.iter().any(|r| r.len() != d) {
            return Err(Error::config("mean_quadratic", format!("{d}x{d}")));
        }
        let mean = MeanSpec::new(
            e.mean_constant,
            DVector::from_column_slice(&e.mean_linear),
            DMatrix::from_fn(d, d, |i, j| e.mean_quadratic[i][j]),
        )?;
        check_dim(d, mean.dim())?;
        let features = e.cos_weights.len();
        if e.features != features || e.sin_weights.len() != features || e.frequencies.len() != features {
            return Err(Error::config("features", "consistent with the weight and frequency arrays"));
        }
        if e.frequencies.iter().any(|w| w.len() != d) {
            return Err(Error::config("frequencies", format!("rows of length {d}")));
        }
        Ok(Self {
            dim: d,
            kernel,
            mean,
            seed: e.seed,
            frequencies: e.frequencies.concat(),
            cos_weights: e.cos_weights.clone(),
            sin_weights: e.sin_weights.clone(),
        })
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// JSON form of a Fourier-feature realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierExport {
    pub dim: usize,
    pub features: usize,
    pub variance: f64,
    pub lengthscale: f64,
    pub seed: u64,
    pub mean_constant: f64,
    pub mean_linear: Vec<f64>,
    pub mean_quadratic: Vec<Vec<f64>>,
    pub frequencies: Vec<Vec<f64>>,
    pub cos_weights: Vec<f64>,
    pub sin_weights: Vec<f64>,
}
