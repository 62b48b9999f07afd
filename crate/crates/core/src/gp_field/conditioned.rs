use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kernel::{kernel_cross_derivative, KernelSpec, MeanSpec};
use super::standard_normal;
use crate::error::{check_dim, Error, Result};

/// Minimum separation between a new query point and a cached one, unless the
/// two are bitwise identical (in which case the cached value is reused).
pub const COINCIDENCE_TOL: f64 = 1e-12;

/// Relative diagonal jitter applied once when the conditional covariance
/// fails to factorize.
pub const JITTER: f64 = 1e-10;

#[derive(Debug, Clone)]
struct Observation {
    point: DVector<f64>,
    index: Vec<usize>,
    value: f64,
}

#[derive(Debug)]
struct State {
    rng: ChaCha8Rng,
    observations: Vec<Observation>,
    /// Lower-triangular Cholesky factor of the joint prior covariance of all
    /// observations, stored row by row (row `i` has `i + 1` entries).
    chol: Vec<Vec<f64>>,
    /// Standard-normal innovations, one per observation.
    innovations: Vec<f64>,
}

/// Exact sampler that draws each requested functional (value, gradient
/// component, Hessian entry) from its Gaussian law conditioned on everything
/// returned before.
///
/// The sampler is stateful, so a realization is tied to one thread
/// (`RefCell` keeps it `!Sync`).
#[derive(Debug)]
pub struct ConditionedField {
    dim: usize,
    kernel: KernelSpec,
    mean: MeanSpec,
    seed: u64,
    state: RefCell<State>,
}

impl ConditionedField {
    pub fn new(dim: usize, kernel: KernelSpec, mean: MeanSpec, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("field.dim", ">= 1"));
        }
        check_dim(dim, mean.dim())?;
        Ok(Self {
            dim,
            kernel,
            mean,
            seed,
            state: RefCell::new(State {
                rng: ChaCha8Rng::seed_from_u64(seed),
                observations: Vec::new(),
                chol: Vec::new(),
                innovations: Vec::new(),
            }),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
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

    /// Number of functionals drawn so far.
    pub fn cached(&self) -> usize {
        self.state.borrow().observations.len()
    }

    fn unit(&self, i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim];
        idx[i] += 1;
        idx
    }

    pub fn value(&self, y: &DVector<f64>) -> Result<f64> {
        check_dim(self.dim, y.len())?;
        Ok(self.query(y, &[vec![0; self.dim]])?[0])
    }

    /// Draws `∇V(y)` given all earlier draws.
    pub fn grad(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim, y.len())?;
        let indices: Vec<_> = (0..self.dim).map(|i| self.unit(i)).collect();
        Ok(DVector::from_vec(self.query(y, &indices)?))
    }

    pub fn hessian(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim, y.len())?;
        let d = self.dim;
        let mut pairs = Vec::new();
        let mut indices = Vec::new();
        for i in 0..d {
            for j in 0..=i {
                let mut idx = self.unit(i);
                idx[j] += 1;
                indices.push(idx);
                pairs.push((i, j));
            }
        }
        let values = self.query(y, &indices)?;
        let mut h = DMatrix::zeros(d, d);
        for ((i, j), v) in pairs.into_iter().zip(values) {
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
        Ok(h)
    }

    fn query(&self, y: &DVector<f64>, indices: &[Vec<usize>]) -> Result<Vec<f64>> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("query point must be finite"));
        }
        if self.kernel.variance() == 0.0 {
            return Ok(indices.iter().map(|idx| self.mean.partial(idx, y)).collect());
        }
        let mut state = self.state.borrow_mut();
        let mut out = vec![f64::NAN; indices.len()];
        let mut fresh = Vec::new();
        for (slot, idx) in indices.iter().enumerate() {
            let mut hit = None;
            for obs in &state.observations {
                if obs.point == *y {
                    if obs.index == *idx {
                        hit = Some(obs.value);
                        break;
                    }
                } else if (&obs.point - y).norm() < COINCIDENCE_TOL {
                    return Err(Error::usage(format!(
                        "query point within {COINCIDENCE_TOL:e} of a cached point"
                    )));
                }
            }
            match hit {
                Some(v) => out[slot] = v,
                None => fresh.push(slot),
            }
        }
        if fresh.is_empty() {
            return Ok(out);
        }

        let n = state.observations.len();
        let k = fresh.len();
        // Cross-covariance rows solved against the existing factor: L21 = C L11⁻ᵀ.
        let mut l21 = vec![vec![0.0; n]; k];
        for (row, &slot) in l21.iter_mut().zip(&fresh) {
            for (i, obs) in state.observations.iter().enumerate() {
                let c = kernel_cross_derivative(&self.kernel, &indices[slot], &obs.index, y, &obs.point)?;
                let dot: f64 = (0..i).map(|j| state.chol[i][j] * row[j]).sum();
                row[i] = (c - dot) / state.chol[i][i];
            }
        }
        let mut schur = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in 0..=a {
                let prior = kernel_cross_derivative(&self.kernel, &indices[fresh[a]], &indices[fresh[b]], y, y)?;
                let dot: f64 = l21[a].iter().zip(&l21[b]).map(|(p, q)| p * q).sum();
                schur[(a, b)] = prior - dot;
                schur[(b, a)] = prior - dot;
            }
        }
        let l22 = match schur.clone().cholesky() {
            Some(c) => c.unpack(),
            None => {
                let jitter = JITTER * self.kernel.variance();
                let jittered = schur + DMatrix::identity(k, k) * jitter;
                jittered.cholesky().map(|c| c.unpack()).ok_or_else(|| {
                    Error::Conditioning(format!(
                        "conditional covariance not positive definite after {jitter:e} diagonal jitter; \
                         increase the separation between query points or the jitter"
                    ))
                })?
            }
        };

        let z_new: Vec<f64> = (0..k).map(|_| standard_normal(&mut state.rng)).collect();
        for a in 0..k {
            let slot = fresh[a];
            let mut v = self.mean.partial(&indices[slot], y);
            v += l21[a].iter().zip(&state.innovations).map(|(l, z)| l * z).sum::<f64>();
            v += (0..=a).map(|b| l22[(a, b)] * z_new[b]).sum::<f64>();
            out[slot] = v;
        }
        for a in 0..k {
            let mut row = l21[a].clone();
            row.extend((0..=a).map(|b| l22[(a, b)]));
            state.chol.push(row);
            state.innovations.push(z_new[a]);
            state.observations.push(Observation {
                point: y.clone(),
                index: indices[fresh[a]].clone(),
                value: out[fresh[a]],
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn zero_variance_returns_mean_gradient() {
        let f = ConditionedField::new(2, KernelSpec::new(0.0, 1.0).unwrap(), MeanSpec::confining(2), 1).unwrap();
        let y = v(&[0.4, -1.2]);
        assert_eq!(f.grad(&y).unwrap(), y);
        assert_eq!(f.cached(), 0);
    }

    #[test]
    fn repeated_query_reuses_cache() {
        let f = ConditionedField::new(2, KernelSpec::default(), MeanSpec::zero(2), 5).unwrap();
        let y = v(&[0.1, 0.2]);
        let g1 = f.grad(&y).unwrap();
        let g2 = f.grad(&y).unwrap();
        assert_eq!(g1, g2);
        assert_eq!(f.cached(), 2);
        // Different functionals at the same point are fine.
        f.hessian(&y).unwrap();
        f.value(&y).unwrap();
        assert_eq!(f.cached(), 6);
    }

    #[test]
    fn near_coincident_query_is_rejected() {
        let f = ConditionedField::new(1, KernelSpec::default(), MeanSpec::zero(1), 5).unwrap();
        f.grad(&v(&[0.5])).unwrap();
        let err = f.grad(&v(&[0.5 + 1e-14])).unwrap_err();
        assert!(matches!(err, Error::Usage(_)), "{err}");
    }

    #[test]
    fn deterministic_given_seed_and_query_sequence() {
        let run = || {
            let f = ConditionedField::new(2, KernelSpec::default(), MeanSpec::zero(2), 9).unwrap();
            let a = f.grad(&v(&[0.0, 0.0])).unwrap();
            let b = f.grad(&v(&[0.3, 0.1])).unwrap();
            let h = f.hessian(&v(&[0.3, 0.1])).unwrap();
            (a, b, h)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn third_derivatives_are_unsupported_through_the_realization() {
        use crate::gp_field::{Potential, PotentialRealization};
        let r = PotentialRealization::Conditioned(
            ConditionedField::new(1, KernelSpec::default(), MeanSpec::zero(1), 0).unwrap(),
        );
        let y = v(&[0.0]);
        assert!(matches!(r.third(&y, &y, &y), Err(Error::Unsupported(_))));
    }
}
