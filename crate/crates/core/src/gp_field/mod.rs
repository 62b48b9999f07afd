//! Gaussian-process potentials: kernel and mean specifications, and fixed
//! sample paths that can be evaluated together with their derivatives.
//!
//! Two samplers are available. [`FourierField`] draws a random-Fourier-feature
//! path once and evaluates it analytically everywhere; it is immutable and
//! cheap to share. [`ConditionedField`] draws the exact Gaussian law one query
//! at a time, conditioned on everything it has returned so far. It serves
//! values, gradients and Hessians only, and is used to validate covariances.

mod conditioned;
mod fourier;
mod kernel;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub use conditioned::{ConditionedField, COINCIDENCE_TOL, JITTER};
pub use fourier::{FourierExport, FourierField, Jet};
pub use kernel::{kernel_cross_derivative, KernelSpec, MeanSpec, MAX_KERNEL_ORDER};

use crate::error::{Error, Result};

pub(crate) fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// A scalar potential with derivatives up to third order.
pub trait Potential {
    fn dim(&self) -> usize;
    fn value(&self, y: &DVector<f64>) -> Result<f64>;
    fn grad(&self, y: &DVector<f64>) -> Result<DVector<f64>>;
    fn hessian(&self, y: &DVector<f64>) -> Result<DMatrix<f64>>;
    /// `D³V(y)[v₁, v₂]`.
    fn third(&self, y: &DVector<f64>, v1: &DVector<f64>, v2: &DVector<f64>) -> Result<DVector<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    FourierFeature,
    Conditioned,
}

impl SamplerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::FourierFeature => "fourier-feature",
            SamplerKind::Conditioned => "conditioned",
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fourier-feature" => Ok(SamplerKind::FourierFeature),
            "conditioned" => Ok(SamplerKind::Conditioned),
            _ => Err(Error::config("field.sampler", "one of \"fourier-feature\", \"conditioned\"")),
        }
    }
}

pub const DEFAULT_FEATURES: usize = 512;
pub const DEFAULT_DIM: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldConfig {
    pub dim: usize,
    pub kernel: KernelSpec,
    pub mean: MeanSpec,
    pub sampler: SamplerKind,
    /// Number of random features; only used by the Fourier-feature sampler.
    pub features: usize,
    pub seed: u64,
}

impl FieldConfig {
    /// Default field: `d = 2`, unit squared-exponential kernel, confining
    /// quadratic mean, 512 Fourier features.
    pub fn new(seed: u64) -> Self {
        Self {
            dim: DEFAULT_DIM,
            kernel: KernelSpec::default(),
            mean: MeanSpec::confining(DEFAULT_DIM),
            sampler: SamplerKind::FourierFeature,
            features: DEFAULT_FEATURES,
            seed,
        }
    }

    /// A field with zero variance, i.e. the deterministic potential `m`.
    pub fn deterministic(mean: MeanSpec) -> Self {
        Self {
            dim: mean.dim(),
            kernel: KernelSpec::new(0.0, 1.0).expect("valid kernel"),
            mean,
            sampler: SamplerKind::FourierFeature,
            features: 1,
            seed: 0,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("field.dim", ">= 1"));
        }
        if self.mean.dim() != self.dim {
            return Err(Error::config("mean", format!("of dimension field.dim = {}", self.dim)));
        }
        if self.sampler == SamplerKind::FourierFeature && self.features == 0 {
            return Err(Error::config("field.features", ">= 1"));
        }
        // Re-validates the kernel when it was built field by field.
        KernelSpec::new(self.kernel.variance(), self.kernel.lengthscale())?;
        Ok(())
    }
}

/// One fixed sample path of the potential.
#[derive(Debug)]
pub enum PotentialRealization {
    Fourier(FourierField),
    Conditioned(ConditionedField),
}

pub fn sample_realization(config: &FieldConfig) -> Result<PotentialRealization> {
    config.validate()?;
    Ok(match config.sampler {
        SamplerKind::FourierFeature => PotentialRealization::Fourier(FourierField::sample(
            config.dim,
            config.kernel,
            config.mean.clone(),
            config.features,
            config.seed,
        )?),
        SamplerKind::Conditioned => PotentialRealization::Conditioned(ConditionedField::new(
            config.dim,
            config.kernel,
            config.mean.clone(),
            config.seed,
        )?),
    })
}

impl PotentialRealization {
    pub fn as_fourier(&self) -> Option<&FourierField> {
        match self {
            PotentialRealization::Fourier(f) => Some(f),
            PotentialRealization::Conditioned(_) => None,
        }
    }

    /// Value and all derivatives at `y`. Fourier fields only.
    pub fn jet(&self, y: &DVector<f64>) -> Result<Jet> {
        match self {
            PotentialRealization::Fourier(f) => f.jet(y),
            PotentialRealization::Conditioned(_) => Err(Error::Unsupported(
                "third derivatives from the conditioned sampler".into(),
            )),
        }
    }
}

impl Potential for PotentialRealization {
    fn dim(&self) -> usize {
        match self {
            PotentialRealization::Fourier(f) => f.dim(),
            PotentialRealization::Conditioned(c) => c.dim(),
        }
    }

    fn value(&self, y: &DVector<f64>) -> Result<f64> {
        match self {
            PotentialRealization::Fourier(f) => f.value(y),
            PotentialRealization::Conditioned(c) => c.value(y),
        }
    }

    fn grad(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            PotentialRealization::Fourier(f) => f.grad(y),
            PotentialRealization::Conditioned(c) => c.grad(y),
        }
    }

    fn hessian(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        match self {
            PotentialRealization::Fourier(f) => f.hessian(y),
            PotentialRealization::Conditioned(c) => c.hessian(y),
        }
    }

    fn third(&self, y: &DVector<f64>, v1: &DVector<f64>, v2: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            PotentialRealization::Fourier(f) => f.third(y, v1, v2),
            PotentialRealization::Conditioned(_) => Err(Error::Unsupported(
                "third derivatives from the conditioned sampler".into(),
            )),
        }
    }
}

impl Potential for FourierField {
    fn dim(&self) -> usize {
        FourierField::dim(self)
    }
    fn value(&self, y: &DVector<f64>) -> Result<f64> {
        FourierField::value(self, y)
    }
    fn grad(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        FourierField::grad(self, y)
    }
    fn hessian(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        FourierField::hessian(self, y)
    }
    fn third(&self, y: &DVector<f64>, v1: &DVector<f64>, v2: &DVector<f64>) -> Result<DVector<f64>> {
        FourierField::third(self, y, v1, v2)
    }
}
