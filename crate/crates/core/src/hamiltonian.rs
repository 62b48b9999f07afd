//! Phase space, mass matrix and the original Hamiltonian vector field
//! `dy/dt = M⁻¹x`, `dx/dt = -∇V(y)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{check_dim, Error, Result};
use crate::gp_field::{FieldConfig, Potential};

/// Relative threshold on the smallest Cholesky pivot, measured against `‖M‖`.
pub const SPD_PIVOT_TOL: f64 = 1e-12;

/// Default escape radius for studies.
pub const DEFAULT_ESCAPE_RADIUS: f64 = 1e3;

#[derive(Debug, Clone)]
enum MassKind {
    Identity,
    Diagonal(DVector<f64>),
    Dense(Cholesky<f64, Dyn>),
}

/// Symmetric positive definite mass matrix with a cached factorization.
#[derive(Debug, Clone)]
pub struct MassMatrix {
    kind: MassKind,
    matrix: DMatrix<f64>,
    inv_norm: f64,
}

impl MassMatrix {
    pub fn identity(dim: usize) -> Self {
        Self {
            kind: MassKind::Identity,
            matrix: DMatrix::identity(dim, dim),
            inv_norm: 1.0,
        }
    }

    pub fn diagonal(entries: &[f64]) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::config("system.mass", "non-empty"));
        }
        if entries.iter().any(|&m| !(m.is_finite() && m > 0.0)) {
            return Err(Error::config("system.mass", "a list of positive diagonal entries"));
        }
        let diag = DVector::from_column_slice(entries);
        let min = diag.min();
        Ok(Self {
            matrix: DMatrix::from_diagonal(&diag),
            kind: MassKind::Diagonal(diag),
            inv_norm: 1.0 / min,
        })
    }

    /// Dense SPD matrix. Positive definiteness is verified by a successful
    /// Cholesky factorization whose smallest pivot exceeds `1e-12 ‖M‖`.
    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        let not_spd = || Error::config("system.mass", "symmetric positive definite");
        if !matrix.is_square() || matrix.nrows() == 0 || matrix.iter().any(|v| !v.is_finite()) {
            return Err(not_spd());
        }
        if matrix != matrix.transpose() {
            return Err(not_spd());
        }
        let norm = matrix.norm();
        let chol = matrix.clone().cholesky().ok_or_else(not_spd)?;
        // LDLᵀ pivots are the squared diagonal of the Cholesky factor.
        let min_pivot = chol.l_dirty().diagonal().map(|l| l * l).min();
        if min_pivot <= SPD_PIVOT_TOL * norm {
            return Err(not_spd());
        }
        let eig = matrix.clone().symmetric_eigen();
        let inv_norm = 1.0 / eig.eigenvalues.min();
        Ok(Self {
            kind: MassKind::Dense(chol),
            matrix,
            inv_norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `C_M = ‖M⁻¹‖_op`.
    pub fn inv_norm(&self) -> f64 {
        self.inv_norm
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            MassKind::Identity => "identity",
            MassKind::Diagonal(_) => "diagonal",
            MassKind::Dense(_) => "dense",
        }
    }

    /// Solves `M u = v`.
    pub fn apply_minv(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), v.len())?;
        Ok(match &self.kind {
            MassKind::Identity => v.clone(),
            MassKind::Diagonal(d) => v.component_div(d),
            MassKind::Dense(chol) => chol.solve(v),
        })
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), v.len())?;
        Ok(match &self.kind {
            MassKind::Identity => v.clone(),
            MassKind::Diagonal(d) => v.component_mul(d),
            MassKind::Dense(_) => &self.matrix * v,
        })
    }
}

/// Position/momentum pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub y: DVector<f64>,
    pub x: DVector<f64>,
}

impl PhaseState {
    pub fn new(y: DVector<f64>, x: DVector<f64>) -> Result<Self> {
        check_dim(y.len(), x.len())?;
        let s = Self { y, x };
        if !s.is_finite() {
            return Err(Error::usage("phase state must be finite"));
        }
        Ok(s)
    }

    pub fn from_slices(y: &[f64], x: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(y), DVector::from_column_slice(x))
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    pub fn is_finite(&self) -> bool {
        self.y.iter().chain(self.x.iter()).all(|v| v.is_finite())
    }

    /// Euclidean norm of the concatenated `(y, x)`.
    pub fn norm(&self) -> f64 {
        (self.y.norm_squared() + self.x.norm_squared()).sqrt()
    }
}

/// `H(y, x) = ½ xᵀM⁻¹x + V(y)`.
pub fn energy<P: Potential + ?Sized>(pot: &P, mass: &MassMatrix, s: &PhaseState) -> Result<f64> {
    let kinetic = 0.5 * s.x.dot(&mass.apply_minv(&s.x)?);
    Ok(kinetic + pot.value(&s.y)?)
}

/// Right-hand side `(M⁻¹x, -∇V(y))` of the original system.
pub fn exact_rhs<P: Potential + ?Sized>(
    pot: &P,
    mass: &MassMatrix,
    s: &PhaseState,
) -> Result<(DVector<f64>, DVector<f64>)> {
    Ok((mass.apply_minv(&s.x)?, -pot.grad(&s.y)?))
}

pub fn default_initial_state(dim: usize) -> PhaseState {
    PhaseState {
        y: DVector::from_element(dim, 0.5),
        x: DVector::from_fn(dim, |i, _| if i % 2 == 0 { 0.5 } else { -0.5 }),
    }
}

#[derive(Debug, Clone)]
pub struct SystemConfig {
    pub field: FieldConfig,
    pub mass: MassMatrix,
    pub initial: PhaseState,
    pub horizon: f64,
    pub escape_radius: f64,
}

impl SystemConfig {
    /// Identity mass, `T = 1`, default escape radius, and the default initial
    /// state `y₀ = (½, …, ½)`, `x₀ = (½, -½, ½, …)`.
    pub fn new(field: FieldConfig) -> Self {
        let d = field.dim;
        Self {
            mass: MassMatrix::identity(d),
            initial: default_initial_state(d),
            horizon: 1.0,
            escape_radius: DEFAULT_ESCAPE_RADIUS,
            field,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        let d = self.field.dim;
        if self.mass.dim() != d {
            return Err(Error::config("system.mass", format!("of dimension field.dim = {d}")));
        }
        if self.initial.dim() != d {
            return Err(Error::config("system.y0", format!("of length field.dim = {d}")));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::config("system.horizon", "> 0"));
        }
        if !(self.escape_radius > self.initial.norm()) {
            return Err(Error::config(
                "system.escape_radius",
                "> the norm of the initial state (y0, x0)",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp_field::{sample_realization, MeanSpec};
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn apply_minv_examples() {
        assert_eq!(MassMatrix::identity(2).apply_minv(&v(&[3.0, 4.0])).unwrap(), v(&[3.0, 4.0]));
        assert_eq!(
            MassMatrix::diagonal(&[2.0, 4.0]).unwrap().apply_minv(&v(&[2.0, 4.0])).unwrap(),
            v(&[1.0, 1.0])
        );
        let m = MassMatrix::dense(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let u = m.apply_minv(&v(&[1.0, 1.0])).unwrap();
        assert!((u - v(&[1.0 / 3.0, 1.0 / 3.0])).norm() < 1e-15);
        assert!((m.inv_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_spd() {
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = MassMatrix::dense(indefinite).unwrap_err().to_string();
        assert!(err.contains("system.mass"), "{err}");
        assert!(MassMatrix::dense(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
        assert!(MassMatrix::dense(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-14])).is_err());
        assert!(MassMatrix::diagonal(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn energy_examples() {
        let quad = sample_realization(&FieldConfig::deterministic(MeanSpec::confining(2))).unwrap();
        let zero = sample_realization(&FieldConfig::deterministic(MeanSpec::zero(2))).unwrap();
        let s = PhaseState::from_slices(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(energy(&quad, &MassMatrix::identity(2), &s).unwrap(), 1.0);
        let s = PhaseState::from_slices(&[0.3, 0.2], &[0.0, 0.0]).unwrap();
        assert_eq!(energy(&zero, &MassMatrix::identity(2), &s).unwrap(), 0.0);
        let s = PhaseState::from_slices(&[0.0, 0.0], &[2.0, 0.0]).unwrap();
        let m = MassMatrix::diagonal(&[2.0, 2.0]).unwrap();
        assert_eq!(energy(&zero, &m, &s).unwrap(), 1.0);
    }

    #[test]
    fn exact_rhs_examples() {
        let zero = sample_realization(&FieldConfig::deterministic(MeanSpec::zero(2))).unwrap();
        let s = PhaseState::from_slices(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        let (dy, dx) = exact_rhs(&zero, &MassMatrix::identity(2), &s).unwrap();
        assert_eq!(dy, v(&[1.0, 2.0]));
        assert_eq!(dx, v(&[0.0, 0.0]));

        let quad = sample_realization(&FieldConfig::deterministic(MeanSpec::confining(2))).unwrap();
        let s = PhaseState::from_slices(&[1.0, 0.0], &[0.0, 0.0]).unwrap();
        let (_, dx) = exact_rhs(&quad, &MassMatrix::identity(2), &s).unwrap();
        assert_eq!(dx, v(&[-1.0, 0.0]));

        let r = sample_realization(&FieldConfig::new(3)).unwrap();
        let s = PhaseState::from_slices(&[0.4, -0.2], &[0.1, 0.7]).unwrap();
        let (_, dx) = exact_rhs(&r, &MassMatrix::identity(2), &s).unwrap();
        assert_eq!(dx, -r.grad(&s.y).unwrap());
    }

    #[test]
    fn system_config_checks_escape_radius() {
        let cfg = SystemConfig {
            field: FieldConfig::new(0),
            mass: MassMatrix::identity(2),
            initial: PhaseState::from_slices(&[3.0, 0.0], &[0.0, 4.0]).unwrap(),
            horizon: 1.0,
            escape_radius: 5.0,
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("system.escape_radius"), "{err}");
    }

    fn spd(dim: usize) -> impl Strategy<Value = MassMatrix> {
        prop_oneof![
            Just(MassMatrix::identity(dim)),
            prop::collection::vec(0.1f64..10.0, dim).prop_map(|d| MassMatrix::diagonal(&d).unwrap()),
            prop::collection::vec(-1.0f64..1.0, dim * dim).prop_map(move |a| {
                let a = DMatrix::from_row_slice(dim, dim, &a);
                let m = &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5;
                // Symmetrize exactly against rounding in the product.
                let m = (&m + m.transpose()) * 0.5;
                MassMatrix::dense(m).unwrap()
            }),
        ]
    }

    proptest! {
        #[test]
        fn minv_inverts_m(m in spd(3), xs in prop::collection::vec(-10.0f64..10.0, 3)) {
            let v = DVector::from_vec(xs);
            let back = m.apply_minv(&m.apply(&v).unwrap()).unwrap();
            prop_assert!((&back - &v).norm() <= 1e-12 * v.norm());
        }
    }
}
