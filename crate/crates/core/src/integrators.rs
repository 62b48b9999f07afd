//! One-step maps: the parameterized leapfrog, the standard leapfrog, the
//! modified ODE it follows, the truncated Taylor series of the exact flow, and
//! a classical fourth-order Runge-Kutta reference flow.

use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gp_field::Potential;
use crate::hamiltonian::{energy, exact_rhs, MassMatrix, PhaseState};

/// Reference substeps per step of the finest study step size.
pub const DEFAULT_SUBSTEPS: usize = 64;

/// Minimum internal substeps for [`modified_flow_step`].
pub const MIN_MODIFIED_SUBSTEPS: usize = 16;

/// Expansion coefficients of `α(δt) = 1 + α₁δt + α₂δt²` and
/// `β(δt) = 1 + β₁δt + β₂δt²`. Higher-order remainders are zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SchemeParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl SchemeParams {
    pub fn new(alpha1: f64, alpha2: f64, beta1: f64, beta2: f64) -> Result<Self> {
        let p = Self {
            alpha1,
            alpha2,
            beta1,
            beta2,
        };
        for (key, v) in [
            ("scheme.alpha1", alpha1),
            ("scheme.alpha2", alpha2),
            ("scheme.beta1", beta1),
            ("scheme.beta2", beta2),
        ] {
            if !v.is_finite() {
                return Err(Error::config(key, "finite"));
            }
        }
        Ok(p)
    }

    /// All coefficients zero: `α = β = 1`.
    pub fn standard() -> Self {
        Self::default()
    }

    pub fn alpha(&self, dt: f64) -> f64 {
        1.0 + self.alpha1 * dt + self.alpha2 * dt * dt
    }

    pub fn beta(&self, dt: f64) -> f64 {
        1.0 + self.beta1 * dt + self.beta2 * dt * dt
    }

    /// True when `α₁ = β₁ = 0`, the condition for consistency with the
    /// original Hamiltonian system.
    pub fn is_consistent(&self) -> bool {
        self.alpha1 == 0.0 && self.beta1 == 0.0
    }
}

pub fn alpha_of(p: &SchemeParams, dt: f64) -> f64 {
    p.alpha(dt)
}

pub fn beta_of(p: &SchemeParams, dt: f64) -> f64 {
    p.beta(dt)
}

fn finite_or_overflow(s: PhaseState, step: usize) -> Result<PhaseState> {
    if s.is_finite() {
        Ok(s)
    } else {
        Err(Error::Overflow { step })
    }
}

/// One step of the parameterized leapfrog:
///
/// ```text
/// y⁺ = β y + δt M⁻¹(α x - (δt/2) ∇V(y))
/// x⁺ = α² x - (δt/2)(α ∇V(y) + ∇V(y⁺))
/// ```
///
/// The gradient is evaluated exactly twice, at `y` and then at `y⁺`.
pub fn leapfrog_param_step<P: Potential + ?Sized>(
    pot: &P,
    mass: &MassMatrix,
    params: &SchemeParams,
    dt: f64,
    s: &PhaseState,
) -> Result<PhaseState> {
    if !(dt > 0.0) {
        return Err(Error::usage("step size must be > 0"));
    }
    let alpha = params.alpha(dt);
    let beta = params.beta(dt);
    let g0 = pot.grad(&s.y)?;
    let kick = &s.x * alpha - &g0 * (0.5 * dt);
    let y = &s.y * beta + mass.apply_minv(&kick)? * dt;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow { step: 1 });
    }
    let g1 = pot.grad(&y)?;
    let x = &s.x * (alpha * alpha) - (g0 * alpha + g1) * (0.5 * dt);
    finite_or_overflow(PhaseState { y, x }, 1)
}

/// The Störmer-Verlet map `Ψ⁰_δt`, i.e. the parameterized step with all
/// coefficients zero.
pub fn leapfrog_standard_step<P: Potential + ?Sized>(
    pot: &P,
    mass: &MassMatrix,
    dt: f64,
    s: &PhaseState,
) -> Result<PhaseState> {
    leapfrog_param_step(pot, mass, &SchemeParams::standard(), dt, s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    Standard,
    Parameterized(SchemeParams),
}

impl Scheme {
    pub fn params(&self) -> SchemeParams {
        match self {
            Scheme::Standard => SchemeParams::standard(),
            Scheme::Parameterized(p) => *p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Termination {
    Completed,
    /// `‖(y_n, x_n)‖` exceeded the escape radius at step `step`.
    Escaped { step: usize },
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<PhaseState>,
    pub energies: Vec<f64>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn last(&self) -> &PhaseState {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn escaped(&self) -> bool {
        matches!(self.termination, Termination::Escaped { .. })
    }

    /// CSV with columns `n, t, y1..yd, x1..xd, H`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.states.first().map_or(0, PhaseState::dim);
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["n".to_string(), "t".to_string()];
        header.extend((1..=d).map(|i| format!("y{i}")));
        header.extend((1..=d).map(|i| format!("x{i}")));
        header.push("H".into());
        out.write_record(&header)?;
        for (n, (s, h)) in self.states.iter().zip(&self.energies).enumerate() {
            let mut row = vec![n.to_string(), (n as f64 * self.dt).to_string()];
            row.extend(s.y.iter().chain(s.x.iter()).map(f64::to_string));
            row.push(h.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "dt": self.dt,
            "termination": self.termination,
            "y": self.states.iter().map(|s| s.y.as_slice().to_vec()).collect::<Vec<_>>(),
            "x": self.states.iter().map(|s| s.x.as_slice().to_vec()).collect::<Vec<_>>(),
            "energy": self.energies,
        })
    }
}

/// Number of steps of size `dt` needed to reach `horizon`, tolerating rounding
/// in `horizon / dt`.
pub fn step_count(horizon: f64, dt: f64) -> usize {
    let ratio = horizon / dt;
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= 1e-9 * ratio.max(1.0) {
        nearest as usize
    } else {
        ratio.ceil() as usize
    }
}

/// Iterates a scheme from `s0` until `t ≥ horizon` or the state leaves the
/// ball of radius `escape_radius`. Escapes are recorded, not raised.
#[allow(clippy::too_many_arguments)]
pub fn integrate<P: Potential + ?Sized>(
    scheme: Scheme,
    pot: &P,
    mass: &MassMatrix,
    dt: f64,
    s0: &PhaseState,
    horizon: f64,
    escape_radius: f64,
) -> Result<Trajectory> {
    if !(horizon > 0.0) {
        return Err(Error::usage("horizon must be > 0"));
    }
    if !(dt > 0.0) {
        return Err(Error::usage("step size must be > 0"));
    }
    if !(escape_radius > s0.norm()) {
        return Err(Error::usage("escape radius must exceed the norm of the initial state"));
    }
    let params = scheme.params();
    let steps = step_count(horizon, dt);
    let mut states = Vec::with_capacity(steps + 1);
    let mut energies = Vec::with_capacity(steps + 1);
    energies.push(energy(pot, mass, s0)?);
    states.push(s0.clone());
    let mut termination = Termination::Completed;
    for n in 1..=steps {
        let next = leapfrog_param_step(pot, mass, &params, dt, states.last().unwrap()).map_err(|e| match e {
            Error::Overflow { .. } => Error::Overflow { step: n },
            other => other,
        })?;
        let escaped = next.norm() > escape_radius;
        energies.push(energy(pot, mass, &next)?);
        states.push(next);
        if escaped {
            termination = Termination::Escaped { step: n };
            break;
        }
    }
    Ok(Trajectory {
        dt,
        states,
        energies,
        termination,
    })
}

type Rhs<'a> = dyn Fn(&PhaseState) -> Result<(DVector<f64>, DVector<f64>)> + 'a;

/// Classical RK4 with `steps` uniform steps over `duration`.
fn rk4(rhs: &Rhs<'_>, s0: &PhaseState, duration: f64, steps: usize) -> Result<PhaseState> {
    let h = duration / steps as f64;
    let mut s = s0.clone();
    let shifted = |s: &PhaseState, k: &(DVector<f64>, DVector<f64>), c: f64| PhaseState {
        y: &s.y + &k.0 * c,
        x: &s.x + &k.1 * c,
    };
    for n in 0..steps {
        let k1 = rhs(&s)?;
        let k2 = rhs(&shifted(&s, &k1, 0.5 * h))?;
        let k3 = rhs(&shifted(&s, &k2, 0.5 * h))?;
        let k4 = rhs(&shifted(&s, &k3, h))?;
        let w = h / 6.0;
        s.y += (k1.0 + (k2.0 + k3.0) * 2.0 + k4.0) * w;
        s.x += (k1.1 + (k2.1 + k3.1) * 2.0 + k4.1) * w;
        if !s.is_finite() {
            return Err(Error::Overflow { step: n + 1 });
        }
    }
    Ok(s)
}

/// High-accuracy approximation of the exact flow of the original system at
/// time `horizon`, using RK4 with `substeps_per_dt` uniform substeps per step
/// of size `dt`.
pub fn reference_solve<P: Potential + ?Sized>(
    pot: &P,
    mass: &MassMatrix,
    s0: &PhaseState,
    horizon: f64,
    dt: f64,
    substeps_per_dt: usize,
) -> Result<PhaseState> {
    if substeps_per_dt == 0 {
        return Err(Error::usage("substeps_per_dt must be >= 1"));
    }
    if !(horizon > 0.0 && dt > 0.0) {
        return Err(Error::usage("horizon and dt must be > 0"));
    }
    let steps = step_count(horizon, dt) * substeps_per_dt;
    rk4(&|s| exact_rhs(pot, mass, s), s0, horizon, steps)
}

/// Right-hand side of the first-order modified equation:
///
/// ```text
/// dY/dt = β₁Y + M⁻¹X + δt[(β₂ - β₁²/2)Y - (β₁/2)M⁻¹X]
/// dX/dt = 2α₁X - ∇V(Y) + δt[(2α₂ - α₁²)X + (α₁/2)∇V(Y)]
/// ```
pub fn modified_rhs<P: Potential + ?Sized>(
    pot: &P,
    mass: &MassMatrix,
    params: &SchemeParams,
    dt: f64,
    s: &PhaseState,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if !(dt >= 0.0) {
        return Err(Error::usage("step size must be >= 0"));
    }
    let SchemeParams {
        alpha1: a1,
        alpha2: a2,
        beta1: b1,
        beta2: b2,
    } = *params;
    let minv_x = mass.apply_minv(&s.x)?;
    let g = pot.grad(&s.y)?;
    let dy = &s.y * (b1 + dt * (b2 - 0.5 * b1 * b1)) + &minv_x * (1.0 - 0.5 * dt * b1);
    let dx = &s.x * (2.0 * a1 + dt * (2.0 * a2 - a1 * a1)) - g * (1.0 - 0.5 * dt * a1);
    Ok((dy, dx))
}

/// Advances the modified equation, with `dt` frozen inside its right-hand
/// side, by time `dt` on an RK4 grid of `internal_substeps` steps.
pub fn modified_flow_step<P: Potential + ?Sized>(
    pot: &P,
    mass: &MassMatrix,
    params: &SchemeParams,
    dt: f64,
    s: &PhaseState,
    internal_substeps: usize,
) -> Result<PhaseState> {
    if internal_substeps < MIN_MODIFIED_SUBSTEPS {
        return Err(Error::usage(format!(
            "internal_substeps must be >= {MIN_MODIFIED_SUBSTEPS}"
        )));
    }
    if dt == 0.0 {
        return Ok(s.clone());
    }
    rk4(&|z| modified_rhs(pot, mass, params, dt, z), s, dt, internal_substeps)
}

/// Exact flow expanded to third order in `y` and second order in `x`:
///
/// ```text
/// y⁺ = y + δt M⁻¹x - (δt²/2) M⁻¹∇V - (δt³/6) M⁻¹ D²V M⁻¹x
/// x⁺ = x - δt ∇V - (δt²/2) D²V M⁻¹x
/// ```
pub fn exact_taylor_step<P: Potential + ?Sized>(
    pot: &P,
    mass: &MassMatrix,
    dt: f64,
    s: &PhaseState,
) -> Result<PhaseState> {
    let minv_x = mass.apply_minv(&s.x)?;
    let g = pot.grad(&s.y)?;
    let h_minv_x = pot.hessian(&s.y)? * &minv_x;
    let y = &s.y + &minv_x * dt - mass.apply_minv(&g)? * (0.5 * dt * dt)
        - mass.apply_minv(&h_minv_x)? * (dt * dt * dt / 6.0);
    let x = &s.x - g * dt - h_minv_x * (0.5 * dt * dt);
    Ok(PhaseState { y, x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp_field::{sample_realization, FieldConfig, MeanSpec, PotentialRealization};
    use nalgebra::DMatrix;
    use std::cell::RefCell;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn free(d: usize) -> PotentialRealization {
        sample_realization(&FieldConfig::deterministic(MeanSpec::zero(d))).unwrap()
    }

    fn oscillator(d: usize) -> PotentialRealization {
        sample_realization(&FieldConfig::deterministic(MeanSpec::confining(d))).unwrap()
    }

    fn st(y: &[f64], x: &[f64]) -> PhaseState {
        PhaseState::from_slices(y, x).unwrap()
    }

    fn close(a: &DVector<f64>, b: &[f64], tol: f64) -> bool {
        (a - v(b)).amax() <= tol
    }

    #[test]
    fn alpha_beta_arithmetic() {
        let p = SchemeParams::new(0.0, 2.0, 1.0, -1.0).unwrap();
        assert!((alpha_of(&p, 0.1) - 1.02).abs() < 1e-15);
        assert_eq!(beta_of(&p, 0.5), 1.25);
        let z = SchemeParams::standard();
        for dt in [1e-3, 0.1, 2.0] {
            assert_eq!(z.alpha(dt), 1.0);
            assert_eq!(z.beta(dt), 1.0);
        }
        assert!(SchemeParams::new(f64::NAN, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn param_step_examples() {
        let m = MassMatrix::identity(2);
        let s = leapfrog_param_step(&free(2), &m, &SchemeParams::standard(), 0.1, &st(&[1.0, 0.0], &[0.0, 1.0])).unwrap();
        assert!(close(&s.y, &[1.0, 0.1], 1e-15) && close(&s.x, &[0.0, 1.0], 0.0));

        let p = SchemeParams::new(0.0, 0.0, 0.0, 2.0).unwrap();
        let s = leapfrog_param_step(&free(2), &m, &p, 0.1, &st(&[1.0, 0.0], &[0.0, 0.0])).unwrap();
        assert!(close(&s.y, &[1.02, 0.0], 1e-15) && close(&s.x, &[0.0, 0.0], 0.0));

        // ∇V(y) = y: y⁺ = 1 - 0.1·0.05 = 0.995, x⁺ = -0.05·(1 + 0.995).
        let s = leapfrog_param_step(&oscillator(2), &m, &SchemeParams::standard(), 0.1, &st(&[1.0, 0.0], &[0.0, 0.0])).unwrap();
        assert!(close(&s.y, &[0.995, 0.0], 1e-15));
        assert!(close(&s.x, &[-0.09975, 0.0], 1e-15));
    }

    #[test]
    fn standard_step_is_the_zero_parameter_step() {
        let r = sample_realization(&FieldConfig::new(4)).unwrap();
        let m = MassMatrix::dense(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let mut state = 0x9e37_79b9_u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..100 {
            let s = st(&[next(), next()], &[next(), next()]);
            let dt = 0.01 + 0.2 * next().abs();
            let a = leapfrog_standard_step(&r, &m, dt, &s).unwrap();
            let b = leapfrog_param_step(&r, &m, &SchemeParams::standard(), dt, &s).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn standard_step_energy_error_is_small() {
        let r = oscillator(2);
        let m = MassMatrix::identity(2);
        let s0 = st(&[1.0, 0.0], &[0.0, 0.0]);
        let s1 = leapfrog_standard_step(&r, &m, 0.1, &s0).unwrap();
        let dh = energy(&r, &m, &s1).unwrap() - energy(&r, &m, &s0).unwrap();
        // Hand evaluation: ½(0.09975² + 0.995²) - ½ = -1.2469e-5.
        assert!((dh - (-1.246_875e-5)).abs() < 1e-12, "{dh}");
        assert!(dh.abs() <= 0.01);
    }

    /// Records gradient query points.
    struct Recording<'a> {
        inner: &'a PotentialRealization,
        points: RefCell<Vec<DVector<f64>>>,
    }

    impl Potential for Recording<'_> {
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn value(&self, y: &DVector<f64>) -> Result<f64> {
            self.inner.value(y)
        }
        fn grad(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
            self.points.borrow_mut().push(y.clone());
            self.inner.grad(y)
        }
        fn hessian(&self, y: &DVector<f64>) -> Result<nalgebra::DMatrix<f64>> {
            self.inner.hessian(y)
        }
        fn third(&self, y: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
            self.inner.third(y, a, b)
        }
    }

    #[test]
    fn step_queries_gradient_at_y_then_y_next() {
        let r = sample_realization(&FieldConfig::new(8)).unwrap();
        let rec = Recording {
            inner: &r,
            points: RefCell::new(Vec::new()),
        };
        let s0 = st(&[0.2, 0.3], &[-0.4, 0.1]);
        let p = SchemeParams::new(0.0, 1.0, 0.0, 2.0).unwrap();
        let s1 = leapfrog_param_step(&rec, &MassMatrix::identity(2), &p, 0.05, &s0).unwrap();
        let pts = rec.points.into_inner();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0], s0.y);
        assert_eq!(pts[1], s1.y);
    }

    #[test]
    fn integrate_free_flight() {
        let traj = integrate(Scheme::Standard, &free(2), &MassMatrix::identity(2), 0.1, &st(&[0.0, 0.0], &[1.0, 0.5]), 1.0, 1e3).unwrap();
        assert_eq!(traj.states.len(), 11);
        assert_eq!(traj.termination, Termination::Completed);
        for (n, s) in traj.states.iter().enumerate() {
            let t = n as f64 * 0.1;
            assert!(close(&s.y, &[t, 0.5 * t], 1e-14));
        }
    }

    #[test]
    fn integrate_records_escape() {
        // Steep linear potential pushes the particle out on the first step.
        let mean = MeanSpec::new(0.0, v(&[-1e4, 0.0]), DMatrix::zeros(2, 2)).unwrap();
        let r = sample_realization(&FieldConfig::deterministic(mean)).unwrap();
        let traj = integrate(Scheme::Standard, &r, &MassMatrix::identity(2), 0.1, &st(&[1.0, 0.0], &[0.0, 0.0]), 1.0, 2.0).unwrap();
        assert_eq!(traj.termination, Termination::Escaped { step: 1 });
        assert_eq!(traj.states.len(), 2);
    }

    #[test]
    fn integrate_rejects_radius_inside_initial_state() {
        let err = integrate(Scheme::Standard, &free(1), &MassMatrix::identity(1), 0.1, &st(&[3.0], &[4.0]), 1.0, 5.0);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn integrate_overflow_reports_step() {
        let mean = MeanSpec::new(0.0, v(&[-1e300]), DMatrix::zeros(1, 1)).unwrap();
        let r = sample_realization(&FieldConfig::deterministic(mean)).unwrap();
        let err = integrate(Scheme::Standard, &r, &MassMatrix::identity(1), 1e10, &st(&[0.0], &[0.0]), 1e10, f64::INFINITY).unwrap_err();
        assert!(matches!(err, Error::Overflow { step: 1 }), "{err}");
    }

    #[test]
    fn long_run_oscillator_energy() {
        let r = oscillator(2);
        let m = MassMatrix::identity(2);
        let traj = integrate(Scheme::Standard, &r, &m, 0.01, &st(&[1.0, 0.0], &[0.0, 0.0]), 100.0, 1e3).unwrap();
        assert_eq!(traj.termination, Termination::Completed);
        assert_eq!(traj.states.len(), 10_001);
        let h0 = traj.energies[0];
        let worst = traj.energies.iter().map(|h| (h - h0).abs() / h0).fold(0.0, f64::max);
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn reference_free_flight_and_oscillator() {
        let m = MassMatrix::identity(1);
        let s0 = st(&[0.5], &[2.0]);
        for sub in [1, 7, 64] {
            let s = reference_solve(&free(1), &m, &s0, 1.0, 1.0, sub).unwrap();
            assert!((s.y[0] - 2.5).abs() < 1e-14 && s.x[0] == 2.0);
        }
        let s = reference_solve(&oscillator(1), &m, &st(&[1.0], &[0.0]), 1.0, 1.0, 1000).unwrap();
        assert!((s.y[0] - 1f64.cos()).abs() < 1e-8);
        assert!((s.x[0] + 1f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn reference_self_convergence_is_fourth_order() {
        let r = sample_realization(&FieldConfig::new(21)).unwrap();
        let m = MassMatrix::identity(2);
        let s0 = st(&[0.5, -0.25], &[0.3, 0.8]);
        let run = |n| reference_solve(&r, &m, &s0, 1.0, 1.0, n).unwrap();
        let (a, b, c) = (run(16), run(32), run(64));
        let diff = |p: &PhaseState, q: &PhaseState| (&p.y - &q.y).norm_squared() + (&p.x - &q.x).norm_squared();
        let ratio = (diff(&a, &b) / diff(&b, &c)).sqrt();
        assert!((14.0..18.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn modified_rhs_examples() {
        let r = sample_realization(&FieldConfig::new(2)).unwrap();
        let m = MassMatrix::identity(2);
        let s = st(&[0.3, -0.1], &[0.2, 0.9]);
        let p = SchemeParams::new(0.0, 3.0, 0.0, -1.5).unwrap();
        let (dy, dx) = modified_rhs(&r, &m, &p, 0.0, &s).unwrap();
        let (ey, ex) = exact_rhs(&r, &m, &s).unwrap();
        assert_eq!((dy, dx), (ey, ex));

        let p = SchemeParams::new(0.0, 1.0, 0.0, 3.0).unwrap();
        let (dy, dx) = modified_rhs(&free(2), &m, &p, 0.1, &st(&[1.0, 0.0], &[0.0, 2.0])).unwrap();
        assert!(close(&dy, &[0.3, 2.0], 1e-15));
        assert!(close(&dx, &[0.0, 0.4], 1e-15));

        let p = SchemeParams::new(0.0, 0.0, 1.0, 0.0).unwrap();
        let (dy, _) = modified_rhs(&free(2), &m, &p, 0.2, &st(&[1.0, 0.0], &[0.0, 0.0])).unwrap();
        assert!(close(&dy, &[0.9, 0.0], 1e-15));
    }

    #[test]
    fn modified_rhs_approaches_exact_rhs() {
        let r = sample_realization(&FieldConfig::new(6)).unwrap();
        let m = MassMatrix::identity(2);
        let s = st(&[0.7, 0.2], &[-0.3, 0.4]);
        let p = SchemeParams::new(0.0, 1.0, 0.0, 2.0).unwrap();
        let (ey, ex) = exact_rhs(&r, &m, &s).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..8 {
            let dt = 0.5f64.powi(k);
            let (dy, dx) = modified_rhs(&r, &m, &p, dt, &s).unwrap();
            let gap = ((&dy - &ey).norm_squared() + (&dx - &ex).norm_squared()).sqrt();
            assert!(gap < last);
            last = gap;
        }
    }

    #[test]
    fn modified_flow_examples() {
        let m = MassMatrix::identity(2);
        let p = SchemeParams::new(0.0, 1.0, 0.0, 2.0).unwrap();
        let s = st(&[1.0, 0.0], &[0.3, 0.0]);
        assert_eq!(modified_flow_step(&free(2), &m, &p, 0.0, &s, 16).unwrap(), s);
        assert!(modified_flow_step(&free(2), &m, &p, 0.1, &s, 8).is_err());

        let s = modified_flow_step(&free(2), &m, &SchemeParams::standard(), 0.1, &st(&[1.0, 0.0], &[0.5, -1.0]), 16).unwrap();
        assert!(close(&s.y, &[1.05, -0.1], 1e-15) && close(&s.x, &[0.5, -1.0], 0.0));

        // dY/dt = δt β₂ Y with δt = 0.1, β₂ = 2, over time 0.1.
        let p = SchemeParams::new(0.0, 0.0, 0.0, 2.0).unwrap();
        let s = modified_flow_step(&free(2), &m, &p, 0.1, &st(&[1.0, 0.0], &[0.0, 0.0]), 64).unwrap();
        // Independent oracle: explicit Euler on a very fine grid, extrapolated.
        let euler = |n: u32| (1.0 + 0.02 / n as f64).powi(n as i32);
        let richardson = 2.0 * euler(1 << 20) - euler(1 << 19);
        assert!((s.y[0] - richardson).abs() < 1e-10, "{} vs {richardson}", s.y[0]);
        assert!((s.y[0] - 0.02f64.exp()).abs() < 1e-10);
        assert!((s.y[0] - 1.020201).abs() < 1e-6);
    }

    #[test]
    fn taylor_step_examples() {
        let m = MassMatrix::identity(2);
        let s = exact_taylor_step(&free(2), &m, 0.3, &st(&[1.0, 2.0], &[0.5, -1.0])).unwrap();
        assert!(close(&s.y, &[1.15, 1.7], 1e-15) && close(&s.x, &[0.5, -1.0], 0.0));

        let s = exact_taylor_step(&oscillator(2), &m, 0.1, &st(&[1.0, 0.0], &[0.0, 0.0])).unwrap();
        assert!(close(&s.y, &[0.995, 0.0], 1e-15));
        assert!(close(&s.x, &[-0.1, 0.0], 1e-15));
    }

    #[test]
    fn trajectory_csv_layout() {
        let traj = integrate(Scheme::Standard, &free(2), &MassMatrix::identity(2), 0.5, &st(&[0.0, 0.0], &[1.0, 0.0]), 1.0, 10.0).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "n,t,y1,y2,x1,x2,H");
        assert_eq!(lines[1], "0,0,0,0,1,0,0.5");
        assert_eq!(lines.len(), 4);
        assert!(!text.contains('\r'));
    }
}
