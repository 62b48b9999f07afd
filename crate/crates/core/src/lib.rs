//! Parameterized leapfrog integration of Hamiltonian systems whose potential
//! is a Gaussian-process sample path, with Monte Carlo estimators of local,
//! modified-equation, Taylor-remainder and global convergence orders.

pub mod error;
pub mod gp_field;
pub mod hamiltonian;
pub mod integrators;
pub mod analysis;
pub mod cli;

pub use error::{Error, Result};
