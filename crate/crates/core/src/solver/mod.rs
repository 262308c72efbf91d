//! Solvers for the two hybrid schemes, the pure tight-binding reference and
//! the discrete stability certificate.

mod gmres;
mod lbfgs;
mod newton_krylov;
mod precond;
mod reference;
mod stability;

pub use gmres::{gmres, GmresOutcome};
pub use lbfgs::{lbfgs, minimize_energy, LbfgsSettings};
pub use newton_krylov::{newton_krylov, solve_force_balance, NewtonSettings};
pub use precond::{lattice_preconditioner, Preconditioner};
pub use reference::{reference_solve_atm, AtmModel};
pub use stability::{lanczos_smallest, stability_check, StabilityReport};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lattice::Displacement;

/// A smooth objective on a flat DOF vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// A nonlinear residual map with Jacobian-vector products.
pub trait ResidualMap: Sync {
    fn dim(&self) -> usize;
    fn residual(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn jvp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>>;
}

/// One line of the per-iteration log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    /// Energy for minimisations, `None` for root finding.
    pub energy: Option<f64>,
    pub residual: f64,
    pub step: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverResult {
    pub u_star: Displacement,
    pub iterations: usize,
    /// `ℓ²` norm of the gradient or of `F^H` over free DOFs.
    pub residual_norm: f64,
    pub converged: bool,
    pub stability_min_eig: Option<f64>,
    pub wall_time: f64,
    /// Final objective value, for minimisations.
    pub energy: Option<f64>,
    pub history: Vec<IterationLog>,
    pub message: String,
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
