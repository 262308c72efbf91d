//! How per-site displacement DOFs map to atom positions in the TB model.
//!
//! In-plane models move atoms within the plane (`d = 2`). The anti-plane model
//! carries one out-of-plane DOF per site; the out-of-plane direction is
//! periodic with period `b3` (the screw Burgers vector), so we embed it on a
//! circle of circumference `b3`:
//!
//! `y(ℓ) = (ℓ1, ℓ2, Rc cos θ, Rc sin θ)`, `θ = 2π u(ℓ)/b3`, `Rc = b3/2π`.
//!
//! Pair distances then depend on out-of-plane differences only through
//! `sin²(π Δu / b3)`, which makes every site energy exactly invariant under
//! `u(k) -> u(k) ± b3` (slip invariance).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kinematics {
    InPlane,
    AntiPlane { burgers: f64 },
}

impl Kinematics {
    /// Displacement components per site.
    pub fn dof(&self) -> usize {
        match self {
            Kinematics::InPlane => 2,
            Kinematics::AntiPlane { .. } => 1,
        }
    }

    /// Dimension of the embedding space the TB model sees.
    pub fn embed_dim(&self) -> usize {
        match self {
            Kinematics::InPlane => 2,
            Kinematics::AntiPlane { .. } => 4,
        }
    }

    /// Writes the embedded position of reference point `x` displaced by `u` into `out`.
    pub fn place(&self, x: [f64; 2], u: &[f64], out: &mut [f64]) {
        match *self {
            Kinematics::InPlane => {
                out[0] = x[0] + u[0];
                out[1] = x[1] + u[1];
            }
            Kinematics::AntiPlane { burgers } => {
                let rc = burgers / (2.0 * PI);
                let theta = 2.0 * PI * u[0] / burgers;
                out[0] = x[0];
                out[1] = x[1];
                out[2] = rc * theta.cos();
                out[3] = rc * theta.sin();
            }
        }
    }

    /// Embedded positions for many sites, flattened row-major.
    pub fn place_all(&self, xs: &[[f64; 2]], u: &[f64]) -> Vec<f64> {
        let (e, d) = (self.embed_dim(), self.dof());
        let mut out = vec![0.0; xs.len() * e];
        for (i, x) in xs.iter().enumerate() {
            self.place(*x, &u[i * d..(i + 1) * d], &mut out[i * e..(i + 1) * e]);
        }
        out
    }

    /// Chain rule: converts a gradient with respect to the embedded position
    /// of one site into a gradient with respect to that site's DOFs.
    pub fn pull_back(&self, u: &[f64], grad_embed: &[f64], out: &mut [f64]) {
        match *self {
            Kinematics::InPlane => {
                out[0] = grad_embed[0];
                out[1] = grad_embed[1];
            }
            Kinematics::AntiPlane { burgers } => {
                let theta = 2.0 * PI * u[0] / burgers;
                out[0] = -theta.sin() * grad_embed[2] + theta.cos() * grad_embed[3];
            }
        }
    }

    /// Pulls back a full flattened embedded gradient.
    pub fn pull_back_all(&self, u: &[f64], grad_embed: &[f64]) -> Vec<f64> {
        let (e, d) = (self.embed_dim(), self.dof());
        let n = u.len() / d;
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            self.pull_back(
                &u[i * d..(i + 1) * d],
                &grad_embed[i * e..(i + 1) * e],
                &mut out[i * d..(i + 1) * d],
            );
        }
        out
    }
}
