use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Side};

use crate::error::Result;
use crate::lattice::ReferenceConfig;
use crate::site_potential::TaylorForce;

/// Above this many DOFs the dense factorisation is skipped for Jacobi scaling.
const DENSE_LIMIT: usize = 6000;

/// Symmetric positive definite approximation `P` of the Hessian; `apply`
/// returns `P⁻¹ r`.
pub enum Preconditioner {
    Identity,
    Jacobi(Vec<f64>),
    Cholesky(Llt<f64>),
}

impl Preconditioner {
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        match self {
            Preconditioner::Identity => r.to_vec(),
            Preconditioner::Jacobi(d) => r.iter().zip(d).map(|(a, b)| a / b).collect(),
            Preconditioner::Cholesky(llt) => {
                let mut rhs = Mat::<f64>::from_fn(r.len(), 1, |i, _| r[i]);
                llt.solve_in_place(rhs.as_mut());
                (0..r.len()).map(|i| rhs[(i, 0)]).collect()
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preconditioner::Identity => "identity",
            Preconditioner::Jacobi(_) => "jacobi",
            Preconditioner::Cholesky(_) => "cholesky",
        }
    }
}

/// The clamped linear lattice operator `(K u)(ℓ) = Σ_σ δF_#(0)_σ u(ℓ+σ)`
/// restricted to `free` sites, symmetrised and factorised. Off-lattice
/// sites only get the on-site block.
pub fn lattice_preconditioner(
    config: &ReferenceConfig,
    free: &[usize],
    tf: &TaylorForce,
) -> Result<Preconditioner> {
    let d = tf.kinematics.dof();
    let n = free.len() * d;
    let mut index = vec![usize::MAX; config.len()];
    for (i, &s) in free.iter().enumerate() {
        index[s] = i;
    }
    let blocks: Vec<Vec<f64>> = (0..=tf.domain.len()).map(|k| tf.block(k)).collect();
    let mut k = Mat::<f64>::zeros(n, n);
    for (i, &s) in free.iter().enumerate() {
        for a in 0..d {
            for c in 0..d {
                k[(i * d + a, i * d + c)] += blocks[0][a * d + c];
            }
        }
        let Some(nbrs) = tf.domain.neighbours(config, s) else {
            continue;
        };
        for (slot, nb) in nbrs.iter().enumerate() {
            let Some(j) = nb.map(|m| index[m]).filter(|&j| j != usize::MAX) else {
                continue;
            };
            let b = &blocks[slot + 1];
            for a in 0..d {
                for c in 0..d {
                    k[(i * d + a, j * d + c)] += b[a * d + c];
                }
            }
        }
    }
    let diag: Vec<f64> = (0..n).map(|i| k[(i, i)]).collect();
    if n > DENSE_LIMIT {
        return Ok(Preconditioner::Jacobi(diag.iter().map(|v| v.abs().max(1e-12)).collect()));
    }
    let sym = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (k[(i, j)] + k[(j, i)]));
    let scale = diag.iter().map(|v| v.abs()).sum::<f64>() / n.max(1) as f64;
    let mut shift = 1e-3 * scale;
    for _ in 0..8 {
        let shifted = Mat::<f64>::from_fn(n, n, |i, j| sym[(i, j)] + if i == j { shift } else { 0.0 });
        if let Ok(llt) = shifted.llt(Side::Lower) {
            return Ok(Preconditioner::Cholesky(llt));
        }
        shift *= 10.0;
    }
    Ok(Preconditioner::Jacobi(diag.iter().map(|v| v.abs().max(1e-12)).collect()))
}
