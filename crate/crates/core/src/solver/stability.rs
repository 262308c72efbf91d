use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use super::{axpy, dot, norm};
use crate::coupling::{HybridModel, Scheme};
use crate::error::{Error, Result};
use crate::lattice::Displacement;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Smallest eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// `"hessian"` for energy mixing, `"symmetrized_jacobian"` for force mixing.
    pub operator: String,
    pub lanczos_steps: usize,
    /// Residual bounds `|β_m s_{m,i}|` of the returned Ritz pairs.
    pub residual_bounds: Vec<f64>,
}

impl StabilityReport {
    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn is_stable(&self) -> bool {
        self.eigenvalues[0] > 0.0
    }
}

fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = alpha.len();
    let t = Mat::<f64>::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i == j + 1 {
            beta[j]
        } else if j == i + 1 {
            beta[i]
        } else {
            0.0
        }
    });
    let eig = t.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let vals: Vec<f64> = (0..m).map(|i| eig.S().column_vector()[i]).collect();
    let u = eig.U();
    let last: Vec<f64> = (0..m).map(|i| u[(m - 1, i)]).collect();
    Ok((vals, last))
}

/// The `k` smallest eigenvalues of a symmetric operator by Lanczos with full
/// reorthogonalisation. Converged when each Ritz residual bound is below
/// `tol · max(1, |θ|)`; errors after `max_steps`.
pub fn lanczos_smallest(
    op: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    n: usize,
    k: usize,
    tol: f64,
    max_steps: usize,
    start: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    if n == 0 || k == 0 {
        return Err(Error::InvalidParameter("Lanczos needs n > 0 and k > 0".into()));
    }
    let k = k.min(n);
    let s0 = norm(start);
    if s0 == 0.0 || start.len() != n {
        return Err(Error::InvalidParameter("Lanczos start vector must be nonzero with length n".into()));
    }
    let mut q: Vec<Vec<f64>> = vec![start.iter().map(|v| v / s0).collect()];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let max_steps = max_steps.min(n);
    for j in 0..max_steps {
        let mut w = op(&q[j])?;
        let a = dot(&w, &q[j]);
        alpha.push(a);
        for _ in 0..2 {
            for qi in &q {
                let c = dot(&w, qi);
                axpy(-c, qi, &mut w);
            }
        }
        let b = norm(&w);
        let m = j + 1;
        if m >= k && (m % 5 == 0 || m == max_steps || b < 1e-12) {
            let (vals, last) = tridiagonal_eigen(&alpha, &beta)?;
            let bounds: Vec<f64> = (0..k).map(|i| (b * last[i]).abs()).collect();
            if bounds.iter().zip(&vals).all(|(r, t)| *r <= tol * t.abs().max(1.0)) || b < 1e-12 {
                return Ok((vals[..k].to_vec(), bounds, m));
            }
        }
        if m == max_steps {
            break;
        }
        beta.push(b);
        q.push(w.iter().map(|v| v / b).collect());
    }
    Err(Error::Lanczos(format!("no convergence in {max_steps} steps")))
}

/// Smallest eigenvalues of `δ²E^H(u)` (energy mixing) or of the symmetric part
/// of `δF^H(u)` (force mixing) on the free DOFs, in the Euclidean inner product.
pub fn stability_check(model: &HybridModel, u: &Displacement, n_eigs: usize) -> Result<StabilityReport> {
    let n = model.n_free_dof();
    let apply = |x: &[f64]| -> Result<Vec<f64>> {
        let v = model.from_free(x);
        Ok(model.to_free(&match model.scheme() {
            Scheme::Energy => model.energy_hessian_apply(u, &v)?,
            Scheme::Force => model.force_jacobian_apply(u, &v)?,
        }))
    };
    let (op, name): (Box<dyn Fn(&[f64]) -> Result<Vec<f64>> + '_>, &str) = match model.scheme() {
        Scheme::Energy => (Box::new(apply), "hessian"),
        Scheme::Force => {
            // dense assembly of (J + Jᵀ)/2, column by column
            if n > 4000 {
                return Err(Error::InvalidParameter(format!(
                    "symmetrized Jacobian with {n} DOFs is too large to assemble"
                )));
            }
            let mut j = Mat::<f64>::zeros(n, n);
            let mut e = vec![0.0; n];
            for c in 0..n {
                e[c] = 1.0;
                let col = apply(&e)?;
                e[c] = 0.0;
                for (r, v) in col.iter().enumerate() {
                    j[(r, c)] = *v;
                }
            }
            let sym = Mat::<f64>::from_fn(n, n, |a, b| 0.5 * (j[(a, b)] + j[(b, a)]));
            (
                Box::new(move |x: &[f64]| -> Result<Vec<f64>> {
                    Ok((0..n).map(|r| (0..n).map(|c| sym[(r, c)] * x[c]).sum()).collect())
                }),
                "symmetrized_jacobian",
            )
        }
    };
    // deterministic start vector with components in every direction
    let start: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7548776662).sin()).collect();
    let (eigenvalues, residual_bounds, lanczos_steps) = lanczos_smallest(&*op, n, n_eigs, 1e-6, n.min(600), &start)?;
    Ok(StabilityReport {
        eigenvalues,
        operator: name.to_string(),
        lanczos_steps,
        residual_bounds,
    })
}
