use super::{axpy, dot, norm, Preconditioner};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Restarted GMRES with right preconditioning for `A x = b`, `x0 = 0`.
/// Stops when `‖b - A x‖ <= rel_tol ‖b‖` or after `max_iter` inner steps.
pub fn gmres(
    op: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    precond: &Preconditioner,
    b: &[f64],
    rel_tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<GmresOutcome> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(GmresOutcome {
            x,
            residual_norm: 0.0,
            iterations: 0,
            converged: true,
        });
    }
    let target = rel_tol * bnorm;
    let restart = restart.max(1);
    let mut r = b.to_vec();
    let mut rnorm = bnorm;
    let mut total = 0;
    while total < max_iter {
        let m = restart.min(max_iter - total);
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|a| a / rnorm).collect()];
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = rnorm;
        let mut k_done = 0;
        for k in 0..m {
            let z = precond.apply(&v[k]);
            let mut w = op(&z)?;
            // modified Gram-Schmidt, twice for stability
            for _ in 0..2 {
                for (j, vj) in v.iter().enumerate() {
                    let hj = dot(&w, vj);
                    h[j][k] += hj;
                    axpy(-hj, vj, &mut w);
                }
            }
            let wn = norm(&w);
            h[k + 1][k] = wn;
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let den = h[k][k].hypot(h[k + 1][k]);
            if den == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = h[k][k] / den;
                sn[k] = h[k + 1][k] / den;
            }
            h[k][k] = den;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_done = k + 1;
            total += 1;
            if g[k + 1].abs() <= target || wn == 0.0 {
                break;
            }
            v.push(w.iter().map(|a| a / wn).collect());
        }
        // back substitution
        let mut y = vec![0.0; k_done];
        for i in (0..k_done).rev() {
            let s: f64 = (i + 1..k_done).map(|j| h[i][j] * y[j]).sum();
            y[i] = if h[i][i] == 0.0 { 0.0 } else { (g[i] - s) / h[i][i] };
        }
        let mut dz = vec![0.0; n];
        for (yi, vi) in y.iter().zip(&v) {
            axpy(*yi, vi, &mut dz);
        }
        axpy(1.0, &precond.apply(&dz), &mut x);
        let ax = op(&x)?;
        r = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
        rnorm = norm(&r);
        if rnorm <= target {
            return Ok(GmresOutcome {
                x,
                residual_norm: rnorm,
                iterations: total,
                converged: true,
            });
        }
        if k_done < m && g[k_done].abs() > target {
            // happy breakdown without reaching the target: Krylov space exhausted
            break;
        }
    }
    Ok(GmresOutcome {
        x,
        residual_norm: rnorm,
        iterations: total,
        converged: rnorm <= target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_nonsymmetric_system() {
        let n = 30;
        let a = |i: usize, j: usize| -> f64 {
            if i == j {
                4.0
            } else if j == i + 1 {
                -1.5
            } else if i == j + 1 {
                -0.5
            } else {
                0.0
            }
        };
        let op = |x: &[f64]| -> Result<Vec<f64>> { Ok((0..n).map(|i| (0..n).map(|j| a(i, j) * x[j]).sum()).collect()) };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 1.0).collect();
        let out = gmres(&op, &Preconditioner::Identity, &b, 1e-12, 7, 500).unwrap();
        assert!(out.converged);
        let ax = op(&out.x).unwrap();
        let err: f64 = ax.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-11 * norm(&b));

        let jac = Preconditioner::Jacobi(vec![4.0; n]);
        let out2 = gmres(&op, &jac, &b, 1e-12, 50, 500).unwrap();
        assert!(out2.converged && out2.iterations <= 30);
    }
}
