use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{axpy, gmres, norm, IterationLog, Preconditioner, ResidualMap, SolverResult};
use crate::coupling::{HybridModel, Scheme};
use crate::error::{Error, Result};
use crate::lattice::Displacement;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub gmres_restart: usize,
    pub gmres_rel_tol: f64,
    pub gmres_max_iter: usize,
    pub max_backtracks: usize,
    /// Stagnation: `‖F‖` must drop by this fraction over `stagnation_window` steps.
    pub stagnation_reduction: f64,
    pub stagnation_window: usize,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            gmres_restart: 50,
            gmres_rel_tol: 1e-2,
            gmres_max_iter: 500,
            max_backtracks: 12,
            stagnation_reduction: 1e-3,
            stagnation_window: 5,
        }
    }
}

/// Damped inexact Newton method with GMRES inner solves. Returns the final
/// point, residual norm, Newton steps, success flag, log and message.
pub fn newton_krylov(
    map: &dyn ResidualMap,
    x0: Vec<f64>,
    precond: &Preconditioner,
    s: &NewtonSettings,
) -> Result<(Vec<f64>, f64, usize, bool, Vec<IterationLog>, String)> {
    let mut x = x0;
    let mut f = map.residual(&x)?;
    let mut fnorm = norm(&f);
    let mut history = vec![IterationLog {
        iter: 0,
        energy: None,
        residual: fnorm,
        step: 0.0,
    }];
    let mut iter = 0;
    while fnorm > s.tol {
        if iter >= s.max_iter {
            return Ok((x, fnorm, iter, false, history, format!("max_iter = {} reached", s.max_iter)));
        }
        if iter >= s.stagnation_window {
            let old = history[iter - s.stagnation_window].residual;
            if fnorm > (1.0 - s.stagnation_reduction) * old {
                let msg = format!(
                    "stagnation: ‖F‖ went from {old:.3e} to {fnorm:.3e} over {} steps",
                    s.stagnation_window
                );
                return Ok((x, fnorm, iter, false, history, msg));
            }
        }
        let xc = x.clone();
        let op = |v: &[f64]| map.jvp(&xc, v);
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let lin = gmres(&op, precond, &rhs, s.gmres_rel_tol, s.gmres_restart, s.gmres_max_iter)?;
        tracing::debug!(iter, inner = lin.iterations, lin_resid = lin.residual_norm, "gmres");
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=s.max_backtracks {
            let mut xt = x.clone();
            axpy(alpha, &lin.x, &mut xt);
            match map.residual(&xt) {
                Ok(ft) => {
                    let nt = norm(&ft);
                    if nt.is_finite() && nt <= (1.0 - 1e-4 * alpha) * fnorm {
                        accepted = Some((xt, ft, nt));
                        break;
                    }
                }
                Err(Error::Accumulation { .. }) => {}
                Err(e) => return Err(e),
            }
            alpha *= 0.5;
        }
        let Some((xt, ft, nt)) = accepted else {
            return Ok((x, fnorm, iter, false, history, "backtracking failed to reduce ‖F‖".into()));
        };
        x = xt;
        f = ft;
        fnorm = nt;
        iter += 1;
        tracing::debug!(iter, residual = fnorm, step = alpha, "newton");
        history.push(IterationLog {
            iter,
            energy: None,
            residual: fnorm,
            step: alpha,
        });
    }
    Ok((x, fnorm, iter, true, history, "converged".into()))
}

struct ForceMap<'a>(&'a HybridModel);

impl ResidualMap for ForceMap<'_> {
    fn dim(&self) -> usize {
        self.0.n_free_dof()
    }

    fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.to_free(&self.0.force(&self.0.from_free(x))?))
    }

    fn jvp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let u = self.0.from_free(x);
        let dv = self.0.from_free(v);
        Ok(self.0.to_free(&self.0.force_jacobian_apply(&u, &dv)?))
    }
}

/// Solves `F^H(u) = 0` on the free sites starting from `u0`.
pub fn solve_force_balance(
    model: &HybridModel,
    u0: &Displacement,
    precond: &Preconditioner,
    settings: &NewtonSettings,
) -> Result<SolverResult> {
    if model.scheme() != Scheme::Force {
        return Err(Error::InvalidParameter("solve_force_balance needs a force-mixing model".into()));
    }
    model.check_admissible(u0)?;
    let start = Instant::now();
    let (x, resid, iterations, converged, history, message) =
        newton_krylov(&ForceMap(model), model.to_free(u0), precond, settings)?;
    Ok(SolverResult {
        u_star: model.from_free(&x),
        iterations,
        residual_norm: resid,
        converged,
        stability_min_eig: None,
        wall_time: start.elapsed().as_secs_f64(),
        energy: None,
        history,
        message,
    })
}
