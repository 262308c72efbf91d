use std::sync::Arc;
use std::time::Instant;

use super::{lbfgs, LbfgsSettings, Objective, Preconditioner, SolverResult};
use crate::dislocation::ScrewPredictor;
use crate::error::{Error, Result};
use crate::kinematics::Kinematics;
use crate::lattice::{Displacement, ReferenceConfig, BALL_TOL};
use crate::tb::{Positions, TbCluster, TbParams};

/// Full tight-binding model on the whole reference domain with sites beyond
/// `free_radius` clamped at the predictor (or at the lattice for point defects).
pub struct AtmModel {
    config: Arc<ReferenceConfig>,
    params: TbParams,
    kin: Kinematics,
    free_radius: f64,
    free: Vec<usize>,
    u0: Displacement,
    e_ref: f64,
}

impl AtmModel {
    pub fn new(
        config: Arc<ReferenceConfig>,
        params: TbParams,
        kin: Kinematics,
        free_radius: f64,
        predictor: Option<&ScrewPredictor>,
    ) -> Result<Self> {
        params.validate()?;
        if !(free_radius > 0.0) || free_radius + params.r_cut > config.domain_radius() + BALL_TOL {
            return Err(Error::config(
                "reference.free_radius",
                format!(
                    "need 0 < free_radius <= domain radius - r_cut = {}",
                    config.domain_radius() - params.r_cut
                ),
            ));
        }
        let u0 = match predictor {
            Some(p) => {
                if kin.dof() != 1 {
                    return Err(Error::InvalidParameter("a screw predictor needs anti-plane kinematics".into()));
                }
                p.validate(&config)?;
                p.displacement(&config)?
            }
            None => Displacement::zeros(config.len(), kin.dof()),
        };
        let free = (0..config.len())
            .filter(|&s| config.radius_of(s) <= free_radius + BALL_TOL)
            .collect();
        let mut m = Self {
            config,
            params,
            kin,
            free_radius,
            free,
            u0,
            e_ref: 0.0,
        };
        m.e_ref = m.cluster(&m.zero())?.band_energy(&m.params);
        Ok(m)
    }

    pub fn config(&self) -> &ReferenceConfig {
        &self.config
    }

    pub fn kinematics(&self) -> Kinematics {
        self.kin
    }

    pub fn free_radius(&self) -> f64 {
        self.free_radius
    }

    pub fn free_sites(&self) -> &[usize] {
        &self.free
    }

    pub fn zero(&self) -> Displacement {
        Displacement::zeros(self.config.len(), self.kin.dof())
    }

    pub fn to_free(&self, u: &Displacement) -> Vec<f64> {
        self.free.iter().flat_map(|&s| u.site(s).iter().copied()).collect()
    }

    pub fn from_free(&self, x: &[f64]) -> Displacement {
        let d = self.kin.dof();
        let mut u = self.zero();
        for (i, &s) in self.free.iter().enumerate() {
            u.site_mut(s).copy_from_slice(&x[i * d..(i + 1) * d]);
        }
        u
    }

    fn total(&self, u: &Displacement) -> Vec<f64> {
        u.as_slice().iter().zip(self.u0.as_slice()).map(|(a, b)| a + b).collect()
    }

    fn cluster(&self, u: &Displacement) -> Result<TbCluster> {
        let tot = self.total(u);
        let pos = Positions::new(self.kin.embed_dim(), self.kin.place_all(self.config.sites(), &tot))?;
        TbCluster::new(&pos, &self.params)
    }

    /// `E(u) - E(0)` over the whole domain.
    pub fn energy(&self, u: &Displacement) -> Result<f64> {
        Ok(self.cluster(u)?.band_energy(&self.params) - self.e_ref)
    }

    /// Energy and gradient; clamped rows are zero.
    pub fn energy_and_gradient(&self, u: &Displacement) -> Result<(f64, Displacement)> {
        let c = self.cluster(u)?;
        let e = c.band_energy(&self.params) - self.e_ref;
        let g = c.total_gradient(&self.params);
        let tot = self.total(u);
        let (d, ed) = (self.kin.dof(), self.kin.embed_dim());
        let mut out = self.zero();
        for &s in &self.free {
            self.kin
                .pull_back(&tot[s * d..(s + 1) * d], &g[s * ed..(s + 1) * ed], out.site_mut(s));
        }
        Ok((e, out))
    }
}

impl Objective for AtmModel {
    fn dim(&self) -> usize {
        self.free.len() * self.kin.dof()
    }

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self.energy_and_gradient(&self.from_free(x)) {
            Ok((e, g)) => Ok((e, self.to_free(&g))),
            Err(Error::Accumulation { .. }) => Ok((f64::INFINITY, vec![0.0; x.len()])),
            Err(e) => Err(e),
        }
    }
}

/// Relaxes the full tight-binding model from `u0`. The result is the
/// surrogate for the exact equilibrium in all error measurements.
pub fn reference_solve_atm(
    model: &AtmModel,
    u0: &Displacement,
    precond: &Preconditioner,
    settings: &LbfgsSettings,
) -> Result<SolverResult> {
    for s in 0..model.config.len() {
        if model.config.radius_of(s) > model.free_radius + BALL_TOL && u0.site(s).iter().any(|v| *v != 0.0) {
            return Err(Error::Inadmissible(s));
        }
    }
    let start = Instant::now();
    let (x, f, gnorm, iterations, converged, history, message) =
        lbfgs(model, model.to_free(u0), precond, settings)?;
    tracing::info!(iterations, residual = gnorm, converged, "reference solve");
    Ok(SolverResult {
        u_star: model.from_free(&x),
        iterations,
        residual_norm: gnorm,
        converged,
        stability_min_eig: None,
        wall_time: start.elapsed().as_secs_f64(),
        energy: Some(f),
        history,
        message,
    })
}
