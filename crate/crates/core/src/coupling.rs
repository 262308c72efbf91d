//! The hybrid energy `E^H` (energy mixing) and hybrid force `F^H` (force
//! mixing), with their derivatives.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dislocation::{Case, ScrewPredictor};
use crate::error::{Error, Result};
use crate::kinematics::Kinematics;
use crate::lattice::{norm2, Displacement, Region, RegionDecomposition, ReferenceConfig, BALL_TOL};
use crate::site_potential::{StencilDomain, TaylorForce, TaylorSitePotential};
use crate::tb::{Positions, TbCluster, TbParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Energy,
    Force,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Energy => "energy",
            Scheme::Force => "force",
        })
    }
}

/// Largest slip-corrected strain allowed in a Taylor-evaluated stencil; larger
/// values mean the stencil straddles the branch cut near the core.
const MAX_MM_STRAIN_FRACTION: f64 = 0.25;

/// One site evaluated through a Taylor model: neighbour ids in stencil order
/// (`None` beyond the generated domain, where `u = 0`) and `ee(ℓ)`.
#[derive(Clone, Debug)]
struct MmSite {
    site: usize,
    nbrs: Vec<Option<usize>>,
    strain: Vec<f64>,
}

/// Everything needed to assemble `E^H` or `F^H`.
pub struct HybridModel {
    config: Arc<ReferenceConfig>,
    decomp: RegionDecomposition,
    params: TbParams,
    kin: Kinematics,
    case: Case,
    predictor: Option<ScrewPredictor>,
    scheme: Scheme,
    taylor_e: Option<Arc<TaylorSitePotential>>,
    taylor_f: Option<Arc<TaylorForce>>,
    /// Predictor values `u0` per site (zero for case P).
    u0: Displacement,
    /// `Λ^QM ∪ Λ^BUF`, ascending.
    cluster: Vec<usize>,
    /// Cluster-local indices of the QM sites.
    qm_local: Vec<usize>,
    mm: Vec<MmSite>,
    free: Vec<usize>,
    qm_ref: f64,
    mm_ref: f64,
}

/// Inputs for [`HybridModel::new`].
pub struct HybridInputs {
    pub config: Arc<ReferenceConfig>,
    pub decomp: RegionDecomposition,
    pub params: TbParams,
    pub kinematics: Kinematics,
    pub case: Case,
    pub predictor: Option<ScrewPredictor>,
    pub scheme: Scheme,
    pub taylor_e: Option<Arc<TaylorSitePotential>>,
    pub taylor_f: Option<Arc<TaylorForce>>,
}

fn collect_neighbours(
    config: &ReferenceConfig,
    domain: &StencilDomain,
    site: usize,
) -> Result<Vec<Option<usize>>> {
    let n = config
        .lattice_coords(site)
        .ok_or(Error::GeometryTooSmall { site })?;
    domain
        .coords
        .iter()
        .map(|c| {
            let m = [n[0] + c[0], n[1] + c[1]];
            match config.site_of(m) {
                Some(k) => Ok(Some(k)),
                None if norm2(config.spec().point(m)) > config.domain_radius() + BALL_TOL => Ok(None),
                // a missing site inside the domain is a defect: the Taylor
                // model does not apply there
                None => Err(Error::InvalidDecomposition(format!(
                    "MM site {site} sees the defect; increase R_QM"
                ))),
            }
        })
        .collect()
}

impl HybridModel {
    pub fn new(inp: HybridInputs) -> Result<Self> {
        let HybridInputs {
            config,
            decomp,
            params,
            kinematics: kin,
            case,
            predictor,
            scheme,
            taylor_e,
            taylor_f,
        } = inp;
        if case == Case::D && predictor.is_none() {
            return Err(Error::MissingPredictor);
        }
        let domain = match scheme {
            Scheme::Energy => {
                let t = taylor_e
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParameter("energy scheme needs a Taylor site potential".into()))?;
                if t.order < 2 {
                    return Err(Error::InvalidParameter("energy mixing requires k_E >= 2".into()));
                }
                if t.kinematics != kin {
                    return Err(Error::InvalidParameter("Taylor potential built for other kinematics".into()));
                }
                t.domain.clone()
            }
            Scheme::Force => {
                let t = taylor_f
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParameter("force scheme needs a Taylor force".into()))?;
                if t.order < 1 {
                    return Err(Error::InvalidParameter("force mixing requires k_F >= 1".into()));
                }
                if t.kinematics != kin {
                    return Err(Error::InvalidParameter("Taylor force built for other kinematics".into()));
                }
                t.domain.clone()
            }
        };
        if (domain.r_buf - decomp.r_buf).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "Taylor model built with R_BUF = {}, decomposition uses {}",
                domain.r_buf, decomp.r_buf
            )));
        }
        if decomp.labels().len() != config.len() {
            return Err(Error::Shape {
                expected: config.len(),
                got: decomp.labels().len(),
            });
        }
        let u0 = match (&predictor, case) {
            (Some(p), Case::D) => {
                p.validate(&config)?;
                p.displacement(&config)?
            }
            _ => Displacement::zeros(config.len(), kin.dof()),
        };
        if u0.dim() != kin.dof() {
            return Err(Error::InvalidParameter("case D needs anti-plane kinematics".into()));
        }
        let cluster = decomp.qm_cluster();
        if let Some(&far) = cluster
            .iter()
            .find(|&&s| config.radius_of(s) > config.domain_radius() + BALL_TOL)
        {
            return Err(Error::GeometryTooSmall { site: far });
        }
        let qm_local: Vec<usize> = cluster
            .iter()
            .enumerate()
            .filter(|(_, &s)| decomp.label(s) == Region::Qm)
            .map(|(i, _)| i)
            .collect();

        let mm_sites: Vec<usize> = match scheme {
            Scheme::Energy => (0..config.len())
                .filter(|&s| {
                    decomp.label(s) != Region::Qm
                        && config.radius_of(s) <= decomp.r_mm + decomp.r_buf + BALL_TOL
                })
                .collect(),
            Scheme::Force => decomp.mm_ids().to_vec(),
        };
        let mm = mm_sites
            .par_iter()
            .map(|&site| -> Result<MmSite> {
                let nbrs = collect_neighbours(&config, &domain, site)?;
                let strain = match case {
                    Case::P => vec![0.0; domain.len() * kin.dof()],
                    Case::D => {
                        let p = predictor.as_ref().expect("checked above");
                        let x = config.position(site);
                        let e = (0..domain.len())
                            .map(|k| p.strain(x, domain.offset(k)))
                            .collect::<Result<Vec<_>>>()?;
                        if e.iter().any(|v| v.abs() > MAX_MM_STRAIN_FRACTION * p.burgers) {
                            return Err(Error::InvalidDecomposition(format!(
                                "MM site {site} straddles the branch cut; increase R_QM"
                            )));
                        }
                        e
                    }
                };
                Ok(MmSite { site, nbrs, strain })
            })
            .collect::<Result<Vec<_>>>()?;
        let free: Vec<usize> = (0..config.len()).filter(|&s| decomp.is_free(s)).collect();

        let mut model = Self {
            config,
            decomp,
            params,
            kin,
            case,
            predictor,
            scheme,
            taylor_e,
            taylor_f,
            u0,
            cluster,
            qm_local,
            mm,
            free,
            qm_ref: 0.0,
            mm_ref: 0.0,
        };
        if scheme == Scheme::Energy {
            let zero = Displacement::zeros(model.config.len(), kin.dof());
            model.qm_ref = model.qm_energy(&zero)?;
            model.mm_ref = model.mm_energy(&zero)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ReferenceConfig {
        &self.config
    }

    pub fn config_arc(&self) -> Arc<ReferenceConfig> {
        self.config.clone()
    }

    pub fn decomposition(&self) -> &RegionDecomposition {
        &self.decomp
    }

    pub fn params(&self) -> &TbParams {
        &self.params
    }

    pub fn kinematics(&self) -> Kinematics {
        self.kin
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn case(&self) -> Case {
        self.case
    }

    pub fn predictor(&self) -> Option<&ScrewPredictor> {
        self.predictor.as_ref()
    }

    pub fn taylor_force(&self) -> Option<&Arc<TaylorForce>> {
        self.taylor_f.as_ref()
    }

    pub fn taylor_potential(&self) -> Option<&Arc<TaylorSitePotential>> {
        self.taylor_e.as_ref()
    }

    /// The predictor `u0` at every site.
    pub fn predictor_field(&self) -> &Displacement {
        &self.u0
    }

    /// Free sites `Λ^QM ∪ Λ^MM`, ascending.
    pub fn free_sites(&self) -> &[usize] {
        &self.free
    }

    pub fn n_free_dof(&self) -> usize {
        self.free.len() * self.kin.dof()
    }

    pub fn zero(&self) -> Displacement {
        Displacement::zeros(self.config.len(), self.kin.dof())
    }

    /// Errors with the first far-field site where `u` is nonzero.
    pub fn check_admissible(&self, u: &Displacement) -> Result<()> {
        if u.n_sites() != self.config.len() || u.dim() != self.kin.dof() {
            return Err(Error::Shape {
                expected: self.config.len() * self.kin.dof(),
                got: u.as_slice().len(),
            });
        }
        for s in 0..self.config.len() {
            if !self.decomp.is_free(s) && u.site(s).iter().any(|v| *v != 0.0) {
                return Err(Error::Inadmissible(s));
            }
        }
        Ok(())
    }

    /// Free-DOF vector of an admissible displacement.
    pub fn to_free(&self, u: &Displacement) -> Vec<f64> {
        self.free.iter().flat_map(|&s| u.site(s).iter().copied()).collect()
    }

    /// Displacement from a free-DOF vector, zero on `Λ^FF`.
    pub fn from_free(&self, x: &[f64]) -> Displacement {
        let d = self.kin.dof();
        let mut u = self.zero();
        for (i, &s) in self.free.iter().enumerate() {
            u.site_mut(s).copy_from_slice(&x[i * d..(i + 1) * d]);
        }
        u
    }

    fn cluster_state(&self, u: &Displacement) -> (Positions, Vec<f64>) {
        let d = self.kin.dof();
        let xs: Vec<[f64; 2]> = self.cluster.iter().map(|&s| self.config.position(s)).collect();
        let mut tot = Vec::with_capacity(self.cluster.len() * d);
        for &s in &self.cluster {
            for (a, b) in u.site(s).iter().zip(self.u0.site(s)) {
                tot.push(a + b);
            }
        }
        let pos = Positions::new(self.kin.embed_dim(), self.kin.place_all(&xs, &tot)).expect("consistent shapes");
        (pos, tot)
    }

    fn qm_weights(&self) -> Vec<(usize, f64)> {
        self.qm_local.iter().map(|&i| (i, 1.0)).collect()
    }

    fn qm_energy(&self, u: &Displacement) -> Result<f64> {
        let (pos, _) = self.cluster_state(u);
        let c = TbCluster::new(&pos, &self.params)?;
        Ok(c.weighted_site_energy(&self.params, &self.qm_weights()))
    }

    fn mm_argument(&self, t: &MmSite, u: &Displacement) -> Vec<f64> {
        let d = self.kin.dof();
        let ul = u.site(t.site);
        let mut g = t.strain.clone();
        for (k, nb) in t.nbrs.iter().enumerate() {
            for i in 0..d {
                let uk = nb.map_or(0.0, |n| u.site(n)[i]);
                g[k * d + i] += uk - ul[i];
            }
        }
        g
    }

    fn mm_energy(&self, u: &Displacement) -> Result<f64> {
        let pot = self.taylor_e.as_ref().expect("energy scheme");
        let vals = self
            .mm
            .par_iter()
            .map(|t| pot.eval(&self.mm_argument(t, u)))
            .collect::<Result<Vec<_>>>()?;
        Ok(vals.iter().sum())
    }

    fn require(&self, scheme: Scheme) -> Result<()> {
        if self.scheme != scheme {
            return Err(Error::InvalidParameter(format!(
                "operation needs the {scheme} scheme, model uses {}",
                self.scheme
            )));
        }
        Ok(())
    }

    /// `E^H(u)`.
    pub fn energy(&self, u: &Displacement) -> Result<f64> {
        self.require(Scheme::Energy)?;
        self.check_admissible(u)?;
        Ok((self.qm_energy(u)? - self.qm_ref) + (self.mm_energy(u)? - self.mm_ref))
    }

    /// `E^H(u)` and its gradient; far-field rows are zero.
    pub fn energy_and_gradient(&self, u: &Displacement) -> Result<(f64, Displacement)> {
        self.require(Scheme::Energy)?;
        self.check_admissible(u)?;
        let d = self.kin.dof();
        let ed = self.kin.embed_dim();
        let mut grad = self.zero();

        let (pos, tot) = self.cluster_state(u);
        let c = TbCluster::new(&pos, &self.params)?;
        let w = self.qm_weights();
        let e_qm = c.weighted_site_energy(&self.params, &w);
        let ge = c.weighted_gradient(&self.params, &w);
        let mut tmp = vec![0.0; d];
        for (i, &s) in self.cluster.iter().enumerate() {
            self.kin
                .pull_back(&tot[i * d..(i + 1) * d], &ge[i * ed..(i + 1) * ed], &mut tmp);
            for (g, t) in grad.site_mut(s).iter_mut().zip(&tmp) {
                *g += t;
            }
        }

        let pot = self.taylor_e.as_ref().expect("energy scheme");
        let parts = self
            .mm
            .par_iter()
            .map(|t| -> Result<(f64, Vec<f64>)> {
                let g = self.mm_argument(t, u);
                Ok((pot.eval(&g)?, pot.grad(&g)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut e_mm = 0.0;
        for (t, (e, gl)) in self.mm.iter().zip(parts) {
            e_mm += e;
            for (k, nb) in t.nbrs.iter().enumerate() {
                for i in 0..d {
                    let v = gl[k * d + i];
                    if let Some(n) = nb {
                        grad.site_mut(*n)[i] += v;
                    }
                    grad.site_mut(t.site)[i] -= v;
                }
            }
        }
        self.zero_far_field(&mut grad);
        Ok(((e_qm - self.qm_ref) + (e_mm - self.mm_ref), grad))
    }

    pub fn energy_gradient(&self, u: &Displacement) -> Result<Displacement> {
        Ok(self.energy_and_gradient(u)?.1)
    }

    fn zero_far_field(&self, v: &mut Displacement) {
        for s in 0..self.config.len() {
            if !self.decomp.is_free(s) {
                v.site_mut(s).iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    /// `F^H(u)`: buffered QM forces on `Λ^QM`, Taylor forces on `Λ^MM`, zero on `Λ^FF`.
    pub fn force(&self, u: &Displacement) -> Result<Displacement> {
        self.require(Scheme::Force)?;
        self.check_admissible(u)?;
        let mut f = self.zero();
        self.add_qm_forces(u, &mut f)?;
        let tf = self.taylor_f.as_ref().expect("force scheme");
        let rows = self
            .mm
            .par_iter()
            .map(|t| tf.eval(&self.mm_window(t, u, true)))
            .collect::<Result<Vec<_>>>()?;
        for (t, r) in self.mm.iter().zip(rows) {
            f.site_mut(t.site).copy_from_slice(&r);
        }
        Ok(f)
    }

    fn add_qm_forces(&self, u: &Displacement, out: &mut Displacement) -> Result<()> {
        let d = self.kin.dof();
        let ed = self.kin.embed_dim();
        let (pos, tot) = self.cluster_state(u);
        let g = TbCluster::new(&pos, &self.params)?.total_gradient(&self.params);
        for &i in &self.qm_local {
            let s = self.cluster[i];
            self.kin
                .pull_back(&tot[i * d..(i + 1) * d], &g[i * ed..(i + 1) * ed], out.site_mut(s));
        }
        Ok(())
    }

    /// The Taylor-force window at an MM site: `(u0 + u)` on `{ℓ} ∪ (ℓ + R)` for
    /// case P; slip-corrected `(0, e + D̃u)` for case D. With `affine = false`
    /// the strain offset is omitted (used for directional derivatives).
    fn mm_window(&self, t: &MmSite, u: &Displacement, affine: bool) -> Vec<f64> {
        let d = self.kin.dof();
        let mut w = vec![0.0; (t.nbrs.len() + 1) * d];
        match self.case {
            Case::P => {
                w[..d].copy_from_slice(u.site(t.site));
                for (k, nb) in t.nbrs.iter().enumerate() {
                    if let Some(n) = nb {
                        w[(k + 1) * d..(k + 2) * d].copy_from_slice(u.site(*n));
                    }
                }
            }
            Case::D => {
                let ul = u.site(t.site);
                for (k, nb) in t.nbrs.iter().enumerate() {
                    for i in 0..d {
                        let uk = nb.map_or(0.0, |n| u.site(n)[i]);
                        let e = if affine { t.strain[k * d + i] } else { 0.0 };
                        w[(k + 1) * d + i] = e + uk - ul[i];
                    }
                }
            }
        }
        w
    }

    /// Directional derivative of `F^H` at `u` along `v`: analytic on MM
    /// rows, central differences with amplitude `1e-6` on QM rows.
    pub fn force_jacobian_apply(&self, u: &Displacement, v: &Displacement) -> Result<Displacement> {
        self.require(Scheme::Force)?;
        self.check_admissible(u)?;
        let mut out = self.zero();
        let vmax = v.max_abs();
        if vmax == 0.0 {
            return Ok(out);
        }
        let mut v = v.clone();
        self.zero_far_field(&mut v);
        let h = 1e-6 / vmax;
        let up = self.shifted(u, &v, h);
        let um = self.shifted(u, &v, -h);
        let mut fp = self.zero();
        let mut fm = self.zero();
        self.add_qm_forces(&up, &mut fp)?;
        self.add_qm_forces(&um, &mut fm)?;
        for &i in &self.qm_local {
            let s = self.cluster[i];
            let (a, b) = (fp.site(s).to_vec(), fm.site(s).to_vec());
            for (o, (p, m)) in out.site_mut(s).iter_mut().zip(a.iter().zip(&b)) {
                *o = (p - m) / (2.0 * h);
            }
        }
        let tf = self.taylor_f.as_ref().expect("force scheme");
        let rows = self
            .mm
            .par_iter()
            .map(|t| tf.jac_apply(&self.mm_window(t, u, true), &self.mm_window(t, &v, false)))
            .collect::<Result<Vec<_>>>()?;
        for (t, r) in self.mm.iter().zip(rows) {
            out.site_mut(t.site).copy_from_slice(&r);
        }
        Ok(out)
    }

    fn shifted(&self, u: &Displacement, v: &Displacement, h: f64) -> Displacement {
        let vals = u.as_slice().iter().zip(v.as_slice()).map(|(a, b)| a + h * b).collect();
        Displacement::from_values(u.dim(), vals).expect("same shape")
    }

    /// `δ²E^H(u) v` by central differences of the analytic gradient, amplitude `1e-6`.
    pub fn energy_hessian_apply(&self, u: &Displacement, v: &Displacement) -> Result<Displacement> {
        self.require(Scheme::Energy)?;
        let vmax = v.max_abs();
        if vmax == 0.0 {
            return Ok(self.zero());
        }
        let mut v = v.clone();
        self.zero_far_field(&mut v);
        let h = 1e-6 / vmax;
        let gp = self.energy_gradient(&self.shifted(u, &v, h))?;
        let gm = self.energy_gradient(&self.shifted(u, &v, -h))?;
        let vals = gp.as_slice().iter().zip(gm.as_slice()).map(|(p, m)| (p - m) / (2.0 * h)).collect();
        Displacement::from_values(u.dim(), vals)
    }

    /// `⟨F^H(u), v⟩ = Σ_ℓ F^H_ℓ(u) · v(ℓ)`.
    pub fn force_pairing(&self, u: &Displacement, v: &Displacement) -> Result<f64> {
        let f = self.force(u)?;
        Ok(f.as_slice().iter().zip(v.as_slice()).map(|(a, b)| a * b).sum())
    }

    /// The residual of whichever scheme the model uses: `∇E^H` or `F^H`.
    pub fn residual(&self, u: &Displacement) -> Result<Displacement> {
        match self.scheme {
            Scheme::Energy => self.energy_gradient(u),
            Scheme::Force => self.force(u),
        }
    }
}

/// `E^H(u)`.
pub fn hybrid_energy(model: &HybridModel, u: &Displacement) -> Result<f64> {
    model.energy(u)
}

pub fn hybrid_energy_gradient(model: &HybridModel, u: &Displacement) -> Result<Displacement> {
    model.energy_gradient(u)
}

pub fn hybrid_force(model: &HybridModel, u: &Displacement) -> Result<Displacement> {
    model.force(u)
}

pub fn hybrid_force_jacobian_apply(model: &HybridModel, u: &Displacement, v: &Displacement) -> Result<Displacement> {
    model.force_jacobian_apply(u, v)
}
