//! Buffered site potentials and forces, the homogeneous potential `V_#` and
//! force `F_#` on the perfect lattice, and their Taylor expansions (the MM
//! model).

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kinematics::Kinematics;
use crate::lattice::{Displacement, LatticeSpec, Region, RegionDecomposition, ReferenceConfig, BALL_TOL};
use crate::tb::{Positions, TbCluster, TbParams};

/// Mixed-partial asymmetry above which a finite-difference Hessian is rejected.
pub const HESSIAN_ASYMMETRY_TOL: f64 = 1e-4;

/// Largest admissible zeroth-order force on the reference lattice.
pub const ZEROTH_FORCE_TOL: f64 = 1e-10;

/// The punctured perfect-lattice ball `R = B_RBUF ∩ (Λ_hom \ 0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StencilDomain {
    pub r_buf: f64,
    pub spec: LatticeSpec,
    /// Integer lattice coordinates of the offsets, lexicographic.
    pub coords: Vec<[i64; 2]>,
}

impl StencilDomain {
    pub fn new(spec: LatticeSpec, r_buf: f64) -> Self {
        let coords = spec
            .points_within([0.0, 0.0], r_buf)
            .into_iter()
            .filter(|n| *n != [0, 0])
            .collect();
        Self { r_buf, spec, coords }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn offset(&self, k: usize) -> [f64; 2] {
        self.spec.point(self.coords[k])
    }

    pub fn offsets(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|k| self.offset(k)).collect()
    }

    /// The homogeneous cluster `{0} ∪ R`, origin first.
    pub fn cluster_points(&self) -> Vec<[f64; 2]> {
        std::iter::once([0.0, 0.0]).chain(self.offsets()).collect()
    }

    /// Site ids of `ℓ + ρ` for every offset, or `None` where the site is absent.
    pub fn neighbours(&self, config: &ReferenceConfig, site: usize) -> Option<Vec<Option<usize>>> {
        let n = config.lattice_coords(site)?;
        Some(
            self.coords
                .iter()
                .map(|c| config.site_of([n[0] + c[0], n[1] + c[1]]))
                .collect(),
        )
    }
}

fn homogeneous_positions(domain: &StencilDomain, kin: Kinematics, g: &[f64]) -> Result<Positions> {
    let d = kin.dof();
    if g.len() != domain.len() * d {
        return Err(Error::Shape {
            expected: domain.len() * d,
            got: g.len(),
        });
    }
    let mut u = vec![0.0; d];
    u.extend_from_slice(g);
    Positions::new(kin.embed_dim(), kin.place_all(&domain.cluster_points(), &u))
}

/// `V_#(g)`: site energy of the origin of `{0} ∪ R` with offset `ρ` displaced
/// by `g_ρ` and the origin held fixed.
pub fn homogeneous_site_potential(
    domain: &StencilDomain,
    kin: Kinematics,
    params: &TbParams,
    g: &[f64],
) -> Result<f64> {
    let pos = homogeneous_positions(domain, kin, g)?;
    Ok(TbCluster::new(&pos, params)?.site_energy(params, 0))
}

/// `V_#(g)` and its gradient with respect to `g`.
pub fn homogeneous_site_potential_grad(
    domain: &StencilDomain,
    kin: Kinematics,
    params: &TbParams,
    g: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let pos = homogeneous_positions(domain, kin, g)?;
    let c = TbCluster::new(&pos, params)?;
    let e = c.site_energy(params, 0);
    let ge = c.site_energy_gradient(params, 0);
    let (ed, d) = (kin.embed_dim(), kin.dof());
    let mut out = vec![0.0; g.len()];
    for k in 0..domain.len() {
        kin.pull_back(
            &g[k * d..(k + 1) * d],
            &ge[(k + 1) * ed..(k + 2) * ed],
            &mut out[k * d..(k + 1) * d],
        );
    }
    Ok((e, out))
}

/// `F_#(w)`: band-energy gradient at the origin of the homogeneous cluster
/// with every site (origin first) displaced by `w`.
pub fn homogeneous_force(
    domain: &StencilDomain,
    kin: Kinematics,
    params: &TbParams,
    w: &[f64],
) -> Result<Vec<f64>> {
    let d = kin.dof();
    let n = domain.len() + 1;
    if w.len() != n * d {
        return Err(Error::Shape {
            expected: n * d,
            got: w.len(),
        });
    }
    let pos = Positions::new(kin.embed_dim(), kin.place_all(&domain.cluster_points(), w))?;
    let grad = TbCluster::new(&pos, params)?.total_gradient(params);
    let mut out = vec![0.0; d];
    kin.pull_back(&w[..d], &grad[..kin.embed_dim()], &mut out);
    Ok(out)
}

fn cluster_positions(
    config: &ReferenceConfig,
    kin: Kinematics,
    ids: &[usize],
    y_disp: &Displacement,
) -> Result<Positions> {
    let d = kin.dof();
    let xs: Vec<[f64; 2]> = ids.iter().map(|&i| config.position(i)).collect();
    let u: Vec<f64> = ids.iter().flat_map(|&i| y_disp.site(i).iter().copied()).collect();
    debug_assert_eq!(u.len(), ids.len() * d);
    Positions::new(kin.embed_dim(), kin.place_all(&xs, &u))
}

/// The cluster on which site `site` is evaluated: `Λ^QM ∪ Λ^BUF` for QM
/// sites, `B_RBUF(ℓ) ∩ Λ` otherwise.
pub fn buffer_cluster(
    decomp: &RegionDecomposition,
    config: &ReferenceConfig,
    site: usize,
) -> Result<Vec<usize>> {
    if decomp.label(site) == Region::Qm {
        return Ok(decomp.qm_cluster());
    }
    if config.radius_of(site) + decomp.r_buf > config.domain_radius() + BALL_TOL {
        return Err(Error::GeometryTooSmall { site });
    }
    Ok(config.sites_within(config.position(site), decomp.r_buf))
}

/// `V_ℓ^BUF` at total displacement `y_disp` (predictor included).
pub fn buffered_site_potential(
    decomp: &RegionDecomposition,
    config: &ReferenceConfig,
    kin: Kinematics,
    params: &TbParams,
    site: usize,
    y_disp: &Displacement,
) -> Result<f64> {
    let ids = buffer_cluster(decomp, config, site)?;
    let pos = cluster_positions(config, kin, &ids, y_disp)?;
    let local = ids.binary_search(&site).expect("site lies in its own cluster");
    Ok(TbCluster::new(&pos, params)?.site_energy(params, local))
}

/// `F_ℓ^BUF` at total displacement `y_disp`.
pub fn buffered_force(
    decomp: &RegionDecomposition,
    config: &ReferenceConfig,
    kin: Kinematics,
    params: &TbParams,
    site: usize,
    y_disp: &Displacement,
) -> Result<Vec<f64>> {
    let ids = buffer_cluster(decomp, config, site)?;
    let pos = cluster_positions(config, kin, &ids, y_disp)?;
    let local = ids.binary_search(&site).expect("site lies in its own cluster");
    let grad = TbCluster::new(&pos, params)?.total_gradient(params);
    let (e, d) = (kin.embed_dim(), kin.dof());
    let mut out = vec![0.0; d];
    kin.pull_back(y_disp.site(site), &grad[local * e..(local + 1) * e], &mut out);
    Ok(out)
}

/// Entries of a symmetric third-order tensor, stored once per sorted index triple.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SymTensor3 {
    pub entries: Vec<(u32, u32, u32, f64)>,
}

fn multiplicity3(i: u32, j: u32, k: u32) -> f64 {
    if i == j && j == k {
        1.0
    } else if i == j || j == k {
        3.0
    } else {
        6.0
    }
}

impl SymTensor3 {
    /// `Σ_ijk T_ijk g_i g_j g_k` over all (unsorted) index triples.
    fn cubic(&self, g: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(i, j, k, t)| multiplicity3(i, j, k) * t * g[i as usize] * g[j as usize] * g[k as usize])
            .sum()
    }

    /// Adds `scale · ∂/∂g (Σ_ijk T_ijk g_i g_j g_k)` to `out`.
    fn add_cubic_grad(&self, g: &[f64], scale: f64, out: &mut [f64]) {
        for &(i, j, k, t) in &self.entries {
            let c = scale * multiplicity3(i, j, k) * t;
            let (i, j, k) = (i as usize, j as usize, k as usize);
            out[i] += c * g[j] * g[k];
            out[j] += c * g[i] * g[k];
            out[k] += c * g[i] * g[j];
        }
    }
}

/// `T_k V_#`: order-k Taylor polynomial of the homogeneous site potential
/// about the perfect lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaylorSitePotential {
    pub order: usize,
    pub kinematics: Kinematics,
    pub domain: StencilDomain,
    pub c0: f64,
    /// `δV_#(0)`, indexed `k * dof + i` for offset `k`, component `i`.
    pub grad: Vec<f64>,
    /// `δ²V_#(0)`, dense row-major.
    pub hess: Vec<f64>,
    /// `δ³V_#(0)`, only for order 3.
    pub third: Option<SymTensor3>,
    pub drop_tol: f64,
    pub fd_step: f64,
    /// `max |H - Hᵀ|` of the raw finite-difference Hessian.
    pub hessian_asymmetry: f64,
}

/// Step used for third-order differences, relative to `fd_step`.
const THIRD_ORDER_STEP_FACTOR: f64 = 10.0;

fn unit(n: usize, i: usize, h: f64) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = h;
    v
}

fn symmetrize(mut m: Vec<f64>, n: usize, drop_tol: f64) -> (Vec<f64>, f64) {
    let mut asym = 0.0f64;
    for a in 0..n {
        for b in a + 1..n {
            let (x, y) = (m[a * n + b], m[b * n + a]);
            asym = asym.max((x - y).abs());
            let s = 0.5 * (x + y);
            m[a * n + b] = s;
            m[b * n + a] = s;
        }
    }
    for v in m.iter_mut() {
        if v.abs() < drop_tol {
            *v = 0.0;
        }
    }
    (m, asym)
}

/// Second derivatives `∂²f/∂x_b∂x_c` at 0 of a vector field `f: R^n -> R^m`
/// by central second differences, for every pair `b <= c`.
fn second_differences(
    n: usize,
    h: f64,
    f: impl Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    center: &[f64],
) -> Result<Vec<(usize, usize, Vec<f64>)>> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|b| (b..n).map(move |c| (b, c))).collect();
    pairs
        .par_iter()
        .map(|&(b, c)| -> Result<(usize, usize, Vec<f64>)> {
            let d2: Vec<f64> = if b == c {
                let fp = f(&unit(n, b, h))?;
                let fm = f(&unit(n, b, -h))?;
                fp.iter()
                    .zip(&fm)
                    .zip(center)
                    .map(|((p, m), z)| (p - 2.0 * z + m) / (h * h))
                    .collect()
            } else {
                let mut vals = Vec::with_capacity(4);
                for (sb, sc) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    let mut x = vec![0.0; n];
                    x[b] = sb * h;
                    x[c] = sc * h;
                    vals.push(f(&x)?);
                }
                (0..vals[0].len())
                    .map(|a| (vals[0][a] - vals[1][a] - vals[2][a] + vals[3][a]) / (4.0 * h * h))
                    .collect()
            };
            Ok((b, c, d2))
        })
        .collect()
}

/// Builds `T_k V_#` for `k ∈ {2, 3}`: analytic gradient at 0, Hessian by
/// central differences of the analytic gradient, third order by second
/// differences of the analytic gradient.
pub fn build_taylor_potential(
    order: usize,
    kin: Kinematics,
    params: &TbParams,
    spec: LatticeSpec,
    r_buf: f64,
    fd_step: f64,
    drop_tol: f64,
) -> Result<TaylorSitePotential> {
    if !(2..=3).contains(&order) {
        return Err(Error::Unsupported(format!("Taylor potential of order {order}")));
    }
    if !(fd_step > 0.0) {
        return Err(Error::InvalidParameter(format!("fd_step must be > 0, got {fd_step}")));
    }
    let domain = StencilDomain::new(spec, r_buf);
    let n = domain.len() * kin.dof();
    let grad_at = |g: &[f64]| homogeneous_site_potential_grad(&domain, kin, params, g).map(|r| r.1);
    let (c0, grad) = homogeneous_site_potential_grad(&domain, kin, params, &vec![0.0; n])?;
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|b| -> Result<Vec<f64>> {
            let gp = grad_at(&unit(n, b, fd_step))?;
            let gm = grad_at(&unit(n, b, -fd_step))?;
            Ok(gp.iter().zip(&gm).map(|(p, m)| (p - m) / (2.0 * fd_step)).collect())
        })
        .collect::<Result<_>>()?;
    let mut raw = vec![0.0; n * n];
    for (b, col) in cols.iter().enumerate() {
        for a in 0..n {
            raw[a * n + b] = col[a];
        }
    }
    let (hess, asym) = symmetrize(raw, n, drop_tol);
    if asym > HESSIAN_ASYMMETRY_TOL {
        return Err(Error::DerivativeInconsistency(asym));
    }
    let third = if order == 3 {
        let mut entries = Vec::new();
        for (b, c, d2) in second_differences(n, THIRD_ORDER_STEP_FACTOR * fd_step, grad_at, &grad)? {
            // T is fully symmetric; keep one representative per sorted triple
            entries.extend(
                (0..=b)
                    .filter(|&a| d2[a].abs() >= drop_tol)
                    .map(|a| (a as u32, b as u32, c as u32, d2[a])),
            );
        }
        entries.sort_by_key(|e| (e.0, e.1, e.2));
        Some(SymTensor3 { entries })
    } else {
        None
    };
    // the linear term is kept in full: it must cancel the QM forces exactly at the reference
    Ok(TaylorSitePotential {
        order,
        kinematics: kin,
        domain,
        c0,
        grad,
        hess,
        third,
        drop_tol,
        fd_step,
        hessian_asymmetry: asym,
    })
}

impl TaylorSitePotential {
    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    fn check(&self, g: &[f64]) -> Result<()> {
        if g.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: g.len(),
            });
        }
        Ok(())
    }

    fn hess_apply(&self, g: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|a| self.hess[a * n..(a + 1) * n].iter().zip(g).map(|(h, x)| h * x).sum())
            .collect()
    }

    /// `c0 + δV·g + ½ δ²V[g,g] (+ ⅙ δ³V[g,g,g])`.
    pub fn eval(&self, g: &[f64]) -> Result<f64> {
        self.check(g)?;
        let hg = self.hess_apply(g);
        let mut v = self.c0;
        for a in 0..g.len() {
            v += (self.grad[a] + 0.5 * hg[a]) * g[a];
        }
        if let Some(t) = &self.third {
            v += t.cubic(g) / 6.0;
        }
        Ok(v)
    }

    /// Exact gradient of [`Self::eval`].
    pub fn grad(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check(g)?;
        let mut out = self.hess_apply(g);
        for (o, c) in out.iter_mut().zip(&self.grad) {
            *o += c;
        }
        if let Some(t) = &self.third {
            t.add_cubic_grad(g, 1.0 / 6.0, &mut out);
        }
        Ok(out)
    }

    /// Number of stored nonzero coefficients.
    pub fn nnz(&self) -> usize {
        self.grad.iter().chain(&self.hess).filter(|v| **v != 0.0).count()
            + self.third.as_ref().map_or(0, |t| t.entries.len())
    }
}

/// `T_k V_#` evaluated through the free functions named after the operations.
pub fn eval_taylor(pot: &TaylorSitePotential, g: &[f64]) -> Result<f64> {
    pot.eval(g)
}

pub fn grad_taylor(pot: &TaylorSitePotential, g: &[f64]) -> Result<Vec<f64>> {
    pot.grad(g)
}

/// Entries of a per-component symmetric second-order tensor, stored once per
/// sorted index pair.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SymTensor2 {
    /// `(component, b, c, value)` with `b <= c`.
    pub entries: Vec<(u32, u32, u32, f64)>,
}

/// `T_k F_#`: order-k Taylor polynomial of the homogeneous force. The window
/// `w` lists the origin first, then the offsets of the stencil domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaylorForce {
    pub order: usize,
    pub kinematics: Kinematics,
    pub domain: StencilDomain,
    /// `δF_#(0)`, `dof × (|R|+1)·dof`, row-major.
    pub jac: Vec<f64>,
    pub second: Option<SymTensor2>,
    pub drop_tol: f64,
    pub fd_step: f64,
    /// `max |F_#(0)|`.
    pub zeroth: f64,
    /// `max |Σ_σ δF_#(0)_σ|` before the acoustic sum rule was imposed.
    pub asr_residual: f64,
}

/// Builds `T_k F_#` for `k ∈ {1, 2}` by central differences of the analytic
/// homogeneous force. The acoustic sum rule `Σ_σ jac(σ) = 0` is imposed on
/// the origin block afterwards.
pub fn build_taylor_force(
    order: usize,
    kin: Kinematics,
    params: &TbParams,
    spec: LatticeSpec,
    r_buf: f64,
    fd_step: f64,
    drop_tol: f64,
) -> Result<TaylorForce> {
    if !(1..=2).contains(&order) {
        return Err(Error::Unsupported(format!("Taylor force of order {order}")));
    }
    if !(fd_step > 0.0) {
        return Err(Error::InvalidParameter(format!("fd_step must be > 0, got {fd_step}")));
    }
    let domain = StencilDomain::new(spec, r_buf);
    let d = kin.dof();
    let n = (domain.len() + 1) * d;
    let force_at = |w: &[f64]| homogeneous_force(&domain, kin, params, w);
    let f0 = force_at(&vec![0.0; n])?;
    let zeroth = f0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if zeroth > ZEROTH_FORCE_TOL {
        return Err(Error::NonEquilibriumReference(zeroth));
    }
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|b| -> Result<Vec<f64>> {
            let fp = force_at(&unit(n, b, fd_step))?;
            let fm = force_at(&unit(n, b, -fd_step))?;
            Ok(fp.iter().zip(&fm).map(|(p, m)| (p - m) / (2.0 * fd_step)).collect())
        })
        .collect::<Result<_>>()?;
    let mut jac = vec![0.0; d * n];
    for (b, col) in cols.iter().enumerate() {
        for a in 0..d {
            jac[a * n + b] = if col[a].abs() < drop_tol { 0.0 } else { col[a] };
        }
    }
    let mut asr_residual = 0.0f64;
    for a in 0..d {
        for c in 0..d {
            let s: f64 = (0..=domain.len()).map(|k| jac[a * n + k * d + c]).sum();
            asr_residual = asr_residual.max(s.abs());
            jac[a * n + c] -= s;
        }
    }
    let second = if order == 2 {
        let mut entries = Vec::new();
        for (b, c, d2) in second_differences(n, THIRD_ORDER_STEP_FACTOR * fd_step, force_at, &f0)? {
            entries.extend(
                d2.iter()
                    .enumerate()
                    .filter(|(_, v)| v.abs() >= drop_tol)
                    .map(|(a, v)| (a as u32, b as u32, c as u32, *v)),
            );
        }
        Some(SymTensor2 { entries })
    } else {
        None
    };
    Ok(TaylorForce {
        order,
        kinematics: kin,
        domain,
        jac,
        second,
        drop_tol,
        fd_step,
        zeroth,
        asr_residual,
    })
}

impl TaylorForce {
    pub fn window_len(&self) -> usize {
        (self.domain.len() + 1) * self.kinematics.dof()
    }

    fn check(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.window_len() {
            return Err(Error::Shape {
                expected: self.window_len(),
                got: w.len(),
            });
        }
        Ok(())
    }

    /// `δF_#(0) w (+ ½ δ²F_#(0)[w, w])`.
    pub fn eval(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check(w)?;
        let n = self.window_len();
        let d = self.kinematics.dof();
        let mut out: Vec<f64> = (0..d)
            .map(|a| self.jac[a * n..(a + 1) * n].iter().zip(w).map(|(j, x)| j * x).sum())
            .collect();
        if let Some(s) = &self.second {
            for &(a, b, c, t) in &s.entries {
                let m = if b == c { 0.5 } else { 1.0 };
                out[a as usize] += m * t * w[b as usize] * w[c as usize];
            }
        }
        Ok(out)
    }

    /// Directional derivative of [`Self::eval`] at `w` along `v`.
    pub fn jac_apply(&self, w: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check(w)?;
        self.check(v)?;
        let n = self.window_len();
        let d = self.kinematics.dof();
        let mut out: Vec<f64> = (0..d)
            .map(|a| self.jac[a * n..(a + 1) * n].iter().zip(v).map(|(j, x)| j * x).sum())
            .collect();
        if let Some(s) = &self.second {
            for &(a, b, c, t) in &s.entries {
                let (b, c) = (b as usize, c as usize);
                let m = if b == c { 0.5 } else { 1.0 };
                out[a as usize] += m * t * (w[b] * v[c] + w[c] * v[b]);
            }
        }
        Ok(out)
    }

    /// Jacobian block `∂F_#/∂w_σ` for window slot `slot` (0 is the origin).
    pub fn block(&self, slot: usize) -> Vec<f64> {
        let d = self.kinematics.dof();
        let n = self.window_len();
        let mut b = vec![0.0; d * d];
        for a in 0..d {
            for c in 0..d {
                b[a * d + c] = self.jac[a * n + slot * d + c];
            }
        }
        b
    }
}

pub fn eval_taylor_force(tf: &TaylorForce, w: &[f64]) -> Result<Vec<f64>> {
    tf.eval(w)
}

#[derive(Serialize)]
struct CacheKey<'a> {
    version: u32,
    kind: &'a str,
    params: &'a TbParams,
    kinematics: Kinematics,
    spec: LatticeSpec,
    r_buf: f64,
    order: usize,
    fd_step: f64,
    drop_tol: f64,
}

/// Settings shared by every coefficient build.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaylorSettings {
    pub fd_step: f64,
    pub drop_tol: f64,
}

impl Default for TaylorSettings {
    fn default() -> Self {
        Self {
            fd_step: 1e-4,
            drop_tol: 1e-10,
        }
    }
}

/// Content-addressed cache of Taylor coefficients: in memory, and optionally
/// as JSON files in a directory. Builds are serialized so that concurrent
/// first requests compute each entry once.
#[derive(Default)]
pub struct CoefficientCache {
    dir: Option<PathBuf>,
    potentials: Mutex<HashMap<String, Arc<TaylorSitePotential>>>,
    forces: Mutex<HashMap<String, Arc<TaylorForce>>>,
}

impl CoefficientCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            ..Self::default()
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Hex content hash identifying one coefficient set.
    #[allow(clippy::too_many_arguments)]
    pub fn key(
        kind: &str,
        params: &TbParams,
        kin: Kinematics,
        spec: LatticeSpec,
        r_buf: f64,
        order: usize,
        settings: &TaylorSettings,
    ) -> String {
        let key = CacheKey {
            version: 1,
            kind,
            params,
            kinematics: kin,
            spec,
            r_buf,
            order,
            fd_step: settings.fd_step,
            drop_tol: settings.drop_tol,
        };
        let bytes = serde_json::to_vec(&key).expect("cache key serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn load<T: for<'de> Deserialize<'de>>(&self, kind: &str, key: &str) -> Option<T> {
        let path = self.dir.as_ref()?.join(format!("{kind}-{key}.json"));
        let text = std::fs::read_to_string(path).ok()?;
        serde_json::from_str(&text).ok()
    }

    fn store<T: Serialize>(&self, kind: &str, key: &str, value: &T) -> Result<()> {
        if let Some(dir) = &self.dir {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("{kind}-{key}.json"));
            let tmp = dir.join(format!(".{kind}-{key}.json.tmp"));
            std::fs::write(&tmp, serde_json::to_vec(value)?)?;
            std::fs::rename(tmp, path)?;
        }
        Ok(())
    }

    pub fn potential(
        &self,
        order: usize,
        kin: Kinematics,
        params: &TbParams,
        spec: LatticeSpec,
        r_buf: f64,
        settings: &TaylorSettings,
    ) -> Result<Arc<TaylorSitePotential>> {
        let key = Self::key("potential", params, kin, spec, r_buf, order, settings);
        let mut map = self.potentials.lock().expect("cache lock");
        if let Some(p) = map.get(&key) {
            return Ok(p.clone());
        }
        let pot = match self.load::<TaylorSitePotential>("potential", &key) {
            Some(p) => p,
            None => {
                let p = build_taylor_potential(order, kin, params, spec, r_buf, settings.fd_step, settings.drop_tol)?;
                tracing::debug!(order, r_buf, nnz = p.nnz(), "built Taylor site potential");
                self.store("potential", &key, &p)?;
                p
            }
        };
        let pot = Arc::new(pot);
        map.insert(key, pot.clone());
        Ok(pot)
    }

    pub fn force(
        &self,
        order: usize,
        kin: Kinematics,
        params: &TbParams,
        spec: LatticeSpec,
        r_buf: f64,
        settings: &TaylorSettings,
    ) -> Result<Arc<TaylorForce>> {
        let key = Self::key("force", params, kin, spec, r_buf, order, settings);
        let mut map = self.forces.lock().expect("cache lock");
        if let Some(f) = map.get(&key) {
            return Ok(f.clone());
        }
        let tf = match self.load::<TaylorForce>("force", &key) {
            Some(f) => f,
            None => {
                let f = build_taylor_force(order, kin, params, spec, r_buf, settings.fd_step, settings.drop_tol)?;
                tracing::debug!(order, r_buf, asr = f.asr_residual, "built Taylor force");
                self.store("force", &key, &f)?;
                f
            }
        };
        let tf = Arc::new(tf);
        map.insert(key, tf.clone());
        Ok(tf)
    }
}
