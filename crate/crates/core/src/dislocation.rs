//! Anti-plane screw dislocation: the far-field predictor `u0`, the slip
//! operators and the slip-corrected elastic strain `e_ρ(ℓ)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Displacement, LatticeSpec, ReferenceConfig};
use crate::site_potential::StencilDomain;

/// Distance from the branch cut below which a point counts as lying on it.
const CUT_TOL: f64 = 1e-12;

/// Which defect class a model describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    /// Point defects: no predictor, `ee = 0`.
    P,
    /// Dislocation: anti-plane screw predictor plus corrector.
    D,
}

/// `u0(x) = (b3/2π) arg(x - x̂)` with `arg ∈ (0, 2π)` and the branch cut
/// `{x2 = x̂2, x1 >= x̂1}`. For a pure screw the in-plane Burgers vector
/// vanishes, so no core regularisation is needed and `ξ(x) = x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScrewPredictor {
    pub burgers: f64,
    pub core: [f64; 2],
    /// `r̂`, the core radius entering `Ω_Γ`.
    pub core_radius: f64,
}

impl Default for ScrewPredictor {
    /// Unit Burgers vector, core at the barycentre of the triangle with
    /// vertices `0`, `a1`, `a2`, `r̂ = 2`.
    fn default() -> Self {
        let s = LatticeSpec::triangular();
        let (a, b) = (s.point([1, 0]), s.point([0, 1]));
        Self {
            burgers: 1.0,
            core: [(a[0] + b[0]) / 3.0, (a[1] + b[1]) / 3.0],
            core_radius: 2.0,
        }
    }
}

impl ScrewPredictor {
    /// Checks that the core is off-lattice and no lattice site of `config`
    /// lies on the branch cut.
    pub fn validate(&self, config: &ReferenceConfig) -> Result<()> {
        if !(self.burgers > 0.0) {
            return Err(Error::config("dislocation.burgers", "must be positive"));
        }
        if config.spec().lattice_coords(self.core).is_some() {
            return Err(Error::InvalidGeometry("dislocation core sits on a lattice site".into()));
        }
        for &x in config.sites() {
            if self.on_cut(x) {
                return Err(Error::BranchCut { x: x[0], y: x[1] });
            }
        }
        Ok(())
    }

    fn on_cut(&self, x: [f64; 2]) -> bool {
        (x[1] - self.core[1]).abs() < CUT_TOL && x[0] >= self.core[0] - CUT_TOL
    }

    /// `arg(x - x̂) ∈ (0, 2π)`.
    fn angle(&self, x: [f64; 2]) -> Result<f64> {
        if self.on_cut(x) {
            return Err(Error::BranchCut { x: x[0], y: x[1] });
        }
        let t = (x[1] - self.core[1]).atan2(x[0] - self.core[0]);
        Ok(if t <= 0.0 { t + 2.0 * PI } else { t })
    }

    pub fn u0(&self, x: [f64; 2]) -> Result<f64> {
        Ok(self.burgers * self.angle(x)? / (2.0 * PI))
    }

    /// `S0 u0`: `u0` with `b3` subtracted below the cut line, i.e. the branch
    /// of `arg` cut along `{x2 = x̂2, x1 < x̂1}` instead.
    pub fn s0_u0(&self, x: [f64; 2]) -> Result<f64> {
        let u = self.u0(x)?;
        Ok(if x[1] < self.core[1] { u - self.burgers } else { u })
    }

    /// `ℓ ∈ Ω_Γ = {x1 > x̂1 + r̂ + b1}` (`b1 = 0` for a screw).
    pub fn in_omega(&self, x: [f64; 2]) -> bool {
        x[0] > self.core[0] + self.core_radius
    }

    /// `e_ρ(ℓ)`: slip-corrected difference on `Ω_Γ`, plain `D_ρ u0` elsewhere.
    pub fn strain(&self, x: [f64; 2], rho: [f64; 2]) -> Result<f64> {
        let y = [x[0] + rho[0], x[1] + rho[1]];
        if self.in_omega(x) {
            Ok(self.s0_u0(y)? - self.s0_u0(x)?)
        } else {
            Ok(self.u0(y)? - self.u0(x)?)
        }
    }

    /// `u0` at every site of `config`, as a one-component displacement.
    pub fn displacement(&self, config: &ReferenceConfig) -> Result<Displacement> {
        let values = config.sites().iter().map(|&x| self.u0(x)).collect::<Result<Vec<_>>>()?;
        Displacement::from_values(1, values)
    }
}

/// `screw_u0` as a free function.
pub fn screw_u0(x: [f64; 2], pred: &ScrewPredictor) -> Result<f64> {
    pred.u0(x)
}

/// The slip operator `S`. With no in-plane Burgers component it is the identity.
pub fn slip(u: &Displacement, _pred: &ScrewPredictor) -> Displacement {
    u.clone()
}

/// The adjoint `S*`, again the identity for a pure screw.
pub fn slip_adjoint(u: &Displacement, _pred: &ScrewPredictor) -> Displacement {
    u.clone()
}

/// `e_ρ(ℓ)` tabulated for every site of a configuration and every perfect
/// lattice offset with `|ρ| <= r_stencil`.
#[derive(Clone, Debug)]
pub struct ElasticStrainField {
    pub offsets: StencilDomain,
    /// Row-major, `values[site * offsets.len() + k]`.
    values: Vec<f64>,
}

pub fn elastic_strain(
    config: &ReferenceConfig,
    pred: &ScrewPredictor,
    r_stencil: f64,
) -> Result<ElasticStrainField> {
    let offsets = StencilDomain::new(*config.spec(), r_stencil);
    let rhos = offsets.offsets();
    let mut values = Vec::with_capacity(config.len() * rhos.len());
    for &x in config.sites() {
        for &rho in &rhos {
            values.push(pred.strain(x, rho)?);
        }
    }
    Ok(ElasticStrainField { offsets, values })
}

impl ElasticStrainField {
    /// `(e_ρ(ℓ))_ρ` for one site, in offset order.
    pub fn at(&self, site: usize) -> &[f64] {
        let n = self.offsets.len();
        &self.values[site * n..(site + 1) * n]
    }

    /// `max_ρ |e_ρ(ℓ)| / |ρ|`.
    pub fn scaled_max(&self, site: usize) -> f64 {
        self.at(site)
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let r = self.offsets.offset(k);
                e.abs() / r[0].hypot(r[1])
            })
            .fold(0.0, f64::max)
    }

    /// Writes `site,x,y,rho_x,rho_y,e` rows.
    pub fn write_csv<W: std::io::Write>(&self, config: &ReferenceConfig, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["site", "x", "y", "rho_x", "rho_y", "e"])?;
        for site in 0..config.len() {
            let x = config.position(site);
            for (k, e) in self.at(site).iter().enumerate() {
                let r = self.offsets.offset(k);
                w.write_record(&[
                    site.to_string(),
                    x[0].to_string(),
                    x[1].to_string(),
                    r[0].to_string(),
                    r[1].to_string(),
                    e.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// The argument `ee(ℓ) + D̃u(ℓ)` fed to site potentials, over the offsets of
/// `domain`: `Du(ℓ)` for case P, `e(ℓ) + D̃u(ℓ)` for case D.
pub fn unified_argument(
    config: &ReferenceConfig,
    domain: &StencilDomain,
    site: usize,
    u: &Displacement,
    case: Case,
    pred: Option<&ScrewPredictor>,
) -> Result<Vec<f64>> {
    let d = u.dim();
    let nbrs = domain
        .neighbours(config, site)
        .ok_or(Error::GeometryTooSmall { site })?;
    let ul = u.site(site);
    let mut g = Vec::with_capacity(nbrs.len() * d);
    for k in &nbrs {
        let k = k.ok_or(Error::GeometryTooSmall { site })?;
        g.extend(u.site(k).iter().zip(ul).map(|(a, b)| a - b));
    }
    if case == Case::D {
        let pred = pred.ok_or(Error::MissingPredictor)?;
        let x = config.position(site);
        for (k, gk) in g.iter_mut().enumerate() {
            *gk += pred.strain(x, domain.offset(k))?;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_reference, DefectKind};

    #[test]
    fn branch_jump_equals_burgers() {
        let p = ScrewPredictor::default();
        let y = p.core[1];
        let above = p.u0([10.0, y + 1e-9]).unwrap();
        let below = p.u0([10.0, y - 1e-9]).unwrap();
        assert!(((below - above) - p.burgers).abs() < 1e-8);
        assert!(matches!(p.u0([3.0, y]), Err(Error::BranchCut { .. })));
    }

    #[test]
    fn far_field_angle() {
        let p = ScrewPredictor::default();
        let theta: f64 = 2.0;
        let x = [p.core[0] + 1e6 * theta.cos(), p.core[1] + 1e6 * theta.sin()];
        assert!((p.u0(x).unwrap() - theta / (2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn default_core_is_valid() {
        let cfg = build_reference(LatticeSpec::triangular(), 6.0, DefectKind::Screw, 1.0).unwrap();
        ScrewPredictor::default().validate(&cfg).unwrap();
    }

    #[test]
    fn strain_smooth_across_cut_in_omega() {
        let p = ScrewPredictor::default();
        let rho = [0.5, 3f64.sqrt() / 2.0];
        let y = p.core[1];
        let a = p.strain([8.0, y - 0.3], rho).unwrap();
        let b = p.strain([8.0, y + 0.3 - 3f64.sqrt() / 2.0], rho).unwrap();
        assert!(a.abs() < 0.1 && b.abs() < 0.1);
    }

    #[test]
    fn missing_predictor() {
        let cfg = build_reference(LatticeSpec::triangular(), 6.0, DefectKind::Screw, 1.0).unwrap();
        let dom = StencilDomain::new(LatticeSpec::triangular(), 1.1);
        let u = Displacement::zeros(cfg.len(), 1);
        let site = cfg.site_of([0, 0]).unwrap();
        assert!(matches!(
            unified_argument(&cfg, &dom, site, &u, Case::D, None),
            Err(Error::MissingPredictor)
        ));
        let g = unified_argument(&cfg, &dom, site, &u, Case::P, None).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }
}
