//! Reference configurations, region decompositions, stencils and the
//! weighted strain seminorm used for all error measurements.
//!
//! Lengths are in units of the nearest-neighbour spacing `a = 1`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used for closed-ball membership tests, so that shells sitting exactly
/// on a radius (e.g. `(3, 0)` for `R = 3`) are consistently included.
pub const BALL_TOL: f64 = 1e-9;

/// Stencil truncation: offsets with `exp(-2 γ |ρ|)` below this are dropped.
pub const STENCIL_WEIGHT_CUTOFF: f64 = 1e-14;

/// A two-dimensional Bravais lattice `A Z^2`, stored by columns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    /// `bravais[k]` is the k-th primitive vector.
    pub bravais: [[f64; 2]; 2],
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self::triangular()
    }
}

impl LatticeSpec {
    /// Triangular lattice with primitive vectors `(1, 0)` and `(1/2, √3/2)`.
    pub fn triangular() -> Self {
        Self {
            bravais: [[1.0, 0.0], [0.5, 3f64.sqrt() / 2.0]],
        }
    }

    pub fn new(bravais: [[f64; 2]; 2]) -> Result<Self> {
        let spec = Self { bravais };
        if spec.det() <= 0.0 {
            return Err(Error::InvalidGeometry(format!(
                "bravais matrix must have positive determinant, got {}",
                spec.det()
            )));
        }
        Ok(spec)
    }

    pub fn det(&self) -> f64 {
        let [a, b] = self.bravais;
        a[0] * b[1] - a[1] * b[0]
    }

    pub fn point(&self, n: [i64; 2]) -> [f64; 2] {
        let [a, b] = self.bravais;
        [
            n[0] as f64 * a[0] + n[1] as f64 * b[0],
            n[0] as f64 * a[1] + n[1] as f64 * b[1],
        ]
    }

    /// Fractional lattice coordinates `A^{-1} x`.
    pub fn fractional(&self, x: [f64; 2]) -> [f64; 2] {
        let [a, b] = self.bravais;
        let det = self.det();
        [
            (b[1] * x[0] - b[0] * x[1]) / det,
            (-a[1] * x[0] + a[0] * x[1]) / det,
        ]
    }

    /// Integer coordinates of `x` when it is a lattice point.
    pub fn lattice_coords(&self, x: [f64; 2]) -> Option<[i64; 2]> {
        let f = self.fractional(x);
        let n = [f[0].round() as i64, f[1].round() as i64];
        let p = self.point(n);
        (dist(p, x) < 1e-8).then_some(n)
    }

    /// Half-widths of the integer box containing every lattice point of `B_radius(x)`.
    fn coord_window(&self, radius: f64) -> [f64; 2] {
        let [a, b] = self.bravais;
        let det = self.det();
        // rows of A^{-1}
        let r0 = (b[1] * b[1] + b[0] * b[0]).sqrt() / det;
        let r1 = (a[1] * a[1] + a[0] * a[0]).sqrt() / det;
        [r0 * radius + 1.0, r1 * radius + 1.0]
    }

    /// Lattice points in the closed ball `B_radius(center)`, in lexicographic
    /// order of their integer coordinates.
    pub fn points_within(&self, center: [f64; 2], radius: f64) -> Vec<[i64; 2]> {
        let c = self.fractional(center);
        let w = self.coord_window(radius);
        let mut out = Vec::new();
        for n0 in (c[0] - w[0]).floor() as i64..=(c[0] + w[0]).ceil() as i64 {
            for n1 in (c[1] - w[1]).floor() as i64..=(c[1] + w[1]).ceil() as i64 {
                if dist(self.point([n0, n1]), center) <= radius + BALL_TOL {
                    out.push([n0, n1]);
                }
            }
        }
        out
    }
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub(crate) fn norm2(a: [f64; 2]) -> f64 {
    (a[0] * a[0] + a[1] * a[1]).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectKind {
    None,
    Vacancy,
    Divacancy,
    /// One extra atom at a triangle barycentre next to the origin. Experimental.
    Interstitial,
    /// Perfect lattice carrying an anti-plane screw dislocation predictor.
    Screw,
}

impl FromStr for DefectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "vacancy" => Ok(Self::Vacancy),
            "divacancy" => Ok(Self::Divacancy),
            "interstitial" => Ok(Self::Interstitial),
            "screw" => Ok(Self::Screw),
            other => Err(Error::Unsupported(format!("defect kind `{other}`"))),
        }
    }
}

impl fmt::Display for DefectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::None => "none",
            Self::Vacancy => "vacancy",
            Self::Divacancy => "divacancy",
            Self::Interstitial => "interstitial",
            Self::Screw => "screw",
        };
        f.write_str(s)
    }
}

/// The index set of a (possibly defective) crystal restricted to a ball.
#[derive(Clone, Debug)]
pub struct ReferenceConfig {
    spec: LatticeSpec,
    sites: Vec<[f64; 2]>,
    lattice: Vec<Option<[i64; 2]>>,
    index: HashMap<[i64; 2], usize>,
    off_lattice: Vec<usize>,
    defect: DefectKind,
    r_def: f64,
    domain_radius: f64,
}

/// Builds the sites of `B_domain_radius ∩ Λ`. Site ids follow the
/// lexicographic order of integer lattice coordinates; an interstitial, if
/// any, is appended last.
pub fn build_reference(
    spec: LatticeSpec,
    domain_radius: f64,
    defect: DefectKind,
    r_def: f64,
) -> Result<ReferenceConfig> {
    if !(r_def >= 0.0) || !(domain_radius > r_def) {
        return Err(Error::InvalidGeometry(format!(
            "need domain_radius > r_def >= 0, got domain_radius = {domain_radius}, r_def = {r_def}"
        )));
    }
    let a1 = spec.point([1, 0]);
    let removed: Vec<[i64; 2]> = match defect {
        DefectKind::None | DefectKind::Screw => vec![],
        DefectKind::Vacancy => vec![[0, 0]],
        DefectKind::Divacancy => vec![[0, 0], [1, 0]],
        DefectKind::Interstitial => vec![],
    };
    for n in &removed {
        if norm2(spec.point(*n)) >= r_def {
            return Err(Error::InvalidGeometry(format!(
                "removed site {:?} must lie inside B_r_def (r_def = {r_def})",
                n
            )));
        }
    }
    let extra = match defect {
        DefectKind::Interstitial => {
            let b = spec.point([0, 1]);
            let x = [(a1[0] + b[0]) / 3.0, (a1[1] + b[1]) / 3.0];
            if norm2(x) >= r_def {
                return Err(Error::InvalidGeometry(format!(
                    "interstitial at |x| = {:.4} must lie inside B_r_def",
                    norm2(x)
                )));
            }
            Some(x)
        }
        _ => None,
    };

    let mut sites = Vec::new();
    let mut lattice = Vec::new();
    let mut index = HashMap::new();
    for n in spec.points_within([0.0, 0.0], domain_radius) {
        if removed.contains(&n) {
            continue;
        }
        index.insert(n, sites.len());
        sites.push(spec.point(n));
        lattice.push(Some(n));
    }
    let mut off_lattice = Vec::new();
    if let Some(x) = extra {
        off_lattice.push(sites.len());
        sites.push(x);
        lattice.push(None);
    }
    Ok(ReferenceConfig {
        spec,
        sites,
        lattice,
        index,
        off_lattice,
        defect,
        r_def,
        domain_radius,
    })
}

impl ReferenceConfig {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn defect(&self) -> DefectKind {
        self.defect
    }

    pub fn r_def(&self) -> f64 {
        self.r_def
    }

    pub fn domain_radius(&self) -> f64 {
        self.domain_radius
    }

    pub fn sites(&self) -> &[[f64; 2]] {
        &self.sites
    }

    pub fn position(&self, id: usize) -> [f64; 2] {
        self.sites[id]
    }

    pub fn radius_of(&self, id: usize) -> f64 {
        norm2(self.sites[id])
    }

    pub fn lattice_coords(&self, id: usize) -> Option<[i64; 2]> {
        self.lattice[id]
    }

    pub fn site_of(&self, n: [i64; 2]) -> Option<usize> {
        self.index.get(&n).copied()
    }

    /// Site id at position `x`, if any.
    pub fn site_at(&self, x: [f64; 2]) -> Option<usize> {
        if let Some(n) = self.spec.lattice_coords(x) {
            if let Some(id) = self.site_of(n) {
                return Some(id);
            }
        }
        self.off_lattice
            .iter()
            .copied()
            .find(|&id| dist(self.sites[id], x) < 1e-8)
    }

    /// Ids of all sites in the closed ball `B_radius(center)`, ascending.
    pub fn sites_within(&self, center: [f64; 2], radius: f64) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .spec
            .points_within(center, radius)
            .into_iter()
            .filter_map(|n| self.site_of(n))
            .collect();
        ids.extend(
            self.off_lattice
                .iter()
                .copied()
                .filter(|&id| dist(self.sites[id], center) <= radius + BALL_TOL),
        );
        ids.sort_unstable();
        ids
    }

    /// Serializable snapshot of the geometry, optionally with region labels.
    pub fn snapshot(&self, labels: Option<&RegionDecomposition>) -> GeometrySnapshot {
        GeometrySnapshot {
            bravais: self.spec.bravais,
            sites: self.sites.clone(),
            defect: self.defect,
            r_def: self.r_def,
            labels: labels.map(|d| d.labels().iter().map(|l| l.to_string()).collect()),
        }
    }
}

/// JSON geometry document used for reproducibility snapshots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometrySnapshot {
    pub bravais: [[f64; 2]; 2],
    pub sites: Vec<[f64; 2]>,
    pub defect: DefectKind,
    #[serde(rename = "R_def")]
    pub r_def: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

/// All sites `k ≠ ℓ` with `|k - ℓ| <= radius`, as `(k - ℓ, k)` pairs ordered by site id.
pub fn stencil(config: &ReferenceConfig, site: usize, radius: f64) -> Vec<([f64; 2], usize)> {
    let x = config.position(site);
    config
        .sites_within(x, radius)
        .into_iter()
        .filter(|&k| k != site)
        .map(|k| {
            let y = config.position(k);
            ([y[0] - x[0], y[1] - x[1]], k)
        })
        .collect()
}

/// A displacement field `u: Λ → R^dim`, one block of `dim` values per site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    dim: usize,
    values: Vec<f64>,
}

impl Displacement {
    pub fn zeros(n_sites: usize, dim: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; n_sites * dim],
        }
    }

    pub fn from_values(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::Shape {
                expected: dim,
                got: values.len(),
            });
        }
        Ok(Self { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_sites(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn site(&self, id: usize) -> &[f64] {
        &self.values[id * self.dim..(id + 1) * self.dim]
    }

    pub fn site_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.values[id * self.dim..(id + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self - other`, both on the same site set.
    pub fn difference(&self, other: &Displacement) -> Result<Displacement> {
        if self.dim != other.dim || self.values.len() != other.values.len() {
            return Err(Error::Shape {
                expected: self.values.len(),
                got: other.values.len(),
            });
        }
        Ok(Displacement {
            dim: self.dim,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn scaled(&self, alpha: f64) -> Displacement {
        Displacement {
            dim: self.dim,
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    /// Euclidean norm of the per-site vector.
    pub fn site_norm(&self, id: usize) -> f64 {
        self.site(id).iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// QM / MM / far-field label of a site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Qm,
    Mm,
    Ff,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Qm => "QM",
            Region::Mm => "MM",
            Region::Ff => "FF",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionCounts {
    pub qm: usize,
    pub mm: usize,
    pub ff: usize,
    pub buffer: usize,
}

/// Concentric QM / MM / far-field partition with a buffer shell around the QM core.
#[derive(Clone, Debug)]
pub struct RegionDecomposition {
    pub r_qm: f64,
    pub r_mm: f64,
    pub r_buf: f64,
    labels: Vec<Region>,
    qm_ids: Vec<usize>,
    mm_ids: Vec<usize>,
    buffer_ids: Vec<usize>,
}

pub fn decompose(
    config: &ReferenceConfig,
    r_qm: f64,
    r_mm: f64,
    r_buf: f64,
) -> Result<RegionDecomposition> {
    if !(r_buf > 0.0) {
        return Err(Error::InvalidDecomposition(format!(
            "R_BUF > 0 violated (R_BUF = {r_buf})"
        )));
    }
    if !(r_qm > config.r_def() + r_buf) {
        return Err(Error::InvalidDecomposition(format!(
            "R_QM > R_def + R_BUF violated ({r_qm} <= {} + {r_buf})",
            config.r_def()
        )));
    }
    if !(r_qm < r_mm) {
        return Err(Error::InvalidDecomposition(format!(
            "R_QM < R_MM violated ({r_qm} >= {r_mm})"
        )));
    }
    if !(r_mm + r_buf <= config.domain_radius() + BALL_TOL) {
        return Err(Error::InvalidDecomposition(format!(
            "R_MM + R_BUF <= domain radius violated ({r_mm} + {r_buf} > {})",
            config.domain_radius()
        )));
    }
    let mut labels = Vec::with_capacity(config.len());
    let (mut qm_ids, mut mm_ids, mut buffer_ids) = (Vec::new(), Vec::new(), Vec::new());
    for id in 0..config.len() {
        let r = config.radius_of(id);
        let label = if r <= r_qm + BALL_TOL {
            qm_ids.push(id);
            Region::Qm
        } else if r <= r_mm + BALL_TOL {
            mm_ids.push(id);
            Region::Mm
        } else {
            Region::Ff
        };
        if label != Region::Qm && r <= r_qm + r_buf + BALL_TOL {
            buffer_ids.push(id);
        }
        labels.push(label);
    }
    Ok(RegionDecomposition {
        r_qm,
        r_mm,
        r_buf,
        labels,
        qm_ids,
        mm_ids,
        buffer_ids,
    })
}

impl RegionDecomposition {
    pub fn labels(&self) -> &[Region] {
        &self.labels
    }

    pub fn label(&self, id: usize) -> Region {
        self.labels[id]
    }

    pub fn is_free(&self, id: usize) -> bool {
        self.labels[id] != Region::Ff
    }

    pub fn qm_ids(&self) -> &[usize] {
        &self.qm_ids
    }

    pub fn mm_ids(&self) -> &[usize] {
        &self.mm_ids
    }

    pub fn buffer_ids(&self) -> &[usize] {
        &self.buffer_ids
    }

    /// `Λ^QM ∪ Λ^BUF`, ascending.
    pub fn qm_cluster(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.qm_ids.iter().chain(&self.buffer_ids).copied().collect();
        ids.sort_unstable();
        ids
    }

    pub fn counts(&self) -> RegionCounts {
        RegionCounts {
            qm: self.qm_ids.len(),
            mm: self.mm_ids.len(),
            ff: self.labels.len() - self.qm_ids.len() - self.mm_ids.len(),
            buffer: self.buffer_ids.len(),
        }
    }
}

/// `‖Du‖_{ℓ²_γ}` over `subset` (all sites when `None`). Differences are taken
/// between generated sites only; the ρ-sum is truncated where
/// `exp(-2γ|ρ|) < STENCIL_WEIGHT_CUTOFF`.
pub fn weighted_seminorm(
    u: &Displacement,
    config: &ReferenceConfig,
    gamma: f64,
    subset: Option<&[usize]>,
) -> Result<f64> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("gamma must be > 0, got {gamma}")));
    }
    if u.n_sites() != config.len() {
        return Err(Error::Shape {
            expected: config.len(),
            got: u.n_sites(),
        });
    }
    let all: Vec<usize>;
    let ids = match subset {
        Some(s) => s,
        None => {
            all = (0..config.len()).collect();
            &all
        }
    };
    let total: f64 = ids
        .par_iter()
        .map(|&l| site_seminorm_sq(u, config, gamma, l))
        .sum();
    Ok(total.sqrt())
}

/// Truncation radius of the ρ-sum for weight `γ`.
pub fn stencil_radius(gamma: f64) -> f64 {
    -STENCIL_WEIGHT_CUTOFF.ln() / (2.0 * gamma)
}

/// `|Du(ℓ)|_γ²` for one site.
pub fn site_seminorm_sq(u: &Displacement, config: &ReferenceConfig, gamma: f64, site: usize) -> f64 {
    let ul = u.site(site);
    stencil(config, site, stencil_radius(gamma))
        .into_iter()
        .map(|(rho, k)| {
            let w = (-2.0 * gamma * norm2(rho)).exp();
            let d2: f64 = u.site(k).iter().zip(ul).map(|(a, b)| (a - b).powi(2)).sum();
            w * d2
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_count(radius: f64) -> usize {
        let spec = LatticeSpec::triangular();
        let m = (2.0 * radius).ceil() as i64 + 2;
        let mut count = 0;
        for i in -m..=m {
            for j in -m..=m {
                if norm2(spec.point([i, j])) <= radius + BALL_TOL {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn perfect_lattice_count_matches_enumeration() {
        let cfg = build_reference(LatticeSpec::triangular(), 3.0, DefectKind::None, 0.0).unwrap();
        assert_eq!(cfg.len(), brute_force_count(3.0));
        assert_eq!(cfg.len(), 37);
    }

    #[test]
    fn point_defects_remove_sites() {
        let n = brute_force_count(6.0);
        let vac = build_reference(LatticeSpec::triangular(), 6.0, DefectKind::Vacancy, 1.1).unwrap();
        assert_eq!(vac.len(), n - 1);
        let div = build_reference(LatticeSpec::triangular(), 6.0, DefectKind::Divacancy, 1.6).unwrap();
        assert_eq!(div.len(), n - 2);
        assert!(div.site_of([0, 0]).is_none() && div.site_of([1, 0]).is_none());
        let int = build_reference(LatticeSpec::triangular(), 6.0, DefectKind::Interstitial, 1.0).unwrap();
        assert_eq!(int.len(), n + 1);
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let spec = LatticeSpec::triangular();
        assert!(matches!(
            build_reference(spec, 1.0, DefectKind::None, 2.0),
            Err(Error::InvalidGeometry(_))
        ));
        assert!(matches!(
            build_reference(spec, 5.0, DefectKind::Divacancy, 0.5),
            Err(Error::InvalidGeometry(_))
        ));
        assert!(matches!("crack".parse::<DefectKind>(), Err(Error::Unsupported(_))));
        assert!(LatticeSpec::new([[1.0, 0.0], [-0.5, -1.0]]).is_err());
    }

    #[test]
    fn stencil_shells() {
        let cfg = build_reference(LatticeSpec::triangular(), 6.0, DefectKind::None, 0.0).unwrap();
        let o = cfg.site_of([0, 0]).unwrap();
        assert_eq!(stencil(&cfg, o, 1.1).len(), 6);
        assert_eq!(stencil(&cfg, o, 1.9).len(), 12);
        let vac = build_reference(LatticeSpec::triangular(), 6.0, DefectKind::Vacancy, 1.1).unwrap();
        let nb = vac.site_of([1, 0]).unwrap();
        assert_eq!(stencil(&vac, nb, 1.1).len(), 5);
    }

    #[test]
    fn site_ids_are_deterministic() {
        let a = build_reference(LatticeSpec::triangular(), 5.0, DefectKind::Divacancy, 1.6).unwrap();
        let b = build_reference(LatticeSpec::triangular(), 5.0, DefectKind::Divacancy, 1.6).unwrap();
        assert_eq!(a.sites(), b.sites());
        for id in 0..a.len() {
            assert_eq!(a.site_at(a.position(id)), Some(id));
        }
    }

    #[test]
    fn decomposition_partitions_sites() {
        let cfg = build_reference(LatticeSpec::triangular(), 9.0, DefectKind::None, 0.0).unwrap();
        let d = decompose(&cfg, 3.0, 6.0, 1.5).unwrap();
        let c = d.counts();
        assert_eq!(c.qm, brute_force_count(3.0));
        assert_eq!(c.qm + c.mm + c.ff, cfg.len());
        assert_eq!(c.qm + c.buffer, brute_force_count(4.5));
        assert!(matches!(
            decompose(&cfg, 3.0, 3.0, 1.5),
            Err(Error::InvalidDecomposition(msg)) if msg.contains("R_QM < R_MM")
        ));
        assert!(matches!(
            decompose(&cfg, 1.0, 6.0, 1.5),
            Err(Error::InvalidDecomposition(msg)) if msg.contains("R_def + R_BUF")
        ));
    }

    #[test]
    fn seminorm_basic_identities() {
        let cfg = build_reference(LatticeSpec::triangular(), 4.0, DefectKind::None, 0.0).unwrap();
        let n = cfg.len();
        let mut c = Displacement::zeros(n, 2);
        for id in 0..n {
            c.site_mut(id).copy_from_slice(&[0.3, -1.2]);
        }
        assert_eq!(weighted_seminorm(&c, &cfg, 1.0, None).unwrap(), 0.0);
        assert!(weighted_seminorm(&c, &cfg, 0.0, None).is_err());

        // identity field: direct double sum over generated pairs
        let mut id_field = Displacement::zeros(n, 2);
        for id in 0..n {
            id_field.site_mut(id).copy_from_slice(&cfg.position(id));
        }
        let gamma = 0.7;
        let mut direct = 0.0;
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    let r = dist(cfg.position(a), cfg.position(b));
                    direct += (-2.0 * gamma * r).exp() * r * r;
                }
            }
        }
        let got = weighted_seminorm(&id_field, &cfg, gamma, None).unwrap();
        assert!((got - direct.sqrt()).abs() < 1e-12 * direct.sqrt());
        let doubled = weighted_seminorm(&id_field.scaled(2.0), &cfg, gamma, None).unwrap();
        assert!((doubled - 2.0 * got).abs() < 1e-12 * got);
    }

    #[test]
    fn snapshot_round_trips_through_json() {
        let cfg = build_reference(LatticeSpec::triangular(), 3.0, DefectKind::Vacancy, 0.5).unwrap();
        let big = build_reference(LatticeSpec::triangular(), 8.0, DefectKind::Vacancy, 0.5).unwrap();
        let d = decompose(&big, 2.5, 5.0, 1.5).unwrap();
        let snap = cfg.snapshot(None);
        let back: GeometrySnapshot = serde_json::from_str(&serde_json::to_string(&snap).unwrap()).unwrap();
        assert_eq!(back, snap);
        assert_eq!(d.label(big.site_of([1, 0]).unwrap()), Region::Qm);
        assert_eq!(d.label(big.site_of([0, 7]).unwrap()), Region::Ff);
    }
}
