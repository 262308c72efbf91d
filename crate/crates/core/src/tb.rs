//! Two-centre tight-binding model: one orbital per atom, tapered hopping and
//! embedding-density kernels, Fermi-Dirac smearing at a fixed chemical
//! potential. Energies are band energies `Tr g(H)` with `g(ε) = f(ε) ε`; the
//! pairwise repulsion is omitted.

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A radial kernel `r -> φ(r)`, multiplied by the cutoff taper at evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "coeffs", rename_all = "lowercase")]
pub enum RadialFunction {
    /// `[A, q]` or `[A, q, r0]`: `A exp(-q (r - r0))`, `r0 = 1` by default.
    Exp(Vec<f64>),
    /// `[c0, c1, ...]`: `Σ c_k r^k`.
    Poly(Vec<f64>),
}

/// The on-site term as a function of the embedding density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "coeffs", rename_all = "lowercase")]
pub enum OnsiteFunction {
    /// `[c0, c1, ...]`: `Σ c_k x^k`.
    Poly(Vec<f64>),
    /// `[A, q]`: `A (1 - exp(-q x))`.
    Exp(Vec<f64>),
}

fn poly(c: &[f64], x: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut d = 0.0;
    for ck in c.iter().rev() {
        d = d * x + v;
        v = v * x + ck;
    }
    (v, d)
}

impl RadialFunction {
    /// Untapered value and derivative.
    pub fn eval(&self, r: f64) -> (f64, f64) {
        match self {
            RadialFunction::Exp(c) => {
                let r0 = c.get(2).copied().unwrap_or(1.0);
                let e = c[0] * (-c[1] * (r - r0)).exp();
                (e, -c[1] * e)
            }
            RadialFunction::Poly(c) => poly(c, r),
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        match self {
            RadialFunction::Exp(c) if c.len() == 2 || c.len() == 3 => Ok(()),
            RadialFunction::Exp(c) => Err(Error::config(
                field,
                format!("family `exp` takes 2 or 3 coefficients, got {}", c.len()),
            )),
            RadialFunction::Poly(c) if !c.is_empty() => Ok(()),
            RadialFunction::Poly(_) => Err(Error::config(field, "family `poly` needs coefficients")),
        }
    }
}

impl OnsiteFunction {
    pub fn eval(&self, x: f64) -> (f64, f64) {
        match self {
            OnsiteFunction::Poly(c) => poly(c, x),
            OnsiteFunction::Exp(c) => {
                let e = (-c[1] * x).exp();
                (c[0] * (1.0 - e), c[0] * c[1] * e)
            }
        }
    }

    fn validate(&self, field: &str) -> Result<()> {
        match self {
            OnsiteFunction::Poly(c) if !c.is_empty() => Ok(()),
            OnsiteFunction::Poly(_) => Err(Error::config(field, "family `poly` needs coefficients")),
            OnsiteFunction::Exp(c) if c.len() == 2 => Ok(()),
            OnsiteFunction::Exp(c) => Err(Error::config(
                field,
                format!("family `exp` takes 2 coefficients, got {}", c.len()),
            )),
        }
    }
}

/// Model parameters. Energies in units of the hopping prefactor, lengths in
/// units of the lattice spacing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TbParams {
    pub hopping: RadialFunction,
    pub density: RadialFunction,
    pub onsite: OnsiteFunction,
    pub r_cut: f64,
    /// Width of the taper interval `[r_cut - margin, r_cut]`.
    pub smoothness_margin: f64,
    pub mu: f64,
    pub beta: f64,
    /// Non-accumulation bound on pair distances.
    pub min_separation: f64,
}

impl Default for TbParams {
    /// Nearest-neighbour toy model used by the convergence study.
    fn default() -> Self {
        Self {
            hopping: RadialFunction::Exp(vec![-1.0, 1.5]),
            density: RadialFunction::Exp(vec![1.0, 6.0]),
            onsite: OnsiteFunction::Poly(vec![0.0, 0.075]),
            r_cut: 1.6,
            smoothness_margin: 0.4,
            mu: 0.0,
            beta: 0.3,
            min_separation: 0.5,
        }
    }
}

impl TbParams {
    pub fn validate(&self) -> Result<()> {
        self.hopping.validate("tb.hopping")?;
        self.density.validate("tb.density")?;
        self.onsite.validate("tb.onsite")?;
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config("tb.beta", "must be positive and finite"));
        }
        if !(self.r_cut > 0.0) {
            return Err(Error::config("tb.r_cut", "must be positive"));
        }
        if !(self.smoothness_margin > 0.0 && self.smoothness_margin < self.r_cut) {
            return Err(Error::config("tb.smoothness_margin", "must lie in (0, r_cut)"));
        }
        if !(self.min_separation > 0.0) {
            return Err(Error::config("tb.min_separation", "must be positive"));
        }
        Ok(())
    }

    /// Cutoff function ψ and its derivative: quintic step from 1 at
    /// `r_cut - margin` down to 0 at `r_cut`, C² at both ends.
    pub fn taper(&self, r: f64) -> (f64, f64) {
        let w = self.smoothness_margin;
        let t = (r - (self.r_cut - w)) / w;
        if r >= self.r_cut {
            (0.0, 0.0)
        } else if t <= 0.0 {
            (1.0, 0.0)
        } else {
            let s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
            let ds = 30.0 * t * t * (1.0 - t) * (1.0 - t) / w;
            (1.0 - s, -ds)
        }
    }

    /// Tapered hopping `h_hop(r)` and derivative.
    pub fn hop(&self, r: f64) -> (f64, f64) {
        let (p, dp) = self.taper(r);
        let (f, df) = self.hopping.eval(r);
        (f * p, df * p + f * dp)
    }

    /// Tapered density kernel `ϱ(r)` and derivative.
    pub fn rho(&self, r: f64) -> (f64, f64) {
        let (p, dp) = self.taper(r);
        let (f, df) = self.density.eval(r);
        (f * p, df * p + f * dp)
    }

    pub fn fermi(&self, e: f64) -> f64 {
        0.5 * (1.0 - (0.5 * self.beta * (e - self.mu)).tanh())
    }

    /// `g(ε) = f(ε) ε`.
    pub fn g(&self, e: f64) -> f64 {
        self.fermi(e) * e
    }

    pub fn dg(&self, e: f64) -> f64 {
        let f = self.fermi(e);
        f - e * self.beta * f * (1.0 - f)
    }

    /// Divided difference `g[a, b] = (g(a) - g(b)) / (a - b)`, equal to
    /// `g'(a)` when `a = b`. Written as `f(a) + b f[a, b]` with
    /// `f[a, b] = -(β/4) sinhc(β(a-b)/2) / (cosh x_a cosh x_b)`, which has no
    /// cancellation for nearly equal arguments.
    pub fn g_divided(&self, a: f64, b: f64) -> f64 {
        let z = 0.5 * self.beta * (a - b);
        if z.abs() > 1.0 {
            return (self.g(a) - self.g(b)) / (a - b);
        }
        let sinhc = if z == 0.0 { 1.0 } else { z.sinh() / z };
        let xa = 0.5 * self.beta * (a - self.mu);
        let xb = 0.5 * self.beta * (b - self.mu);
        let fab = -0.25 * self.beta * sinhc / (xa.cosh() * xb.cosh());
        self.fermi(a) + b * fab
    }
}

/// Atom positions in `R^dim`, flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Positions {
    dim: usize,
    coords: Vec<f64>,
}

impl Positions {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(Error::Shape {
                expected: dim,
                got: coords.len(),
            });
        }
        Ok(Self { dim, coords })
    }

    pub fn from_points(points: &[[f64; 2]]) -> Self {
        Self {
            dim: 2,
            coords: points.iter().flat_map(|p| p.iter().copied()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.coords
    }
}

#[derive(Clone, Copy, Debug)]
struct Bond {
    i: usize,
    j: usize,
    dh: f64,
    drho: f64,
}

/// Hamiltonian plus the derivative data needed to contract `∂H/∂y`.
pub struct TbSystem {
    dim: usize,
    hamiltonian: Mat<f64>,
    bonds: Vec<Bond>,
    /// Unit vectors `(y_i - y_j)/r` per bond, flattened.
    dirs: Vec<f64>,
    /// `h_ons'(Σ_j ϱ(r_ij))` per atom.
    donsite: Vec<f64>,
}

impl TbSystem {
    pub fn assemble(pos: &Positions, params: &TbParams) -> Result<Self> {
        let n = pos.len();
        let dim = pos.dim();
        let mut hamiltonian = Mat::<f64>::zeros(n, n);
        let mut density = vec![0.0; n];
        let mut bonds = Vec::new();
        let mut dirs = Vec::new();
        let rc2 = params.r_cut * params.r_cut;
        let m2 = params.min_separation * params.min_separation;
        for i in 0..n {
            let yi = pos.point(i);
            for j in i + 1..n {
                let yj = pos.point(j);
                let r2: f64 = yi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
                if r2 < m2 {
                    return Err(Error::Accumulation {
                        i,
                        j,
                        distance: r2.sqrt(),
                        bound: params.min_separation,
                    });
                }
                if r2 >= rc2 {
                    continue;
                }
                let r = r2.sqrt();
                let (h, dh) = params.hop(r);
                let (rho, drho) = params.rho(r);
                hamiltonian[(i, j)] = h;
                hamiltonian[(j, i)] = h;
                density[i] += rho;
                density[j] += rho;
                bonds.push(Bond { i, j, dh, drho });
                dirs.extend(yi.iter().zip(yj).map(|(a, b)| (a - b) / r));
            }
        }
        let mut donsite = vec![0.0; n];
        for i in 0..n {
            let (v, dv) = params.onsite.eval(density[i]);
            hamiltonian[(i, i)] = v;
            donsite[i] = dv;
        }
        Ok(Self {
            dim,
            hamiltonian,
            bonds,
            dirs,
            donsite,
        })
    }

    pub fn hamiltonian(&self) -> &Mat<f64> {
        &self.hamiltonian
    }

    pub fn len(&self) -> usize {
        self.hamiltonian.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Contracts `Σ_ab Γ_ab ∂H_ab/∂y` into a position gradient, given a
    /// callback for the entries of the symmetric matrix Γ.
    fn contract(&self, gamma: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        let n = self.len();
        let d = self.dim;
        let diag: Vec<f64> = (0..n).map(|i| gamma(i, i) * self.donsite[i]).collect();
        let mut grad = vec![0.0; n * d];
        for (b, bond) in self.bonds.iter().enumerate() {
            let c = 2.0 * gamma(bond.i, bond.j) * bond.dh + (diag[bond.i] + diag[bond.j]) * bond.drho;
            let dir = &self.dirs[b * d..(b + 1) * d];
            for k in 0..d {
                grad[bond.i * d + k] += c * dir[k];
                grad[bond.j * d + k] -= c * dir[k];
            }
        }
        grad
    }
}

/// `H(y)`: symmetric, hopping off the diagonal, embedded on-site term on it.
pub fn assemble_hamiltonian(pos: &Positions, params: &TbParams) -> Result<Mat<f64>> {
    Ok(TbSystem::assemble(pos, params)?.hamiltonian)
}

/// Eigen-decomposition of a Hamiltonian.
#[derive(Clone, Debug)]
pub struct SpectralData {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal columns.
    pub eigenvectors: Mat<f64>,
    /// Site ids indexed by the rows, when the cluster was cut from a larger configuration.
    pub cluster_ids: Vec<usize>,
    /// Row-major copy of the eigenvector matrix, `rows[i * n + s] = [ψ_s]_i`.
    rows: Vec<f64>,
}

impl SpectralData {
    pub fn new(h: &Mat<f64>, cluster_ids: Vec<usize>) -> Result<Self> {
        let n = h.nrows();
        if n == 0 {
            return Ok(Self {
                eigenvalues: vec![],
                eigenvectors: Mat::zeros(0, 0),
                cluster_ids,
                rows: vec![],
            });
        }
        let evd = h
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Eigen(format!("{e:?}")))?;
        let s = evd.S().column_vector();
        let eigenvalues: Vec<f64> = (0..n).map(|i| s[i]).collect();
        let eigenvectors = evd.U().to_owned();
        let mut rows = vec![0.0; n * n];
        for c in 0..n {
            let col = eigenvectors.col(c);
            for i in 0..n {
                rows[i * n + c] = col[i];
            }
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
            cluster_ids,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.rows[i * n..(i + 1) * n]
    }

    /// `[φ(H)]_ij = Σ_s φ(ε_s) [ψ_s]_i [ψ_s]_j` for precomputed `φ(ε_s)`.
    fn matrix_function_entry(&self, phi: &[f64], i: usize, j: usize) -> f64 {
        let (a, b) = (self.row(i), self.row(j));
        a.iter().zip(b).zip(phi).map(|((x, y), p)| x * y * p).sum()
    }
}

/// `Σ_s f(ε_s) ε_s`.
pub fn band_energy(spectral: &SpectralData, params: &TbParams) -> f64 {
    spectral.eigenvalues.iter().map(|&e| params.g(e)).sum()
}

/// `E_ℓ = [g(H)]_ℓℓ` for every row.
pub fn site_energies(spectral: &SpectralData, params: &TbParams) -> Vec<f64> {
    let g: Vec<f64> = spectral.eigenvalues.iter().map(|&e| params.g(e)).collect();
    (0..spectral.len())
        .map(|l| spectral.matrix_function_entry(&g, l, l))
        .collect()
}

/// A fully evaluated cluster: Hamiltonian, derivative data and spectrum.
pub struct TbCluster {
    pub system: TbSystem,
    pub spectral: SpectralData,
}

impl TbCluster {
    pub fn new(pos: &Positions, params: &TbParams) -> Result<Self> {
        Self::with_ids(pos, params, vec![])
    }

    pub fn with_ids(pos: &Positions, params: &TbParams, cluster_ids: Vec<usize>) -> Result<Self> {
        let system = TbSystem::assemble(pos, params)?;
        let spectral = SpectralData::new(&system.hamiltonian, cluster_ids)?;
        Ok(Self { system, spectral })
    }

    pub fn band_energy(&self, params: &TbParams) -> f64 {
        band_energy(&self.spectral, params)
    }

    pub fn site_energies(&self, params: &TbParams) -> Vec<f64> {
        site_energies(&self.spectral, params)
    }

    pub fn site_energy(&self, params: &TbParams, l: usize) -> f64 {
        let g: Vec<f64> = self.spectral.eigenvalues.iter().map(|&e| params.g(e)).collect();
        self.spectral.matrix_function_entry(&g, l, l)
    }

    /// `Σ_ℓ w_ℓ E_ℓ` for sparse weights.
    pub fn weighted_site_energy(&self, params: &TbParams, weights: &[(usize, f64)]) -> f64 {
        let g: Vec<f64> = self.spectral.eigenvalues.iter().map(|&e| params.g(e)).collect();
        weights
            .iter()
            .map(|&(l, w)| w * self.spectral.matrix_function_entry(&g, l, l))
            .sum()
    }

    /// Gradient of the band energy with respect to all positions:
    /// `Γ = Σ_s g'(ε_s) ψ_s ψ_sᵀ` contracted with `∂H/∂y`.
    pub fn total_gradient(&self, params: &TbParams) -> Vec<f64> {
        let dg: Vec<f64> = self.spectral.eigenvalues.iter().map(|&e| params.dg(e)).collect();
        self.system
            .contract(|i, j| self.spectral.matrix_function_entry(&dg, i, j))
    }

    /// Gradient of `E_ℓ` with respect to all positions.
    pub fn site_energy_gradient(&self, params: &TbParams, l: usize) -> Vec<f64> {
        self.weighted_gradient(params, &[(l, 1.0)])
    }

    /// Gradient of `Σ_ℓ w_ℓ E_ℓ` via the divided-difference formula
    /// `Γ = U (G¹ ∘ (Uᵀ W U)) Uᵀ`.
    pub fn weighted_gradient(&self, params: &TbParams, weights: &[(usize, f64)]) -> Vec<f64> {
        let n = self.spectral.len();
        if n == 0 {
            return vec![];
        }
        let eps = &self.spectral.eigenvalues;
        let u = &self.spectral.eigenvectors;

        // M = Uᵀ W U restricted to the weighted rows
        let q = weights.len();
        let uq = Mat::<f64>::from_fn(q, n, |a, s| u[(weights[a].0, s)]);
        let wuq = Mat::<f64>::from_fn(q, n, |a, s| weights[a].1 * uq[(a, s)]);
        let m = uq.transpose() * &wuq;
        let a = Mat::<f64>::from_fn(n, n, |s, t| {
            params.g_divided(eps[s], eps[t]) * m[(s, t)]
        });
        let b = u * &a;
        let mut b_rows = vec![0.0; n * n];
        for c in 0..n {
            let col = b.col(c);
            for i in 0..n {
                b_rows[i * n + c] = col[i];
            }
        }
        self.system.contract(|i, j| {
            let bi = &b_rows[i * n..(i + 1) * n];
            bi.iter().zip(self.spectral.row(j)).map(|(x, y)| x * y).sum()
        })
    }
}

/// Band energy of a cluster at the given positions.
pub fn total_energy(pos: &Positions, params: &TbParams) -> Result<f64> {
    Ok(TbCluster::new(pos, params)?.band_energy(params))
}

/// Analytic gradient of the band energy.
pub fn total_gradient(pos: &Positions, params: &TbParams) -> Result<Vec<f64>> {
    Ok(TbCluster::new(pos, params)?.total_gradient(params))
}

/// Analytic gradient of the site energy of atom `l`.
pub fn site_energy_gradient(pos: &Positions, params: &TbParams, l: usize) -> Result<Vec<f64>> {
    Ok(TbCluster::new(pos, params)?.site_energy_gradient(params, l))
}
