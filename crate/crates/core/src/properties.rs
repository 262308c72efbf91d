//! Property suites: randomized and sweep-based checks of the model
//! invariants, each reported as a list of [`Assertion`]s. Used by the
//! `properties` CLI subcommand and the acceptance tests.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coupling::{HybridInputs, HybridModel, Scheme};
use crate::dislocation::{elastic_strain, unified_argument, Case, ScrewPredictor};
use crate::error::Result;
use crate::fit::{fit_line, fit_slope};
use crate::harness::{decay_fit, decay_profile, Assertion, ExperimentConfig, Study};
use crate::kinematics::Kinematics;
use crate::lattice::{
    build_reference, decompose, norm2, weighted_seminorm, DefectKind, Displacement, LatticeSpec, ReferenceConfig,
};
use crate::site_potential::{
    build_taylor_force, build_taylor_potential, homogeneous_force, homogeneous_site_potential, StencilDomain,
};
use crate::solver::{stability_check, AtmModel};
use crate::tb::{Positions, TbCluster, TbParams};

/// A random compact cluster of `n` atoms: a random subset of the lattice
/// points nearest the origin, each coordinate jittered uniformly in
/// `[-jitter, jitter]`. Keep `jitter <= 0.15` to respect the default
/// non-accumulation bound.
pub fn random_cluster<R: Rng>(rng: &mut R, n: usize, jitter: f64) -> Positions {
    let spec = LatticeSpec::triangular();
    let mut radius = 1.0;
    let mut pts = spec.points_within([0.0, 0.0], radius);
    while pts.len() < n + n / 3 {
        radius += 0.5;
        pts = spec.points_within([0.0, 0.0], radius);
    }
    let mut pts: Vec<[f64; 2]> = pts.into_iter().map(|c| spec.point(c)).collect();
    pts.sort_by(|a, b| norm2(*a).total_cmp(&norm2(*b)));
    pts.truncate(n + n / 3);
    pts.shuffle(rng);
    pts.truncate(n);
    for p in pts.iter_mut() {
        p[0] += rng.gen_range(-jitter..=jitter);
        p[1] += rng.gen_range(-jitter..=jitter);
    }
    Positions::from_points(&pts)
}

/// A displacement with independent uniform entries in `[-amp, amp]` on the
/// sites with `|x| <= radius` and zero elsewhere.
pub fn random_compact<R: Rng>(rng: &mut R, config: &ReferenceConfig, dof: usize, radius: f64, amp: f64) -> Displacement {
    let mut u = Displacement::zeros(config.len(), dof);
    for s in 0..config.len() {
        if config.radius_of(s) <= radius {
            u.site_mut(s).iter_mut().for_each(|v| *v = rng.gen_range(-amp..=amp));
        }
    }
    u
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / n.max(f64::MIN_POSITIVE)
}

fn central_difference(f: &dyn Fn(&[f64]) -> Result<f64>, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let x0 = x[i];
            x[i] = x0 + h;
            let p = f(&x)?;
            x[i] = x0 - h;
            let m = f(&x)?;
            x[i] = x0;
            Ok((p - m) / (2.0 * h))
        })
        .collect()
}

fn cluster_energy(params: &TbParams, dim: usize, coords: &[f64]) -> Result<TbCluster> {
    TbCluster::new(&Positions::new(dim, coords.to_vec())?, params)
}

/// Site energies sum to the band energy on random clusters of 5 to 60 atoms.
pub fn energy_partition(params: &TbParams, seed: u64) -> Result<Assertion> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(5..=60);
        let pos = random_cluster(&mut rng, n, 0.15);
        let c = TbCluster::new(&pos, params)?;
        let total = c.band_energy(params);
        let sum: f64 = c.site_energies(params).iter().sum();
        worst = worst.max((sum - total).abs() / total.abs().max(f64::MIN_POSITIVE));
    }
    Ok(Assertion::at_most(
        "energy_partition",
        worst,
        1e-12,
        "max relative |sum of site energies - band energy| over 20 clusters",
    ))
}

/// Analytic gradients against central differences (step `1e-5`): band
/// energy and one site energy on random clusters, and the hybrid energy on a
/// small divacancy decomposition.
pub fn gradient_oracles(params: &TbParams, seed: u64) -> Result<Vec<Assertion>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let (mut total, mut site) = (0.0f64, 0.0f64);
    for _ in 0..3 {
        let n = rng.gen_range(10..=30);
        let pos = random_cluster(&mut rng, n, 0.15);
        let c = TbCluster::new(&pos, params)?;
        let fd = central_difference(&|x| Ok(cluster_energy(params, 2, x)?.band_energy(params)), pos.coords(), h)?;
        total = total.max(rel_err(&c.total_gradient(params), &fd));
        let l = rng.gen_range(0..n);
        let fd = central_difference(&|x| Ok(cluster_energy(params, 2, x)?.site_energy(params, l)), pos.coords(), h)?;
        site = site.max(rel_err(&c.site_energy_gradient(params, l), &fd));
    }

    let config = Arc::new(build_reference(LatticeSpec::triangular(), 9.0, DefectKind::Divacancy, 1.1)?);
    let kin = Kinematics::InPlane;
    let r_buf = 2.0;
    let model = HybridModel::new(HybridInputs {
        config: config.clone(),
        decomp: decompose(&config, 3.5, 6.0, r_buf)?,
        params: params.clone(),
        kinematics: kin,
        case: Case::P,
        predictor: None,
        scheme: Scheme::Energy,
        taylor_e: Some(Arc::new(build_taylor_potential(2, kin, params, *config.spec(), r_buf, 1e-4, 1e-10)?)),
        taylor_f: None,
    })?;
    let u = random_compact(&mut rng, &config, 2, 6.0, 0.03);
    let x = model.to_free(&u);
    let g = model.to_free(&model.energy_gradient(&u)?);
    let fd = central_difference(&|x| model.energy(&model.from_free(x)), &x, h)?;
    let hybrid = rel_err(&g, &fd);
    Ok(vec![
        Assertion::at_most("total_gradient_fd", total, 1e-6, "relative l2 error, 3 random clusters"),
        Assertion::at_most("site_energy_gradient_fd", site, 1e-6, "relative l2 error, 3 random clusters"),
        Assertion::at_most(
            "hybrid_energy_gradient_fd",
            hybrid,
            1e-6,
            format!("relative l2 error over {} free DOFs", x.len()),
        ),
    ])
}

/// Site energies under random isometries and relabellings, and slip
/// invariance of the anti-plane screw site potential.
pub fn invariance(params: &TbParams, seed: u64) -> Result<Vec<Assertion>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut iso, mut perm) = (0.0f64, 0.0f64);
    for _ in 0..5 {
        let n = rng.gen_range(8..=40);
        let pos = random_cluster(&mut rng, n, 0.15);
        let e = TbCluster::new(&pos, params)?.site_energies(params);

        let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let flip = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
        let t = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
        let moved: Vec<[f64; 2]> = (0..n)
            .map(|i| {
                let p = pos.point(i);
                let (x, y) = (p[0], flip * p[1]);
                [th.cos() * x - th.sin() * y + t[0], th.sin() * x + th.cos() * y + t[1]]
            })
            .collect();
        let e2 = TbCluster::new(&Positions::from_points(&moved), params)?.site_energies(params);
        iso = e.iter().zip(&e2).map(|(a, b)| (a - b).abs()).fold(iso, f64::max);

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let shuffled: Vec<[f64; 2]> = order.iter().map(|&i| [pos.point(i)[0], pos.point(i)[1]]).collect();
        let e3 = TbCluster::new(&Positions::from_points(&shuffled), params)?.site_energies(params);
        perm = order.iter().enumerate().map(|(j, &i)| (e[i] - e3[j]).abs()).fold(perm, f64::max);
    }

    let pred = ScrewPredictor::default();
    let kin = Kinematics::AntiPlane { burgers: pred.burgers };
    let config = build_reference(LatticeSpec::triangular(), 10.0, DefectKind::Screw, 1.0)?;
    let domain = StencilDomain::new(*config.spec(), 2.0);
    let u = random_compact(&mut rng, &config, 1, 5.0, 0.05);
    let u0 = pred.displacement(&config)?;
    let mut slip = 0.0f64;
    let mut checked = 0;
    for s in 0..config.len() {
        let r = config.radius_of(s);
        if r < pred.core_radius + 1.0 || r > 7.5 {
            continue;
        }
        let nbrs = domain.neighbours(&config, s).expect("stencil inside the domain");
        let ul = u0.site(s)[0] + u.site(s)[0];
        let raw: Vec<f64> = nbrs
            .iter()
            .map(|k| {
                let k = k.expect("stencil inside the domain");
                u0.site(k)[0] + u.site(k)[0] - ul
            })
            .collect();
        let unified = unified_argument(&config, &domain, s, &u, Case::D, Some(&pred))?;
        let a = homogeneous_site_potential(&domain, kin, params, &raw)?;
        let b = homogeneous_site_potential(&domain, kin, params, &unified)?;
        slip = slip.max((a - b).abs());
        checked += 1;
    }
    Ok(vec![
        Assertion::at_most("isometry_invariance", iso, 1e-10, "max site-energy change, rotation + reflection + translation"),
        Assertion::at_most("permutation_invariance", perm, 1e-10, "max site-energy change under relabelling"),
        Assertion::at_most(
            "slip_invariance",
            slip,
            1e-8,
            format!("max |V(raw differences) - V(e + D̃u)| over {checked} sites off the core"),
        ),
    ])
}

/// The `n` lattice points nearest the origin, origin first.
fn perfect_cluster(n: usize) -> Vec<[f64; 2]> {
    let spec = LatticeSpec::triangular();
    let mut r = 2.0;
    let mut pts = spec.points_within([0.0, 0.0], r);
    while pts.len() < n {
        r += 1.0;
        pts = spec.points_within([0.0, 0.0], r);
    }
    let mut pts: Vec<[f64; 2]> = pts.into_iter().map(|c| spec.point(c)).collect();
    pts.sort_by(|a, b| norm2(*a).total_cmp(&norm2(*b)));
    pts.truncate(n);
    pts
}

/// Exponential decay of `|∂E_0/∂y(m)|` in `|m|` on a perfect 200-site
/// cluster, and of the gap between buffered and full-domain site energies in
/// `R_BUF`.
pub fn locality(params: &TbParams, seed: u64) -> Result<Vec<Assertion>> {
    let pts = perfect_cluster(200);
    let c = TbCluster::new(&Positions::from_points(&pts), params)?;
    let g = c.site_energy_gradient(params, 0);
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (m, p) in pts.iter().enumerate().skip(1) {
        let v = g[2 * m].hypot(g[2 * m + 1]);
        // entries at round-off level carry no decay information
        if v > 1e-13 * gmax {
            xs.push(norm2(*p));
            ys.push(v.ln());
        }
    }
    let fit = fit_line(&xs, &ys);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = build_reference(LatticeSpec::triangular(), 9.0, DefectKind::Vacancy, 0.5)?;
    let u = random_compact(&mut rng, &config, 2, 3.0, 0.05);
    let centre = config.site_of([1, 0]).expect("lattice site");
    let energy_on = |ids: &[usize]| -> Result<f64> {
        let xs: Vec<[f64; 2]> = ids.iter().map(|&i| config.position(i)).collect();
        let uv: Vec<f64> = ids.iter().flat_map(|&i| u.site(i).to_vec()).collect();
        let pos = Positions::new(2, Kinematics::InPlane.place_all(&xs, &uv))?;
        let local = ids.iter().position(|&i| i == centre).expect("centre in cluster");
        Ok(TbCluster::new(&pos, params)?.site_energy(params, local))
    };
    let all: Vec<usize> = (0..config.len()).collect();
    let exact = energy_on(&all)?;
    let radii = [2.0, 3.0, 4.0, 5.0, 6.0];
    let mut gaps = Vec::new();
    for &r in &radii {
        let ids = config.sites_within(config.position(centre), r);
        gaps.push((energy_on(&ids)? - exact).abs());
    }
    let lg: Vec<f64> = gaps.iter().map(|v| v.max(1e-300).ln()).collect();
    let buf = fit_line(&radii, &lg);
    Ok(vec![
        Assertion::at_most(
            "site_energy_gradient_decay_slope",
            fit.slope,
            0.0,
            format!("log |dE_0/dy(m)| vs |m| over {} atoms, intercept {:.3}", xs.len(), fit.intercept),
        ),
        Assertion {
            name: "site_energy_gradient_decay_correlation".into(),
            value: fit.r.abs(),
            threshold: 0.95,
            passed: fit.r.abs() >= 0.95,
            detail: "|Pearson r| of the log-linear fit".into(),
        },
        Assertion {
            name: "buffer_gap_decay_rate".into(),
            value: -buf.slope,
            threshold: 0.0,
            passed: -buf.slope > 0.0,
            detail: format!("gaps {} at R_BUF {radii:?}", sci(&gaps)),
        },
    ])
}

fn remainder_slope(ts: &[f64], errs: &[f64]) -> f64 {
    fit_slope(ts, errs).map(|f| f.0).unwrap_or(f64::NAN)
}

/// Taylor remainder scaling under `g -> t g` for random stencils, and the
/// vanishing zeroth-order force.
pub fn taylor_remainders(params: &TbParams, seed: u64) -> Result<Vec<Assertion>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = LatticeSpec::triangular();
    let kin = Kinematics::InPlane;
    let r_buf = 2.0;
    let domain = StencilDomain::new(spec, r_buf);
    let ts = [0.01, 0.015, 0.0225, 0.034, 0.05];
    let mut out = Vec::new();
    for order in [2, 3] {
        let pot = build_taylor_potential(order, kin, params, spec, r_buf, 1e-4, 0.0)?;
        let g0: Vec<f64> = (0..pot.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let errs = ts
            .iter()
            .map(|t| {
                let g: Vec<f64> = g0.iter().map(|v| t * v).collect();
                Ok((homogeneous_site_potential(&domain, kin, params, &g)? - pot.eval(&g)?).abs())
            })
            .collect::<Result<Vec<f64>>>()?;
        let s = remainder_slope(&ts, &errs);
        let k1 = (order + 1) as f64;
        out.push(Assertion::at_most(
            format!("site_potential_taylor_{order}_slope"),
            (s - k1).abs(),
            0.2,
            format!("remainder slope {s:.3}, expected {k1}"),
        ));
    }
    for order in [1, 2] {
        let tf = build_taylor_force(order, kin, params, spec, r_buf, 1e-4, 0.0)?;
        let w0: Vec<f64> = (0..tf.window_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let errs = ts
            .iter()
            .map(|t| {
                let w: Vec<f64> = w0.iter().map(|v| t * v).collect();
                let exact = homogeneous_force(&domain, kin, params, &w)?;
                Ok(rel_err(&tf.eval(&w)?, &exact) * exact.iter().map(|v| v * v).sum::<f64>().sqrt())
            })
            .collect::<Result<Vec<f64>>>()?;
        let s = remainder_slope(&ts, &errs);
        let k1 = (order + 1) as f64;
        out.push(Assertion::at_most(
            format!("force_taylor_{order}_slope"),
            (s - k1).abs(),
            0.2,
            format!("remainder slope {s:.3}, expected {k1}"),
        ));
        if order == 1 {
            out.push(Assertion::at_most("force_zeroth_term", tf.zeroth, 1e-10, "max |F_#(0)|"));
        }
    }
    Ok(out)
}

fn defect_free_model(
    params: &TbParams,
    config: &Arc<ReferenceConfig>,
    r_qm: f64,
    r_mm: f64,
    r_buf: f64,
    scheme: Scheme,
) -> Result<HybridModel> {
    let kin = Kinematics::InPlane;
    let spec = *config.spec();
    let (taylor_e, taylor_f) = match scheme {
        Scheme::Energy => (Some(Arc::new(build_taylor_potential(2, kin, params, spec, r_buf, 1e-4, 1e-10)?)), None),
        Scheme::Force => (None, Some(Arc::new(build_taylor_force(1, kin, params, spec, r_buf, 1e-4, 1e-10)?))),
    };
    HybridModel::new(HybridInputs {
        config: config.clone(),
        decomp: decompose(config, r_qm, r_mm, r_buf)?,
        params: params.clone(),
        kinematics: kin,
        case: Case::P,
        predictor: None,
        scheme,
        taylor_e,
        taylor_f,
    })
}

/// Radii of the ghost-force check.
#[derive(Clone, Copy, Debug)]
pub struct GhostForceSetup {
    pub r_qm: f64,
    pub r_mm: f64,
    pub r_buf: f64,
}

impl Default for GhostForceSetup {
    fn default() -> Self {
        Self {
            r_qm: 8.0,
            r_mm: 9.0,
            r_buf: 7.0,
        }
    }
}

/// Largest hybrid gradient (energy scheme) and force (force scheme) at
/// `u = 0` on the perfect lattice.
pub fn ghost_forces(params: &TbParams, setup: GhostForceSetup) -> Result<Vec<Assertion>> {
    let GhostForceSetup { r_qm, r_mm, r_buf } = setup;
    let config = Arc::new(build_reference(LatticeSpec::triangular(), r_mm + r_buf, DefectKind::None, 0.0)?);
    let mut out = Vec::new();
    for scheme in [Scheme::Energy, Scheme::Force] {
        let m = defect_free_model(params, &config, r_qm, r_mm, r_buf, scheme)?;
        let r = m.residual(&m.zero())?;
        out.push(Assertion::at_most(
            format!("ghost_force_{scheme}"),
            r.max_abs(),
            1e-10,
            format!("R_QM {r_qm}, R_MM {r_mm}, R_BUF {r_buf}, {} sites", config.len()),
        ));
    }
    Ok(out)
}

/// Geometry for the equilibrium-decay check.
#[derive(Clone, Copy, Debug)]
pub struct DecaySetup {
    pub domain_radius: f64,
    pub free_radius: f64,
}

impl Default for DecaySetup {
    fn default() -> Self {
        Self {
            domain_radius: 20.0,
            free_radius: 15.0,
        }
    }
}

/// Log-log slope of `|Dū(ℓ)|_γ` for the relaxed divacancy of the full model.
pub fn equilibrium_decay(params: &TbParams, setup: DecaySetup) -> Result<Vec<Assertion>> {
    let mut cfg = ExperimentConfig {
        tb: params.clone(),
        r_qm: vec![3.0],
        ..ExperimentConfig::default()
    };
    cfg.reference.domain_radius = setup.domain_radius;
    cfg.reference.free_radius = Some(setup.free_radius);
    cfg.reference.lbfgs.tol = 1e-9;
    let study = Study::new(cfg.clone())?;
    let res = study.reference()?;
    let profile = decay_profile(&res.u_star, &study.config, cfg.gamma, 2, setup.free_radius.floor() as usize);
    let (slope, _, r2) = decay_fit(&profile).unwrap_or((f64::NAN, 0.0, 0.0));
    Ok(vec![Assertion::at_most(
        "equilibrium_decay_slope",
        (slope + 2.0).abs(),
        0.4,
        format!(
            "slope {slope:.3} (r² {r2:.4}) over shells 2..{}, {} sites, {} iterations, {:.1} s",
            setup.free_radius.floor(),
            study.config.len(),
            res.iterations,
            res.wall_time
        ),
    )])
}

/// Smallest free-DOF Hessian eigenvalue of a relaxed energy-mixing divacancy.
pub fn stability(cfg: &ExperimentConfig, r_qm: f64) -> Result<Vec<Assertion>> {
    let study = Study::new(cfg.clone())?;
    let model = study.hybrid_model(r_qm, Scheme::Energy)?;
    let res = study.solve(&model)?;
    let rep = stability_check(&model, &res.u_star, cfg.solver.stability_eigs.max(1))?;
    let lambda = rep.min_eigenvalue();
    Ok(vec![
        Assertion::at_most(
            "hybrid_solve_converged",
            if res.converged { 0.0 } else { 1.0 },
            0.0,
            format!("{} iterations, residual {:.3e}", res.iterations, res.residual_norm),
        ),
        Assertion {
            name: "hessian_min_eigenvalue".into(),
            value: lambda,
            threshold: 0.0,
            passed: lambda > 0.0,
            detail: format!(
                "{} Lanczos steps, {} free DOFs, eigenvalues {}",
                rep.lanczos_steps,
                model.n_free_dof(),
                sci(&rep.eigenvalues)
            ),
        },
    ])
}

/// Radius of the disc on which the screw strain decay is fitted.
pub const STRAIN_RADIUS: f64 = 40.0;

/// Strain decay, branch jump and predictor residual of the anti-plane screw.
pub fn screw_properties(params: &TbParams, domain_radius: f64, free_radius: f64) -> Result<Vec<Assertion>> {
    let pred = ScrewPredictor::default();
    let config = Arc::new(build_reference(LatticeSpec::triangular(), domain_radius, DefectKind::Screw, 1.0)?);
    pred.validate(&config)?;

    let core_distance = |x: [f64; 2]| (x[0] - pred.core[0]).hypot(x[1] - pred.core[1]);

    // the strain field is cheap, so it is sampled on a wider disc than the relaxation domain
    let wide = build_reference(LatticeSpec::triangular(), STRAIN_RADIUS, DefectKind::Screw, 1.0)?;
    let strain = elastic_strain(&wide, &pred, 2.0)?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let r_hi = (STRAIN_RADIUS - 2.0).floor() as usize;
    for k in 3..r_hi {
        let m = (0..wide.len())
            .filter(|&s| (k as f64..k as f64 + 1.0).contains(&core_distance(wide.position(s))))
            .map(|s| strain.scaled_max(s))
            .fold(0.0, f64::max);
        xs.push(k as f64 + 0.5);
        ys.push(m);
    }
    let strain_slope = fit_slope(&xs, &ys)?.0;

    let y = pred.core[1];
    let jump = [5.0, 10.0, 50.0]
        .iter()
        .map(|&x| Ok((pred.u0([x, y - 1e-11])? - pred.u0([x, y + 1e-11])? - pred.burgers).abs()))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let kin = Kinematics::AntiPlane { burgers: pred.burgers };
    let atm = AtmModel::new(config.clone(), params.clone(), kin, free_radius, Some(&pred))?;
    let (_, g) = atm.energy_and_gradient(&atm.zero())?;
    let (mut rs, mut fs) = (Vec::new(), Vec::new());
    for k in 2..free_radius.floor() as usize {
        let m = atm
            .free_sites()
            .iter()
            .filter(|&&s| (k as f64..k as f64 + 1.0).contains(&core_distance(config.position(s))))
            .map(|&s| g.site_norm(s))
            .fold(0.0, f64::max);
        if m > 0.0 {
            rs.push(k as f64 + 0.5);
            fs.push(m);
        }
    }
    let (res_slope, _, res_r2) = fit_slope(&rs, &fs)?;
    Ok(vec![
        Assertion::at_most(
            "screw_strain_decay_slope",
            (strain_slope + 1.0).abs(),
            0.15,
            format!("slope {strain_slope:.3} of max_ρ |e_ρ(ℓ)|/|ρ| over core-centred shells 3..{r_hi}"),
        ),
        Assertion::at_most("screw_branch_jump", jump, 1e-10, "max |u0(below) - u0(above) - b3|"),
        Assertion::at_most(
            "screw_predictor_residual_slope",
            res_slope,
            -1.8,
            format!("shell maxima of |F_ℓ(y0)|, r² {res_r2:.4}"),
        ),
    ])
}

/// `|⟨δF^H v, v⟩ - ⟨δ²E^H v, v⟩| / ‖Dv‖²` at the perfect lattice for a
/// random `v` straddling the QM/MM interface, over an `R_BUF` ladder.
pub fn jacobian_hessian_gap(params: &TbParams, seed: u64, r_bufs: &[f64]) -> Result<(Vec<f64>, Vec<Assertion>)> {
    let (r_qm, r_mm) = (5.5, 8.0);
    let widest = r_bufs.iter().copied().fold(0.0, f64::max);
    let config = Arc::new(build_reference(LatticeSpec::triangular(), r_mm + widest, DefectKind::None, 0.0)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = random_compact(&mut rng, &config, 2, r_qm + 2.0, 1.0);
    let dv2 = weighted_seminorm(&v, &config, 1.0, None)?.powi(2);
    let mut gaps = Vec::new();
    for &r_buf in r_bufs {
        let me = defect_free_model(params, &config, r_qm, r_mm, r_buf, Scheme::Energy)?;
        let mf = defect_free_model(params, &config, r_qm, r_mm, r_buf, Scheme::Force)?;
        let u = me.zero();
        let v = me.from_free(&me.to_free(&v));
        let pair = |a: &Displacement| a.as_slice().iter().zip(v.as_slice()).map(|(x, y)| x * y).sum::<f64>();
        let h = pair(&me.energy_hessian_apply(&u, &v)?);
        let j = pair(&mf.force_jacobian_apply(&u, &v)?);
        gaps.push((j - h).abs() / dv2);
    }
    let worst = gaps.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let a = Assertion {
        name: "jacobian_hessian_gap_decreasing".into(),
        value: worst,
        threshold: 0.0,
        passed: worst < 0.0,
        detail: format!("gaps {} at R_BUF {r_bufs:?}", sci(&gaps)),
    };
    Ok((gaps, vec![a]))
}

/// Every fast suite (everything except the convergence study), in criterion order.
pub fn run_all(params: &TbParams, seed: u64) -> Result<Vec<Assertion>> {
    let mut out = vec![energy_partition(params, seed)?];
    out.extend(gradient_oracles(params, seed)?);
    out.extend(invariance(params, seed)?);
    out.extend(locality(params, seed)?);
    out.extend(taylor_remainders(params, seed)?);
    out.extend(ghost_forces(params, GhostForceSetup::default())?);
    out.extend(equilibrium_decay(params, DecaySetup::default())?);
    out.extend(screw_properties(params, 16.0, 12.0)?);
    out.extend(jacobian_hessian_gap(params, seed, &[2.0, 3.0, 4.0])?.1);
    Ok(out)
}
