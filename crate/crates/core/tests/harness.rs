use qmmm::coupling::Scheme;
use qmmm::fit::fit_slope;
use qmmm::harness::{run_convergence_study, run_single, schedule_r_buf, schedule_r_mm, ExperimentConfig};
use qmmm::lattice::DefectKind;
use qmmm::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn slope_fit_recovers_noisy_power_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for p in [-1.0, -2.0, -3.0, -4.0] {
        let xs: Vec<f64> = (0..8).map(|i| 5.0 * 1.25f64.powi(i)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.7 * x.powf(p) * (1.0 + rng.gen_range(-0.05..0.05))).collect();
        let (slope, _, r2) = fit_slope(&xs, &ys).unwrap();
        assert!((slope - p).abs() < 0.1, "{slope} vs {p}");
        assert!(r2 > 0.99);
    }
    assert!(fit_slope(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    assert!(fit_slope(&[1.0, 2.0, 3.0], &[1.0, 0.0, 2.0]).is_err());
}

#[test]
fn schedule_values() {
    let ln10 = std::f64::consts::LN_10;
    assert!((schedule_r_buf(10.0) - (1.0 + 0.6 * ln10)).abs() < 1e-12);
    assert!((schedule_r_buf(1.0) - 1.0).abs() < 1e-12);
    assert!((schedule_r_mm(10.0, schedule_r_buf(10.0)) - (500.0 + 2.0 * (1.0 + 0.6 * ln10))).abs() < 1e-12);
    assert!((schedule_r_mm(4.0, 2.5) - 37.0).abs() < 1e-12);

    let cfg = ExperimentConfig::from_str(
        "r_qm = [4.0, 5.0, 6.0]\n[schedule]\nauto_buffer = true\nauto_mm = true\n[reference]\ndomain_radius = 200.0\nfree_radius = 150.0\n",
    )
    .unwrap();
    for r in [4.0, 5.0, 6.0] {
        let b = 1.0 + 0.6 * f64::ln(r);
        assert!((cfg.r_buf(r) - b).abs() < 1e-12);
        assert!((cfg.r_mm(r) - (0.5 * r * r * r + 2.0 * b)).abs() < 1e-12);
    }
}

fn field_of(text: &str) -> String {
    match ExperimentConfig::from_str(text) {
        Err(Error::Config { field, .. }) => field,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn malformed_configs_name_the_field() {
    assert_eq!(field_of("r_qm = [8.0, 6.0, 7.0]"), "r_qm");
    assert_eq!(field_of("r_qm = []"), "r_qm");
    assert_eq!(field_of("[tb]\nbeta = \"warm\""), "tb.beta");
    assert_eq!(field_of("[schedule]\nbufer_offset = 3.0"), "schedule.bufer_offset");
    assert!(field_of("{\"solver\": {\"lbfgs\": {\"tol\": \"small\"}}}").starts_with("solver.lbfgs.tol"));
    assert_eq!(field_of("k_e = 4"), "k_e");
    assert_eq!(field_of("gamma = -1.0"), "gamma");
    assert_eq!(field_of("case = \"D\"\ndefect = \"vacancy\""), "defect");
    assert_eq!(field_of("r_qm = [2.0, 3.0, 4.0]\n[schedule]\nbuffer_offset = -3.0\nbuffer_log_coeff = 1.0"), "schedule.buffer_offset");
}

#[test]
fn convergence_study_needs_three_radii() {
    let cfg = ExperimentConfig {
        r_qm: vec![5.0, 6.0],
        ..ExperimentConfig::default()
    };
    assert!(matches!(run_convergence_study(&cfg), Err(Error::Config { field, .. }) if field == "r_qm"));
}

#[test]
fn defect_free_single_run_is_trivial() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig {
        defect: DefectKind::None,
        r_def: 0.0,
        r_qm: vec![7.5],
        output_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.schedule.buffer_offset = 7.0;
    cfg.schedule.buffer_log_coeff = 0.0;
    cfg.schedule.r_mm = Some(9.0);
    cfg.reference.domain_radius = 17.0;
    cfg.reference.free_radius = Some(14.0);
    cfg.solver.newton.tol = 1e-8;
    let rep = run_single(&cfg, 7.5, Scheme::Force).unwrap();
    assert!(rep.result.converged);
    assert_eq!(rep.result.iterations, 0);
    assert_eq!(rep.result.u_star.max_abs(), 0.0);
    assert!(rep.flagged_sites.is_empty());
    let text = std::fs::read_to_string(dir.path().join("diagnostics_force.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "site,x,y,region,u_norm,du_gamma,residual,initial_residual");
    assert!(lines.count() > 900);
    assert!(dir.path().join("decay_force.csv").exists());
    assert!(dir.path().join("history_force.json").exists());
    assert!(dir.path().join("geometry.json").exists());
}
