//! Acceptance gate: one PASS/FAIL line per criterion, with the individual
//! checks underneath. Exits nonzero if a criterion could not be evaluated,
//! or if any criterion fails and `ACCEPTANCE_STRICT=1` is set.

use qmmm::harness::{run_convergence_study, Assertion, ExperimentConfig};
use qmmm::properties::{self, DecaySetup, GhostForceSetup};
use qmmm::tb::TbParams;
use qmmm::Result;
use std::process::ExitCode;
use std::time::Instant;

struct Criterion {
    id: usize,
    title: &'static str,
    checks: Vec<Assertion>,
    error: Option<String>,
}

impl Criterion {
    fn passed(&self) -> bool {
        self.error.is_none() && !self.checks.is_empty() && self.checks.iter().all(|a| a.passed)
    }
}

fn runtime(name: &str, secs: f64, limit: f64) -> Assertion {
    Assertion {
        name: format!("{name}_runtime_s"),
        value: secs,
        threshold: limit,
        passed: secs < limit,
        detail: String::new(),
    }
}

fn timed(id: usize, title: &'static str, limit: Option<f64>, f: impl FnOnce() -> Result<Vec<Assertion>>) -> Criterion {
    let t = Instant::now();
    let res = f();
    let secs = t.elapsed().as_secs_f64();
    match res {
        Ok(mut checks) => {
            if let Some(l) = limit {
                checks.push(runtime(title, secs, l));
            }
            Criterion { id, title, checks, error: None }
        }
        Err(e) => Criterion { id, title, checks: Vec::new(), error: Some(e.to_string()) },
    }
}

fn stability_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig { r_qm: vec![6.0], ..ExperimentConfig::default() };
    cfg.reference.domain_radius = 14.0;
    cfg.reference.free_radius = Some(9.0);
    cfg.schedule.buffer_offset = 4.0;
    cfg.schedule.buffer_log_coeff = 0.0;
    cfg
}

fn convergence() -> (Criterion, Criterion) {
    let dir = tempfile::tempdir().expect("temporary directory");
    let cfg = ExperimentConfig { output_dir: dir.path().to_path_buf(), ..ExperimentConfig::default() };
    let title8 = "convergence_rates";
    let title9 = "scheme_cross_check";
    let t = Instant::now();
    match run_convergence_study(&cfg) {
        Ok(rep) => {
            let secs = t.elapsed().as_secs_f64();
            let (mut c8, c9): (Vec<_>, Vec<_>) =
                rep.assertions.into_iter().partition(|a| a.name != "scheme_cross_check");
            c8.push(runtime("convergence_study", secs, 900.0));
            (
                Criterion { id: 8, title: title8, checks: c8, error: None },
                Criterion { id: 9, title: title9, checks: c9, error: None },
            )
        }
        Err(e) => (
            Criterion { id: 8, title: title8, checks: Vec::new(), error: Some(e.to_string()) },
            Criterion { id: 9, title: title9, checks: Vec::new(), error: Some(e.to_string()) },
        ),
    }
}

fn main() -> ExitCode {
    // libtest flags such as --nocapture are accepted and ignored
    let p = TbParams::default();
    let seed = ExperimentConfig::default().seed;
    let mut all = vec![
        timed(1, "energy_partition", Some(5.0), || Ok(vec![properties::energy_partition(&p, seed)?])),
        timed(2, "gradient_oracles", Some(30.0), || properties::gradient_oracles(&p, seed)),
        timed(3, "invariance", None, || properties::invariance(&p, seed)),
        timed(4, "locality", Some(120.0), || properties::locality(&p, seed)),
        timed(5, "taylor_remainders", None, || properties::taylor_remainders(&p, seed)),
        timed(6, "no_ghost_forces", None, || properties::ghost_forces(&p, GhostForceSetup::default())),
        timed(7, "equilibrium_decay", Some(300.0), || properties::equilibrium_decay(&p, DecaySetup::default())),
    ];
    let (c8, c9) = convergence();
    all.push(c8);
    all.push(c9);
    all.push(timed(10, "stability", None, || properties::stability(&stability_config(), 6.0)));
    all.push(timed(11, "screw_dislocation", None, || properties::screw_properties(&p, 16.0, 12.0)));
    all.push(timed(12, "jacobian_hessian_proximity", None, || {
        Ok(properties::jacobian_hessian_gap(&p, seed, &[2.0, 3.0, 4.0])?.1)
    }));

    let (mut failed, mut errored) = (0, 0);
    for c in &all {
        let tag = if c.passed() { "PASS" } else { "FAIL" };
        println!("{tag} criterion {:>2}: {}", c.id, c.title);
        if let Some(e) = &c.error {
            println!("       error: {e}");
            errored += 1;
        }
        for a in &c.checks {
            let t = if a.passed { "ok  " } else { "FAIL" };
            println!("       {t} {:<36} {:>12.4e} (bound {:.3e})  {}", a.name, a.value, a.threshold, a.detail);
        }
        if !c.passed() {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", all.len() - failed, all.len());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if errored == 0 && (failed == 0 || !strict) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
