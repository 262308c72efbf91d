use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use qmmm::coupling::Scheme;
use qmmm::harness::{run_convergence_study, run_single, Assertion, ExperimentConfig};
use qmmm::site_potential::CoefficientCache;
use qmmm::{lattice::LatticeSpec, properties};

#[derive(Parser)]
#[command(name = "qmmm", version, about = "QM/MM coupling of tight binding to Taylor-expanded potentials")]
struct Cli {
    /// Experiment config, TOML or JSON. Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// RNG seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Energy,
    Force,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Energy => Scheme::Energy,
            SchemeArg::Force => Scheme::Force,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CoeffKind {
    Potential,
    Force,
}

#[derive(Subcommand)]
enum Command {
    /// One hybrid solve with per-site diagnostics.
    Solve {
        /// QM radius; defaults to the first entry of `r_qm`.
        #[arg(long)]
        r_qm: Option<f64>,
        #[arg(long, value_enum, default_value = "energy")]
        scheme: SchemeArg,
    },
    /// Reference solve plus hybrid solves over the R_QM ladder, with slope fits.
    Converge,
    /// Runs the invariant and property suites.
    Properties,
    /// Builds Taylor coefficients into the cache and prints a summary.
    Coeffs {
        #[arg(long, value_enum, default_value = "potential")]
        kind: CoeffKind,
        /// Taylor order; defaults to `k_e` or `k_f`.
        #[arg(long)]
        order: Option<usize>,
        /// Buffer radius; defaults to the schedule value at the first `r_qm`.
        #[arg(long)]
        r_buf: Option<f64>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_path(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_assertions(list: &[Assertion]) {
    for a in list {
        let tag = if a.passed { "PASS" } else { "FAIL" };
        println!("{tag} {:<40} {:>12.4e} (bound {:.3e})  {}", a.name, a.value, a.threshold, a.detail);
    }
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), serde_json::to_vec_pretty(value)?)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    match &cli.cmd {
        Command::Solve { r_qm, scheme } => {
            let r_qm = r_qm.unwrap_or(cfg.r_qm[0]);
            let rep = run_single(&cfg, r_qm, (*scheme).into())?;
            let r = &rep.result;
            println!(
                "{} R_QM {} R_MM {:.3} R_BUF {:.3}: converged {} after {} iterations, residual {:.3e}, {:.1} s",
                rep.scheme, rep.r_qm, rep.r_mm, rep.r_buf, r.converged, r.iterations, r.residual_norm, r.wall_time
            );
            if let Some(l) = rep.stability_min_eig {
                println!("smallest Hessian eigenvalue {l:.4e}");
            }
            println!("{} free sites with initial residual above threshold", rep.flagged_sites.len());
            write_json(&cfg.output_dir, &format!("solve_{}.json", rep.scheme), &rep)?;
            Ok(r.converged)
        }
        Command::Converge => {
            let rep = run_convergence_study(&cfg)?;
            println!(
                "reference: {} sites, {} iterations, {:.1} s, decay slope {:?}",
                rep.reference.n_sites, rep.reference.iterations, rep.reference.wall_s, rep.reference.decay_slope
            );
            println!("{:>7} {:>7} {:>8} {:>6} {:>12} {:>12} {:>8}  flag", "scheme", "R_QM", "R_BUF", "n_qm", "geom", "energy", "wall_s");
            for r in &rep.rows {
                let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4e}"));
                println!(
                    "{:>7} {:>7} {:>8.3} {:>6} {:>12} {:>12} {:>8.1}  {}",
                    r.scheme.to_string(),
                    r.r_qm,
                    r.r_buf,
                    r.n_qm,
                    f(r.geom_error),
                    f(r.energy_error),
                    r.wall_s,
                    r.flagged.as_deref().unwrap_or("")
                );
            }
            for fit in &rep.fits {
                println!("{} {} slope {:.3} (r² {:.4})", fit.scheme, fit.quantity, fit.slope, fit.r2);
            }
            print_assertions(&rep.assertions);
            println!("total {:.1} s; outputs in {}", rep.wall_s, cfg.output_dir.display());
            Ok(rep.pass)
        }
        Command::Properties => {
            let list = properties::run_all(&cfg.tb, cfg.seed)?;
            print_assertions(&list);
            write_json(&cfg.output_dir, "properties.json", &list)?;
            Ok(list.iter().all(|a| a.passed))
        }
        Command::Coeffs { kind, order, r_buf } => {
            let dir = cfg.cache_dir.clone().unwrap_or_else(|| cfg.output_dir.join("coeffs"));
            let cache = CoefficientCache::with_dir(&dir);
            let r_buf = r_buf.unwrap_or_else(|| cfg.r_buf(cfg.r_qm[0]));
            let (kin, spec) = (cfg.kinematics(), LatticeSpec::triangular());
            match kind {
                CoeffKind::Potential => {
                    let order = order.unwrap_or(cfg.k_e);
                    let p = cache.potential(order, kin, &cfg.tb, spec, r_buf, &cfg.taylor)?;
                    println!(
                        "site potential: order {order}, R_BUF {r_buf}, {} stencil offsets, {} nonzeros, V(0) = {:.12e}, hessian asymmetry {:.2e}",
                        p.domain.len(),
                        p.nnz(),
                        p.c0,
                        p.hessian_asymmetry
                    );
                }
                CoeffKind::Force => {
                    let order = order.unwrap_or(cfg.k_f);
                    let f = cache.force(order, kin, &cfg.tb, spec, r_buf, &cfg.taylor)?;
                    println!(
                        "force: order {order}, R_BUF {r_buf}, window {}, |F(0)| = {:.2e}, sum-rule residual {:.2e}",
                        f.window_len(),
                        f.zeroth,
                        f.asr_residual
                    );
                }
            }
            println!("cache: {}", dir.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
