use std::path::Path;
use std::process::{Command, Output};

fn qmmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmmm")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = "defect = \"vacancy\"\nr_def = 0.5\nr_qm = [3.0, 3.5, 4.0]\n\
[schedule]\nbuffer_offset = 2.0\nbuffer_log_coeff = 0.0\n[reference]\ndomain_radius = 10.0\nfree_radius = 7.0\n";

#[test]
fn malformed_config_exits_with_code_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "r_qm = [4.0, 5.0, 6.0]\n[tb]\nbeta = \"warm\"\n");
    let out = qmmm(&["--config", &cfg, "converge"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("tb.beta"), "{err}");

    let out = qmmm(&["--config", dir.path().join("missing.toml").to_str().unwrap(), "solve"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_is_rejected() {
    let out = qmmm(&["relax"]);
    assert!(!out.status.success());
}

#[test]
fn coeffs_builds_into_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out_dir = dir.path().join("out");
    let out = qmmm(&["--config", &cfg, "--out", out_dir.to_str().unwrap(), "coeffs", "--kind", "force", "--r-buf", "2.0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("force: order 1, R_BUF 2"), "{text}");
    assert!(std::fs::read_dir(out_dir.join("coeffs")).unwrap().count() > 0);
}

#[test]
fn small_solve_converges_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out_dir = dir.path().join("out");
    let out = qmmm(&["--config", &cfg, "--out", out_dir.to_str().unwrap(), "solve", "--scheme", "force"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("converged true"), "{text}");
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("solve_force.json")).unwrap()).unwrap();
    assert_eq!(json["r_qm"], 3.0);
    assert!(out_dir.join("diagnostics_force.csv").exists());
}
