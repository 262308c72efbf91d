use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coupling::Scheme;
use crate::dislocation::{Case, ScrewPredictor};
use crate::error::{Error, Result};
use crate::kinematics::Kinematics;
use crate::lattice::DefectKind;
use crate::site_potential::TaylorSettings;
use crate::solver::{LbfgsSettings, NewtonSettings};
use crate::tb::TbParams;

/// `R_BUF = 1 + 0.6 ln R_QM`.
pub fn schedule_r_buf(r_qm: f64) -> f64 {
    1.0 + 0.6 * r_qm.ln()
}

/// `R_MM = R_QM³/2 + 2 R_BUF`.
pub fn schedule_r_mm(r_qm: f64, r_buf: f64) -> f64 {
    0.5 * r_qm.powi(3) + 2.0 * r_buf
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeSelection {
    Energy,
    Force,
    Both,
}

impl SchemeSelection {
    pub fn schemes(&self) -> Vec<Scheme> {
        match self {
            SchemeSelection::Energy => vec![Scheme::Energy],
            SchemeSelection::Force => vec![Scheme::Force],
            SchemeSelection::Both => vec![Scheme::Energy, Scheme::Force],
        }
    }
}

/// How `R_BUF` and `R_MM` follow `R_QM`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Use [`schedule_r_buf`].
    pub auto_buffer: bool,
    /// Use [`schedule_r_mm`].
    pub auto_mm: bool,
    /// Without `auto_buffer`: `R_BUF = buffer_offset + buffer_log_coeff · ln R_QM`.
    pub buffer_offset: f64,
    pub buffer_log_coeff: f64,
    /// Without `auto_mm`: a fixed `R_MM`; defaults to the reference free radius.
    pub r_mm: Option<f64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            auto_buffer: false,
            auto_mm: false,
            buffer_offset: -1.36,
            buffer_log_coeff: 3.4,
            r_mm: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceSettings {
    pub domain_radius: f64,
    /// Sites beyond this radius are clamped. Defaults to
    /// `domain_radius - max(r_cut, largest R_BUF)`.
    pub free_radius: Option<f64>,
    pub lbfgs: LbfgsSettings,
}

impl Default for ReferenceSettings {
    fn default() -> Self {
        Self {
            domain_radius: 27.5,
            free_radius: None,
            lbfgs: LbfgsSettings {
                tol: 1e-11,
                ..LbfgsSettings::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub lbfgs: LbfgsSettings,
    pub newton: NewtonSettings,
    /// Run the Lanczos stability check on every converged hybrid solution.
    pub stability: bool,
    pub stability_eigs: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lbfgs: LbfgsSettings {
                tol: 1e-11,
                ..LbfgsSettings::default()
            },
            newton: NewtonSettings {
                tol: 1e-11,
                ..NewtonSettings::default()
            },
            stability: false,
            stability_eigs: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Drop the largest `R_QM` from the slope fits.
    pub exclude_last: bool,
}

/// Bounds checked after a convergence study; the CLI exits nonzero if any fails.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssertionConfig {
    pub enabled: bool,
    pub geom_slope_max: f64,
    pub energy_slope_max: f64,
    /// Energy and force solutions must agree within this multiple of the
    /// larger of their errors to the reference.
    pub cross_check_factor: f64,
    /// Allowed relative increase of the geometry error between consecutive rows.
    pub monotone_tolerance: f64,
}

impl Default for AssertionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            geom_slope_max: -2.5,
            energy_slope_max: -3.0,
            cross_check_factor: 3.0,
            monotone_tolerance: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub case: Case,
    pub defect: DefectKind,
    pub r_def: f64,
    /// Defaults to in-plane for case P and anti-plane for case D.
    pub kinematics: Option<Kinematics>,
    pub dislocation: ScrewPredictor,
    pub tb: TbParams,
    pub scheme: SchemeSelection,
    pub k_e: usize,
    pub k_f: usize,
    pub r_qm: Vec<f64>,
    pub schedule: ScheduleConfig,
    pub gamma: f64,
    pub solver: SolverConfig,
    pub reference: ReferenceSettings,
    pub taylor: TaylorSettings,
    pub fit: FitConfig,
    pub assertions: AssertionConfig,
    pub output_dir: PathBuf,
    /// Directory for cached Taylor coefficients; in-memory only when absent.
    pub cache_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            case: Case::P,
            defect: DefectKind::Divacancy,
            r_def: 1.1,
            kinematics: None,
            dislocation: ScrewPredictor::default(),
            tb: TbParams::default(),
            scheme: SchemeSelection::Both,
            k_e: 2,
            k_f: 1,
            r_qm: vec![6.5, 8.0, 10.0, 12.0, 13.5],
            schedule: ScheduleConfig::default(),
            gamma: 1.0,
            solver: SolverConfig::default(),
            reference: ReferenceSettings::default(),
            taylor: TaylorSettings::default(),
            fit: FitConfig::default(),
            assertions: AssertionConfig::default(),
            output_dir: PathBuf::from("out"),
            cache_dir: None,
            seed: 0,
        }
    }
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str, json: bool) -> Result<T> {
    let located = |path: String, message: String| Error::Config {
        field: if path.is_empty() || path == "." { "<root>".into() } else { path },
        message,
    };
    if json {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| located(e.path().to_string(), e.inner().to_string()))
    } else {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| located(e.path().to_string(), e.inner().message().to_string()))
    }
}

impl ExperimentConfig {
    /// Parses TOML or JSON (JSON when the text starts with `{`) and validates.
    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: Self = parse(text, text.trim_start().starts_with('{'))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let json = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => true,
            Some("toml") => false,
            _ => text.trim_start().starts_with('{'),
        };
        let cfg: Self = parse(&text, json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn kinematics(&self) -> Kinematics {
        self.kinematics.unwrap_or(match self.case {
            Case::P => Kinematics::InPlane,
            Case::D => Kinematics::AntiPlane {
                burgers: self.dislocation.burgers,
            },
        })
    }

    /// `R_BUF` for one `R_QM`.
    pub fn r_buf(&self, r_qm: f64) -> f64 {
        if self.schedule.auto_buffer {
            schedule_r_buf(r_qm)
        } else {
            self.schedule.buffer_offset + self.schedule.buffer_log_coeff * r_qm.ln()
        }
    }

    pub fn free_radius(&self) -> f64 {
        self.reference.free_radius.unwrap_or_else(|| {
            let widest = self.r_qm.iter().map(|&r| self.r_buf(r)).fold(self.tb.r_cut, f64::max);
            self.reference.domain_radius - widest
        })
    }

    /// `R_MM` for one `R_QM`.
    pub fn r_mm(&self, r_qm: f64) -> f64 {
        if self.schedule.auto_mm {
            schedule_r_mm(r_qm, self.r_buf(r_qm))
        } else {
            self.schedule.r_mm.unwrap_or_else(|| self.free_radius())
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tb.validate()?;
        if self.r_qm.is_empty() {
            return Err(Error::config("r_qm", "needs at least one radius"));
        }
        if self.r_qm.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::config("r_qm", "radii must be positive and finite"));
        }
        if self.r_qm.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("r_qm", "radii must be strictly ascending"));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::config("gamma", "must be positive"));
        }
        if !matches!(self.k_e, 2 | 3) {
            return Err(Error::config("k_e", "supported orders are 2 and 3"));
        }
        if !matches!(self.k_f, 1 | 2) {
            return Err(Error::config("k_f", "supported orders are 1 and 2"));
        }
        if !(self.r_def >= 0.0) {
            return Err(Error::config("r_def", "must be non-negative"));
        }
        match (self.case, self.defect) {
            (Case::D, DefectKind::Screw) => {}
            (Case::D, _) => return Err(Error::config("defect", "case D requires defect = \"screw\"")),
            (Case::P, DefectKind::Screw) => return Err(Error::config("case", "a screw dislocation is case D")),
            _ => {}
        }
        match (self.case, self.kinematics()) {
            (Case::D, Kinematics::InPlane) => {
                return Err(Error::config("kinematics", "case D needs anti-plane kinematics"));
            }
            (_, Kinematics::AntiPlane { burgers }) if !(burgers > 0.0) => {
                return Err(Error::config("kinematics.burgers", "must be positive"));
            }
            _ => {}
        }
        if !self.schedule.auto_buffer {
            if !self.schedule.buffer_offset.is_finite() || !self.schedule.buffer_log_coeff.is_finite() {
                return Err(Error::config("schedule.buffer_offset", "must be finite"));
            }
            if let Some(&r) = self.r_qm.iter().find(|&&r| !(self.r_buf(r) > 0.0)) {
                return Err(Error::config(
                    "schedule.buffer_offset",
                    format!("gives a non-positive R_BUF at R_QM = {r}"),
                ));
            }
        }
        if !(self.reference.domain_radius > 0.0) {
            return Err(Error::config("reference.domain_radius", "must be positive"));
        }
        let free = self.free_radius();
        if !(free > 0.0 && free < self.reference.domain_radius) {
            return Err(Error::config(
                "reference.free_radius",
                format!("must lie in (0, domain_radius), got {free}"),
            ));
        }
        if !(self.taylor.fd_step > 0.0) {
            return Err(Error::config("taylor.fd_step", "must be positive"));
        }
        if self.solver.stability && self.solver.stability_eigs == 0 {
            return Err(Error::config("solver.stability_eigs", "must be at least 1"));
        }
        Ok(())
    }
}
