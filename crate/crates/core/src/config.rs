//! Run configuration.
//!
//! A TOML file with the sections `[paths]`, `[weights]`, `[tolerances]`,
//! `[run]`, `[synthetic]` and `[boundary]`. Every key is optional and
//! defaults to the values documented on the fields. Relative paths are
//! resolved against the directory of the configuration file.
//!
//! ```toml
//! [paths]
//! case = "six_bus.case"
//! out = "out"
//!
//! [weights]
//! w_loss = 1.0
//! w_slack = 1000.0
//!
//! [run]
//! workers = 4
//! validation_mode = "relax-integrality-socp"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acpf::AcpfOptions;
use crate::benders::{GbdOptions, Integrality, MasterConfig, Termination};
use crate::conic::SolverSettings;
use crate::ingest::{BoundaryConditionSpec, BranchSelection, CandidateRule, SyntheticProfile};
use crate::network::CandidateSite;
use crate::opf::{Formulation, LossMode, OpfSettings};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "STOREPLAN_WORKERS";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationMode {
    #[default]
    None,
    /// Installation flags relaxed to `[0, 1]`, relaxed AC subproblems,
    /// absolute gap termination.
    RelaxIntegralitySocp,
    /// Installation flags relaxed, DC subproblems, absolute gap termination.
    DcLp,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Network case file, native format or `.m` matrix layout.
    pub case: Option<PathBuf>,
    /// Active-demand CSV in MW; synthetic profiles are used when absent.
    pub series: Option<PathBuf>,
    /// Planning bundle written by `ingest` and read by the other commands.
    pub bundle: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    /// 1.
    pub w_loss: f64,
    /// 1000.
    pub w_slack: f64,
    /// Loss cost per branch, 1.
    pub loss_cost: f64,
    /// Factor on the investment cost, 1.
    pub capex_scale: f64,
    /// Floor on the per-day cost proxies, 0.
    pub alpha_floor: f64,
    /// Weight on slack power in DC subproblems, 1.
    pub dc_slack_weight: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            w_loss: 1.0,
            w_slack: 1e3,
            loss_cost: 1.0,
            capex_scale: 1.0,
            alpha_floor: 0.0,
            dc_slack_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative gap, 5e-3.
    pub epsilon: f64,
    /// Absolute gap in validation modes, 0.1.
    pub delta: f64,
    /// Conic solver feasibility and gap tolerances, 1e-8.
    pub solver_feas: f64,
    pub solver_gap: f64,
    pub solver_max_iter: u32,
    /// Newton mismatch, 1e-10.
    pub acpf: f64,
    /// Feasibility cuts are imposed as `Upsilon <= -margin`; defaults to
    /// `1e-4 * w_slack` when absent.
    pub feasibility_margin: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        let s = SolverSettings::default();
        Self {
            epsilon: 5e-3,
            delta: 0.1,
            solver_feas: s.tol_feas,
            solver_gap: s.tol_gap_rel,
            solver_max_iter: s.max_iter,
            acpf: AcpfOptions::default().tolerance,
            feasibility_margin: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Run {
    pub loss_mode: LossMode,
    pub validation_mode: ValidationMode,
    pub workers: usize,
    pub seed: u64,
    pub iteration_cap: usize,
    pub day_length: usize,
    /// Use only the first `days` days of the series.
    pub days: Option<usize>,
    pub soe_init_factor: f64,
    /// Solve the exact power flow at the final point.
    pub refine: bool,
    pub enforce_q_limits: bool,
}

impl Default for Run {
    fn default() -> Self {
        Self {
            loss_mode: LossMode::Quadratic,
            validation_mode: ValidationMode::None,
            workers: 1,
            seed: 0,
            iteration_cap: 500,
            day_length: 24,
            days: None,
            soe_init_factor: 0.5,
            refine: true,
            enforce_q_limits: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Synthetic {
    pub days: usize,
    pub amplitude: f64,
    pub noise: f64,
    pub seasonal: f64,
    pub peak_hour: f64,
}

impl Default for Synthetic {
    fn default() -> Self {
        let p = SyntheticProfile::default();
        Self {
            days: p.days,
            amplitude: p.amplitude,
            noise: p.noise,
            seasonal: p.seasonal,
            peak_hour: p.peak_hour,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiteTemplate {
    pub w_min: f64,
    pub w_max: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub c_rate: f64,
    pub cost_power: f64,
    pub cost_energy: f64,
    pub soe_min: f64,
    pub soe_max: f64,
}

impl Default for SiteTemplate {
    fn default() -> Self {
        Self {
            w_min: 0.0,
            w_max: 1.0,
            c_min: 0.0,
            c_max: 4.0,
            c_rate: 0.5,
            cost_power: 1.0,
            cost_energy: 1.0,
            soe_min: 0.1,
            soe_max: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BranchRule {
    List,
    #[default]
    BetweenCandidates,
    IncidentToCandidates,
}

/// Boundary conditions applied by `ingest` when enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Boundary {
    pub enabled: bool,
    /// 0.82.
    pub tighten_factor: f64,
    pub branch_rule: BranchRule,
    /// Branch ids for `branch_rule = "list"`.
    pub branches: Vec<usize>,
    /// Candidate bus ids; voltage-violating buses when empty.
    pub candidates: Vec<usize>,
    pub relax_slack_p: bool,
    pub site: SiteTemplate,
}

impl Default for Boundary {
    fn default() -> Self {
        Self {
            enabled: false,
            tighten_factor: 0.82,
            branch_rule: BranchRule::default(),
            branches: Vec::new(),
            candidates: Vec::new(),
            relax_slack_p: true,
            site: SiteTemplate::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub weights: Weights,
    pub tolerances: Tolerances,
    pub run: Run,
    pub synthetic: Synthetic,
    pub boundary: Boundary,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: PathBuf::from("<string>"),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a file, resolving relative paths against its
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.paths.case,
            &mut cfg.paths.series,
            &mut cfg.paths.bundle,
            &mut cfg.paths.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let t = &self.tolerances;
        if !(t.epsilon > 0.0) {
            return bad(format!("tolerances.epsilon must be positive, got {}", t.epsilon));
        }
        if !(t.delta > 0.0) {
            return bad(format!("tolerances.delta must be positive, got {}", t.delta));
        }
        if !(self.weights.w_slack > 0.0) {
            return bad(format!("weights.w_slack must be positive, got {}", self.weights.w_slack));
        }
        if self.run.workers < 1 {
            return bad("run.workers must be at least 1".into());
        }
        if self.run.day_length < 1 {
            return bad("run.day_length must be at least 1".into());
        }
        if self.weights.w_loss < 0.0 || self.weights.loss_cost < 0.0 {
            return bad("loss weights must be nonnegative".into());
        }
        if !(self.boundary.tighten_factor > 0.0 && self.boundary.tighten_factor <= 1.0) {
            return bad(format!(
                "boundary.tighten_factor must lie in (0, 1], got {}",
                self.boundary.tighten_factor
            ));
        }
        Ok(())
    }

    /// Applies `--workers`/[`WORKERS_ENV`] and `--seed` overrides.
    pub fn with_overrides(mut self, workers: Option<usize>, seed: Option<u64>) -> Result<Self, ConfigError> {
        if let Some(w) = workers {
            self.run.workers = w;
        }
        if let Some(s) = seed {
            self.run.seed = s;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn solver(&self) -> SolverSettings {
        SolverSettings {
            tol_feas: self.tolerances.solver_feas,
            tol_gap_abs: self.tolerances.solver_gap,
            tol_gap_rel: self.tolerances.solver_gap,
            max_iter: self.tolerances.solver_max_iter,
        }
    }

    pub fn opf_settings(&self) -> OpfSettings {
        OpfSettings {
            loss_mode: self.run.loss_mode,
            w_loss: self.weights.w_loss,
            loss_cost: self.weights.loss_cost,
            w_slack: self.weights.w_slack,
            dc_slack_weight: self.weights.dc_slack_weight,
            soe_init_factor: self.run.soe_init_factor,
            dt: 1.0,
            day_length: self.run.day_length,
            solver: self.solver(),
        }
    }

    pub fn gbd_options(&self) -> GbdOptions {
        let opf = self.opf_settings();
        let validating = self.run.validation_mode != ValidationMode::None;
        GbdOptions {
            termination: if validating {
                Termination::Absolute(self.tolerances.delta)
            } else {
                Termination::Relative(self.tolerances.epsilon)
            },
            iteration_cap: self.run.iteration_cap,
            workers: self.run.workers,
            formulation: match self.run.validation_mode {
                ValidationMode::DcLp => Formulation::Dc,
                _ => Formulation::Socp,
            },
            master: MasterConfig {
                alpha_floor: self.weights.alpha_floor,
                capex_scale: self.weights.capex_scale,
                feasibility_margin: self
                    .tolerances
                    .feasibility_margin
                    .unwrap_or(1e-4 * self.weights.w_slack),
                integrality: if validating {
                    Integrality::Relaxed
                } else {
                    Integrality::Binary
                },
                solver: self.solver(),
            },
            opf,
            refine: self.run.refine,
            acpf: AcpfOptions {
                enforce_q_limits: self.run.enforce_q_limits,
                tolerance: self.tolerances.acpf,
                ..AcpfOptions::default()
            },
        }
    }

    pub fn synthetic_profile(&self) -> SyntheticProfile {
        SyntheticProfile {
            days: self.synthetic.days,
            seed: self.run.seed,
            day_length: self.run.day_length,
            amplitude: self.synthetic.amplitude,
            noise: self.synthetic.noise,
            seasonal: self.synthetic.seasonal,
            peak_hour: self.synthetic.peak_hour,
        }
    }

    pub fn boundary_spec(&self) -> Option<BoundaryConditionSpec> {
        let b = &self.boundary;
        if !b.enabled {
            return None;
        }
        let s = &b.site;
        Some(BoundaryConditionSpec {
            tighten_factor: b.tighten_factor,
            branches: match b.branch_rule {
                BranchRule::List => BranchSelection::List(b.branches.clone()),
                BranchRule::BetweenCandidates => BranchSelection::BetweenCandidates,
                BranchRule::IncidentToCandidates => BranchSelection::IncidentToCandidates,
            },
            relax_slack_p: b.relax_slack_p,
            candidates: if b.candidates.is_empty() {
                CandidateRule::VoltageViolating
            } else {
                CandidateRule::Explicit(b.candidates.clone())
            },
            site_template: CandidateSite {
                id: 0,
                bus: 0,
                w_min: s.w_min,
                w_max: s.w_max,
                c_min: s.c_min,
                c_max: s.c_max,
                c_rate: s.c_rate,
                cost_power: s.cost_power,
                cost_energy: s.cost_energy,
                soe_min: s.soe_min,
                soe_max: s.soe_max,
            },
        })
    }
}
