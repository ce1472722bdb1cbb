//! Daily operational subproblems.
//!
//! Each day is a convex program over the grid state of every hour plus the
//! storage trajectories, with the rated power `W_s` and energy `C_s` of each
//! site fixed to master values through tagged equalities. Three variants are
//! built from the same constraint generators:
//!
//! - the relaxed AC subproblem minimizing loss cost,
//! - its feasibility check, where the ratings may grow through penalized
//!   nonnegative slacks,
//! - a lossless DC counterpart used only for validation.
//!
//! Sign conventions: bus demand and storage power are positive when
//! consuming; `V` is the squared voltage magnitude; `p_s`, `q_s` are flows at
//! the sending end and `p_o`, `q_o` the series losses, so the receiving end
//! gets `p_s - p_o`.

mod build;
mod centralized;
mod cuts;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{CompiledProgram, ConicError, ConicProgram, ConicSolutionRecord, SolverSettings, VarBlock};
use crate::ingest::DayData;
use crate::network::NetworkModel;

pub use build::{HourVars, Layout};
pub use centralized::{build_centralized, CentralizedProgram, CentralizedSolution};
pub use cuts::{extract_feasibility_cut, extract_optimality_cut, Cut, CutError, FeasibilityCut, OptimalityCut};

#[derive(Debug, Error)]
pub enum OpfError {
    #[error("day {day} has {got} hours, expected {expected}")]
    DayLength { day: usize, expected: usize, got: usize },
    #[error("day {day}, hour {hour}: expected {expected} bus values, got {got}")]
    Dimension {
        day: usize,
        hour: usize,
        expected: usize,
        got: usize,
    },
    #[error("site {site}: initial state of energy {init} lies outside [{lo}, {hi}] of rated energy")]
    InitialEnergy { site: usize, init: f64, lo: f64, hi: f64 },
    #[error("expected {expected} linking values, got {got}")]
    Linking { expected: usize, got: usize },
    #[error(transparent)]
    Conic(#[from] ConicError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Penalize the loss bound `K` linearly.
    Linear,
    /// Penalize squared reactive losses.
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    /// Second-order-cone relaxed AC grid model.
    Socp,
    /// Lossless linear DC grid model.
    Dc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Ratings fixed, operating cost minimized.
    Opex,
    /// Ratings may grow through penalized slacks.
    FeasibilityCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpfSettings {
    pub loss_mode: LossMode,
    pub w_loss: f64,
    /// Loss cost per branch, uniform.
    pub loss_cost: f64,
    pub w_slack: f64,
    /// Weight on slack active power in DC subproblems.
    pub dc_slack_weight: f64,
    /// Initial state of energy as this fraction of `(soe_max - soe_min) * C`.
    pub soe_init_factor: f64,
    /// Hours per time step.
    pub dt: f64,
    pub day_length: usize,
    pub solver: SolverSettings,
}

impl Default for OpfSettings {
    fn default() -> Self {
        Self {
            loss_mode: LossMode::Quadratic,
            w_loss: 1.0,
            loss_cost: 1.0,
            w_slack: 1e3,
            dc_slack_weight: 1.0,
            soe_init_factor: 0.5,
            dt: 1.0,
            day_length: 24,
            solver: SolverSettings::default(),
        }
    }
}

/// Relaxed-model variables of one hour.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HourPoint {
    pub v: Vec<f64>,
    pub theta_n: Vec<f64>,
    pub p_n: Vec<f64>,
    pub q_n: Vec<f64>,
    pub theta_l: Vec<f64>,
    pub p_s: Vec<f64>,
    pub q_s: Vec<f64>,
    pub p_o: Vec<f64>,
    pub q_o: Vec<f64>,
    pub k: Vec<f64>,
    pub slack_p: f64,
    pub slack_q: f64,
    /// Reactive output per generator, slack unit included.
    pub gen_q: Vec<f64>,
    pub site_p: Vec<f64>,
    pub site_q: Vec<f64>,
}

impl HourPoint {
    pub fn zeros(net: &NetworkModel) -> Self {
        let (n, l, s) = (net.n_buses(), net.n_branches(), net.n_sites());
        Self {
            v: vec![0.0; n],
            theta_n: vec![0.0; n],
            p_n: vec![0.0; n],
            q_n: vec![0.0; n],
            theta_l: vec![0.0; l],
            p_s: vec![0.0; l],
            q_s: vec![0.0; l],
            p_o: vec![0.0; l],
            q_o: vec![0.0; l],
            k: vec![0.0; l],
            slack_p: 0.0,
            slack_q: 0.0,
            gen_q: vec![0.0; net.generators.len()],
            site_p: vec![0.0; s],
            site_q: vec![0.0; s],
        }
    }
}

/// Optimal grid and storage state of one day.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub day: usize,
    pub hours: Vec<HourPoint>,
    /// State of energy per site, `hours + 1` values each.
    pub soe: Vec<Vec<f64>>,
}

/// A compiled daily program with its variable layout.
#[derive(Debug, Clone)]
pub struct DayProgram {
    pub day: usize,
    pub formulation: Formulation,
    pub role: Role,
    pub program: ConicProgram,
    pub compiled: CompiledProgram,
    pub layout: Layout,
}

impl DayProgram {
    pub fn n_sites(&self) -> usize {
        self.layout.w.len
    }

    /// Solves at master ratings `w_hat`, `c_hat`.
    pub fn solve(&self, w_hat: &[f64], c_hat: &[f64]) -> Result<ConicSolutionRecord, OpfError> {
        let s = self.n_sites();
        if w_hat.len() != s || c_hat.len() != s {
            return Err(OpfError::Linking {
                expected: s,
                got: w_hat.len().min(c_hat.len()),
            });
        }
        let params: Vec<f64> = w_hat.iter().chain(c_hat).copied().collect();
        Ok(self.compiled.solve(&params)?)
    }

    pub fn operating_point(&self, net: &NetworkModel, sol: &ConicSolutionRecord) -> OperatingPoint {
        self.layout.extract(net, self.day, &sol.x)
    }

    /// Values of the rating slacks of a feasibility check, `(s_W, s_C)`.
    pub fn rating_slacks(&self, sol: &ConicSolutionRecord) -> Option<(Vec<f64>, Vec<f64>)> {
        let sw = self.layout.slack_w.as_ref()?;
        let sc = self.layout.slack_c.as_ref()?;
        Some((sol.values(sw).to_vec(), sol.values(sc).to_vec()))
    }
}

fn check_day(net: &NetworkModel, day: &DayData, settings: &OpfSettings) -> Result<(), OpfError> {
    if day.p.len() != settings.day_length || day.q.len() != settings.day_length {
        return Err(OpfError::DayLength {
            day: day.index,
            expected: settings.day_length,
            got: day.p.len(),
        });
    }
    for (hour, (p, q)) in day.p.iter().zip(&day.q).enumerate() {
        if p.len() != net.n_buses() || q.len() != net.n_buses() {
            return Err(OpfError::Dimension {
                day: day.index,
                hour,
                expected: net.n_buses(),
                got: p.len().min(q.len()),
            });
        }
    }
    check_initial_energy(net, settings)
}

fn check_initial_energy(net: &NetworkModel, settings: &OpfSettings) -> Result<(), OpfError> {
    for s in &net.sites {
        let init = settings.soe_init_factor * (s.soe_max - s.soe_min);
        if init < s.soe_min - 1e-12 || init > s.soe_max + 1e-12 {
            return Err(OpfError::InitialEnergy {
                site: s.id,
                init,
                lo: s.soe_min,
                hi: s.soe_max,
            });
        }
    }
    Ok(())
}

/// Builds the daily program of the given variant.
pub fn build_day(
    net: &NetworkModel,
    day: &DayData,
    formulation: Formulation,
    role: Role,
    settings: &OpfSettings,
) -> Result<DayProgram, OpfError> {
    check_day(net, day, settings)?;
    let (program, layout) = build::day_program(net, day, formulation, role, settings);
    let compiled = program.compile()?.with_settings(settings.solver);
    Ok(DayProgram {
        day: day.index,
        formulation,
        role,
        program,
        compiled,
        layout,
    })
}

/// Relaxed AC subproblem minimizing the loss cost at fixed ratings.
pub fn build_subproblem(net: &NetworkModel, day: &DayData, settings: &OpfSettings) -> Result<DayProgram, OpfError> {
    build_day(net, day, Formulation::Socp, Role::Opex, settings)
}

/// Feasibility check of [`build_subproblem`].
pub fn build_feasibility_subproblem(
    net: &NetworkModel,
    day: &DayData,
    settings: &OpfSettings,
) -> Result<DayProgram, OpfError> {
    build_day(net, day, Formulation::Socp, Role::FeasibilityCheck, settings)
}

/// Lossless DC subproblem minimizing weighted slack active power.
pub fn build_dc_subproblem(net: &NetworkModel, day: &DayData, settings: &OpfSettings) -> Result<DayProgram, OpfError> {
    build_day(net, day, Formulation::Dc, Role::Opex, settings)
}

/// Operating cost of an hour under the given loss penalty.
pub fn hour_opex(q_o: &[f64], k: &[f64], settings: &OpfSettings) -> f64 {
    let w = settings.w_loss * settings.loss_cost;
    match settings.loss_mode {
        LossMode::Quadratic => w * q_o.iter().map(|q| q * q).sum::<f64>(),
        LossMode::Linear => w * k.iter().sum::<f64>(),
    }
}

pub(crate) fn block_values<'a>(x: &'a [f64], b: &VarBlock) -> &'a [f64] {
    &x[b.start..b.start + b.len]
}

#[cfg(test)]
mod tests;
