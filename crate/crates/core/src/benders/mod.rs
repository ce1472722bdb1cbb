//! Generalized Benders decomposition.
//!
//! The master chooses installation flags `U`, ratings `W`, `C` and one cost
//! proxy `alpha_d` per day. Each day is then priced by its own subproblem;
//! feasible days return optimality cuts, infeasible days are re-solved as
//! feasibility checks and return feasibility cuts. The loop stops once every
//! day is feasible and the bounds meet, then an exact power flow is solved
//! for every hour of the final operating point.

mod master;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::Instant;

pub use master::{build_master, Integrality, MasterConfig, MasterError, MasterProgram, MasterSize, MasterSolution, MIP_GAP, TIE_BREAK};

use crate::acpf::{recover_feasible, AcpfOptions, Recovery};
use crate::conic::SolveStatus;
use crate::exec::par_map;
use crate::ingest::TimeSeriesData;
use crate::network::NetworkModel;
use crate::opf::{
    build_day, extract_feasibility_cut, extract_optimality_cut, Cut, CutError, DayProgram, Formulation, OperatingPoint,
    OpfError, OpfSettings, Role,
};

#[derive(Debug, Error)]
pub enum BendersError {
    #[error("day {day}, iteration {iteration}: subproblem failed ({diagnostics})")]
    Numerical {
        day: usize,
        iteration: usize,
        diagnostics: String,
    },
    #[error("day {day}, iteration {iteration}: {source}")]
    Cut {
        day: usize,
        iteration: usize,
        #[source]
        source: CutError,
    },
    #[error("iteration {iteration}: {source}")]
    Master {
        iteration: usize,
        #[source]
        source: MasterError,
    },
    #[error(transparent)]
    Opf(#[from] OpfError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "tolerance", rename_all = "snake_case")]
pub enum Termination {
    /// `(UB - LB) / |LB| < epsilon`.
    Relative(f64),
    /// `UB - LB < delta`.
    Absolute(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdOptions {
    pub termination: Termination,
    pub iteration_cap: usize,
    pub workers: usize,
    pub formulation: Formulation,
    pub master: MasterConfig,
    pub opf: OpfSettings,
    /// Solve the exact power flow for the final operating point.
    pub refine: bool,
    pub acpf: AcpfOptions,
}

impl Default for GbdOptions {
    fn default() -> Self {
        let opf = OpfSettings::default();
        Self {
            termination: Termination::Relative(5e-3),
            iteration_cap: 500,
            workers: 1,
            formulation: Formulation::Socp,
            master: MasterConfig {
                feasibility_margin: 1e-4 * opf.w_slack,
                ..MasterConfig::default()
            },
            opf,
            refine: true,
            acpf: AcpfOptions::default(),
        }
    }
}

/// One line of the convergence trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lb: f64,
    pub ub: Option<f64>,
    pub gap: Option<f64>,
    pub feasible_days: usize,
    pub master_time: f64,
    pub sub_time_max: f64,
    pub sub_time_total: f64,
    /// Wall time of the whole subproblem stage.
    pub stage_time: f64,
    pub w: Vec<f64>,
    pub c: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BendersState {
    pub iteration: usize,
    /// Every cut generated, in generation order.
    pub cuts: Vec<Cut>,
    /// `(day, iteration)` pairs with a feasible subproblem.
    pub phi: Vec<(usize, usize)>,
    pub records: Vec<IterationRecord>,
}

impl BendersState {
    pub fn lb_history(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.lb).collect()
    }

    pub fn ub_history(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.ub).collect()
    }

    pub fn feasibility_cuts(&self) -> impl Iterator<Item = &crate::opf::FeasibilityCut> {
        self.cuts.iter().filter_map(|c| match c {
            Cut::Feasibility(f) => Some(f),
            Cut::Optimality(_) => None,
        })
    }

    pub fn optimality_cuts(&self) -> impl Iterator<Item = &crate::opf::OptimalityCut> {
        self.cuts.iter().filter_map(|c| match c {
            Cut::Optimality(o) => Some(o),
            Cut::Feasibility(_) => None,
        })
    }

    /// The trace as line-delimited JSON, one record per iteration.
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(out, "{}", serde_json::to_string(r).expect("plain record"));
        }
        out
    }
}

/// Lower and upper bound of one iteration. The upper bound exists only when
/// every day was feasible.
pub fn compute_bounds(master: &MasterSolution, opex: &[Option<f64>]) -> (f64, Option<f64>) {
    let ub = opex
        .iter()
        .copied()
        .sum::<Option<f64>>()
        .map(|total| master.capex + total);
    (master.lb, ub)
}

/// Relative gap used by the relative termination test.
pub fn relative_gap(lb: f64, ub: f64) -> f64 {
    if lb.abs() > 0.0 {
        (ub - lb) / lb.abs()
    } else if ub == lb {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Gaps below this are at the level of solver accuracy and count as closed.
pub const GAP_FLOOR: f64 = 1e-7;

fn converged(termination: Termination, lb: f64, ub: f64) -> bool {
    if ub - lb <= GAP_FLOOR {
        return true;
    }
    match termination {
        Termination::Relative(eps) => relative_gap(lb, ub) < eps,
        Termination::Absolute(delta) => ub - lb < delta,
    }
}

/// Largest absolute constraint violation accepted from an optimal
/// subproblem solve. Nearly infeasible days can be reported solved at points
/// with huge loss variables whose residuals are small only relative to their
/// magnitude; such solves go through the feasibility check instead.
pub const PRIMAL_CHECK: f64 = 1e-5;

/// Result of one day in one iteration.
#[derive(Debug, Clone)]
pub enum DayOutcome {
    Feasible {
        opex: f64,
        solve_time: f64,
        cut: Cut,
        point: OperatingPoint,
    },
    Infeasible {
        solve_time: f64,
        cut: Cut,
    },
}

impl DayOutcome {
    pub fn cut(&self) -> &Cut {
        match self {
            DayOutcome::Feasible { cut, .. } | DayOutcome::Infeasible { cut, .. } => cut,
        }
    }

    pub fn solve_time(&self) -> f64 {
        match self {
            DayOutcome::Feasible { solve_time, .. } | DayOutcome::Infeasible { solve_time, .. } => *solve_time,
        }
    }

    pub fn opex(&self) -> Option<f64> {
        match self {
            DayOutcome::Feasible { opex, .. } => Some(*opex),
            DayOutcome::Infeasible { .. } => None,
        }
    }
}

/// Operating-cost subproblem and feasibility check of one day.
#[derive(Debug, Clone)]
pub struct DayPair {
    pub opex: DayProgram,
    pub check: DayProgram,
}

pub fn build_days(net: &NetworkModel, ts: &TimeSeriesData, opts: &GbdOptions) -> Result<Vec<DayPair>, OpfError> {
    let days: Vec<usize> = (0..ts.n_days()).collect();
    par_map(opts.workers, &days, |&d| {
        let day = ts.day(d);
        Ok(DayPair {
            opex: build_day(net, &day, opts.formulation, Role::Opex, &opts.opf)?,
            check: build_day(net, &day, opts.formulation, Role::FeasibilityCheck, &opts.opf)?,
        })
    })
    .into_iter()
    .collect()
}

/// Solves one day at the master ratings; the feasibility check runs only if
/// the operating-cost subproblem is infeasible.
pub fn solve_day(
    net: &NetworkModel,
    pair: &DayPair,
    w: &[f64],
    c: &[f64],
    iteration: usize,
    w_slack: f64,
) -> Result<DayOutcome, BendersError> {
    let day = pair.opex.day;
    let numerical = |diagnostics: String| BendersError::Numerical {
        day,
        iteration,
        diagnostics,
    };
    let cut_err = |source| BendersError::Cut { day, iteration, source };
    let sol = pair.opex.solve(w, c)?;
    let params: Vec<f64> = w.iter().chain(c).copied().collect();
    let status = match sol.status {
        SolveStatus::Optimal if pair.opex.compiled.max_violation(&pair.opex.program, &sol.x, &params) > PRIMAL_CHECK => {
            SolveStatus::Infeasible
        }
        s => s,
    };
    match status {
        SolveStatus::Optimal => {
            let cut = extract_optimality_cut(&pair.opex, &sol, w, c, iteration).map_err(cut_err)?;
            Ok(DayOutcome::Feasible {
                opex: sol.objective,
                solve_time: sol.solve_time,
                point: pair.opex.operating_point(net, &sol),
                cut: Cut::Optimality(cut),
            })
        }
        SolveStatus::Infeasible | SolveStatus::NumericalFailure => {
            let check = pair.check.solve(w, c)?;
            if !check.is_optimal() {
                return Err(numerical(format!("feasibility check: {}", check.diagnostics)));
            }
            let cut = match extract_feasibility_cut(&pair.check, &check, w, c, w_slack, iteration) {
                Ok(cut) => cut,
                // the check found the ratings feasible, so the failed solve was not an infeasibility
                Err(CutError::ZeroObjective { .. }) if status == SolveStatus::NumericalFailure => {
                    return Err(numerical(sol.diagnostics));
                }
                Err(e) => return Err(cut_err(e)),
            };
            Ok(DayOutcome::Infeasible {
                solve_time: sol.solve_time + check.solve_time,
                cut: Cut::Feasibility(cut),
            })
        }
        SolveStatus::Unbounded => Err(numerical(sol.diagnostics)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub converged: bool,
    pub decision: MasterSolution,
    /// Operating cost per day at the final decision.
    pub opex: Vec<f64>,
    pub lb: f64,
    pub ub: Option<f64>,
    pub state: BendersState,
    /// Relaxed operating point per day at the final decision.
    pub points: Vec<OperatingPoint>,
    pub recovery: Option<Recovery>,
}

impl PlanResult {
    pub fn total_cost(&self) -> Option<f64> {
        self.ub
    }

    /// True when converged and, if refinement ran, every hour was recovered.
    pub fn success(&self) -> bool {
        self.converged && self.recovery.as_ref().map_or(true, |r| r.flagged.is_empty())
    }
}

/// Runs the decomposition over every day of `ts`.
pub fn run_gbd(net: &NetworkModel, ts: &TimeSeriesData, opts: &GbdOptions) -> Result<PlanResult, BendersError> {
    let pairs = build_days(net, ts, opts)?;
    run_gbd_with(net, ts, &pairs, opts)
}

/// [`run_gbd`] over prebuilt day programs.
pub fn run_gbd_with(
    net: &NetworkModel,
    ts: &TimeSeriesData,
    pairs: &[DayPair],
    opts: &GbdOptions,
) -> Result<PlanResult, BendersError> {
    let days = pairs.len();
    let mut state = BendersState::default();
    let mut last: Option<(MasterSolution, Vec<DayOutcome>, f64, Option<f64>)> = None;
    let mut done = false;

    for iteration in 0..opts.iteration_cap {
        state.iteration = iteration;
        let master = build_master(&net.sites, days, &state.cuts, &opts.master)
            .and_then(|m| m.solve())
            .map_err(|source| BendersError::Master { iteration, source })?;

        let stage = Instant::now();
        let outcomes: Vec<DayOutcome> = par_map(opts.workers, pairs, |pair| {
            solve_day(net, pair, &master.w, &master.c, iteration, opts.opf.w_slack)
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
        let stage_time = stage.elapsed().as_secs_f64();

        let opex: Vec<Option<f64>> = outcomes.iter().map(DayOutcome::opex).collect();
        let (master_lb, ub) = compute_bounds(&master, &opex);
        // Earlier master objectives stay valid bounds; this absorbs solver jitter.
        let lb = state.records.last().map_or(master_lb, |r| r.lb.max(master_lb));
        let times: Vec<f64> = outcomes.iter().map(DayOutcome::solve_time).collect();
        let feasible_days = opex.iter().filter(|o| o.is_some()).count();
        for (d, o) in opex.iter().enumerate() {
            if o.is_some() {
                state.phi.push((d, iteration));
            }
        }
        state.cuts.extend(outcomes.iter().map(|o| o.cut().clone()));
        state.records.push(IterationRecord {
            iteration,
            lb,
            ub,
            gap: ub.map(|u| relative_gap(lb, u)),
            feasible_days,
            master_time: master.solve_time,
            sub_time_max: times.iter().copied().fold(0.0, f64::max),
            sub_time_total: times.iter().sum(),
            stage_time,
            w: master.w.clone(),
            c: master.c.clone(),
            u: master.u.clone(),
        });
        done = ub.is_some_and(|u| converged(opts.termination, lb, u));
        last = Some((master, outcomes, lb, ub));
        if done {
            break;
        }
    }

    let (decision, outcomes, lb, ub) = last.ok_or(BendersError::Master {
        iteration: 0,
        source: MasterError::Numerical("iteration cap is zero".into()),
    })?;
    let mut points = Vec::new();
    let mut opex = Vec::new();
    for o in outcomes {
        if let DayOutcome::Feasible { opex: v, point, .. } = o {
            opex.push(v);
            points.push(point);
        }
    }
    let recovery = (done && opts.refine && opts.formulation == Formulation::Socp).then(|| {
        let hours: Vec<_> = points.iter().flat_map(|p| p.hours.iter().cloned()).collect();
        let demand: Vec<_> = (0..ts.n_hours()).map(|t| ts.net_demand(t)).collect();
        recover_feasible(net, &hours, &demand, &opts.acpf, opts.workers)
    });
    Ok(PlanResult {
        converged: done,
        decision,
        opex,
        lb,
        ub,
        state,
        points,
        recovery,
    })
}
