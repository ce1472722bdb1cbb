use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::Instant;

use crate::conic::{Affine, ConicError, ConicProgram, Label, SolveStatus, SolverSettings, VarBlock};
use crate::network::CandidateSite;
use crate::opf::Cut;

/// Objective weight per site index on `U`, so that among equal-cost sitings
/// the one using lower site indices wins.
pub const TIE_BREAK: f64 = 1e-9;
/// Absolute optimality gap of branch and bound.
pub const MIP_GAP: f64 = 1e-6;
const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MasterError {
    #[error("cut from day {day}, iteration {iteration} has {got} site coefficients, expected {expected}")]
    CutSites {
        day: usize,
        iteration: usize,
        expected: usize,
        got: usize,
    },
    #[error("cut from day {day}, iteration {iteration} refers to a day outside 0..{days}")]
    CutDay { day: usize, iteration: usize, days: usize },
    #[error("master problem is infeasible; feasibility cuts (day, iteration): {cuts:?}")]
    Infeasible { cuts: Vec<(usize, usize)> },
    #[error("master relaxation failed: {0}")]
    Numerical(String),
    #[error(transparent)]
    Conic(#[from] ConicError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrality {
    Binary,
    /// `0 <= U <= 1`.
    Relaxed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasterConfig {
    pub alpha_floor: f64,
    pub capex_scale: f64,
    /// Feasibility cuts are imposed as `Upsilon <= -margin`.
    pub feasibility_margin: f64,
    pub integrality: Integrality,
    pub solver: SolverSettings,
}

impl Default for MasterConfig {
    fn default() -> Self {
        Self {
            alpha_floor: 0.0,
            capex_scale: 1.0,
            feasibility_margin: 0.0,
            integrality: Integrality::Binary,
            solver: SolverSettings::default(),
        }
    }
}

/// Siting, sizing and per-day cost proxies chosen by the master.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasterSolution {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub c: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Scaled investment cost.
    pub capex: f64,
    /// `capex + sum(alpha)`.
    pub lb: f64,
    pub nodes: usize,
    pub solve_time: f64,
}

/// Master problem over a fixed cut store.
#[derive(Debug, Clone)]
pub struct MasterProgram {
    sites: Vec<CandidateSite>,
    days: usize,
    cuts: Vec<Cut>,
    config: MasterConfig,
}

/// Counts of the master as built, excluding bounds on `U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MasterSize {
    pub binaries: usize,
    pub continuous: usize,
    pub constraints: usize,
}

struct Blocks {
    u: VarBlock,
    w: VarBlock,
    c: VarBlock,
    alpha: VarBlock,
}

pub fn build_master(sites: &[CandidateSite], days: usize, cuts: &[Cut], config: &MasterConfig) -> Result<MasterProgram, MasterError> {
    let s = sites.len();
    for cut in cuts {
        let (_, a, b) = cut.coefficients();
        if a.len() != s || b.len() != s {
            return Err(MasterError::CutSites {
                day: cut.day(),
                iteration: cut.iteration(),
                expected: s,
                got: a.len().min(b.len()),
            });
        }
        if cut.day() >= days {
            return Err(MasterError::CutDay {
                day: cut.day(),
                iteration: cut.iteration(),
                days,
            });
        }
    }
    Ok(MasterProgram {
        sites: sites.to_vec(),
        days,
        cuts: cuts.to_vec(),
        config: config.clone(),
    })
}

enum NodeOutcome {
    Infeasible,
    Solved { objective: f64, x: Vec<f64> },
}

impl MasterProgram {
    pub fn size(&self) -> MasterSize {
        let (prog, _) = self.program(&vec![(0.0, 1.0); self.sites.len()]);
        MasterSize {
            binaries: self.sites.len(),
            continuous: prog.counted_variables(),
            constraints: prog.counted_constraints(),
        }
    }

    fn program(&self, bounds: &[(f64, f64)]) -> (ConicProgram, Blocks) {
        let s = self.sites.len();
        let mut prog = ConicProgram::new();
        prog.set_counting(false);
        let u = prog.add_block("u", s);
        for (k, &(lo, hi)) in bounds.iter().enumerate() {
            if lo == hi {
                prog.eq(Label::new("u_fixed", k, 0), Affine::var(u.at(k)).plus(-lo));
            } else {
                prog.geq(Label::new("u_lo", k, 0), Affine::var(u.at(k)).plus(-lo));
                prog.leq(Label::new("u_hi", k, 0), Affine::var(u.at(k)).plus(-hi));
            }
        }
        prog.set_counting(true);
        let w = prog.add_block("w", s);
        let c = prog.add_block("c", s);
        let alpha = prog.add_block("alpha", self.days);
        for (k, site) in self.sites.iter().enumerate() {
            let (wv, cv, uv) = (w.at(k), c.at(k), u.at(k));
            prog.geq(Label::new("w_min", k, 0), Affine::var(wv).term(uv, -site.w_min));
            prog.geq(Label::new("w_max", k, 0), Affine::var(uv).scaled(site.w_max).term(wv, -1.0));
            prog.geq(Label::new("c_min", k, 0), Affine::var(cv).term(uv, -site.c_min));
            prog.geq(Label::new("c_max", k, 0), Affine::var(uv).scaled(site.c_max).term(cv, -1.0));
            prog.geq(Label::new("c_rate", k, 0), Affine::var(cv).scaled(site.c_rate).term(wv, -1.0));
            prog.minimize(wv, self.config.capex_scale * site.cost_power);
            prog.minimize(cv, self.config.capex_scale * site.cost_energy);
            prog.minimize(uv, TIE_BREAK * (k + 1) as f64);
        }
        for d in 0..self.days {
            prog.geq(Label::new("alpha_floor", d, 0), Affine::var(alpha.at(d)).plus(-self.config.alpha_floor));
            prog.minimize(alpha.at(d), 1.0);
        }
        for (i, cut) in self.cuts.iter().enumerate() {
            let (k0, a, b) = cut.coefficients();
            let mut e = Affine::constant(k0);
            for k in 0..s {
                e = e.term(w.at(k), a[k]).term(c.at(k), b[k]);
            }
            match cut {
                Cut::Optimality(_) => {
                    let gap = e.scaled(-1.0).term(alpha.at(cut.day()), 1.0);
                    prog.geq(Label::new("optimality_cut", i, cut.day()), gap);
                }
                Cut::Feasibility(_) => {
                    prog.leq(Label::new("feasibility_cut", i, cut.day()), e.plus(self.config.feasibility_margin));
                }
            }
        }
        (prog, Blocks { u, w, c, alpha })
    }

    fn solve_node(&self, bounds: &[(f64, f64)]) -> Result<(NodeOutcome, Blocks), MasterError> {
        let (prog, blocks) = self.program(bounds);
        let sol = prog.compile()?.with_settings(self.config.solver).solve(&[])?;
        let out = match sol.status {
            SolveStatus::Optimal => NodeOutcome::Solved {
                objective: sol.objective,
                x: sol.x,
            },
            SolveStatus::Infeasible => NodeOutcome::Infeasible,
            SolveStatus::Unbounded | SolveStatus::NumericalFailure => {
                return Err(MasterError::Numerical(sol.diagnostics));
            }
        };
        Ok((out, blocks))
    }

    fn infeasible(&self) -> MasterError {
        MasterError::Infeasible {
            cuts: self
                .cuts
                .iter()
                .filter(|c| matches!(c, Cut::Feasibility(_)))
                .map(|c| (c.day(), c.iteration()))
                .collect(),
        }
    }

    fn solution(&self, x: &[f64], blocks: &Blocks, nodes: usize, start: Instant) -> MasterSolution {
        let take = |b: &VarBlock| x[b.start..b.start + b.len].to_vec();
        let (mut u, mut w, mut c, alpha) = (take(&blocks.u), take(&blocks.w), take(&blocks.c), take(&blocks.alpha));
        for (k, site) in self.sites.iter().enumerate() {
            u[k] = match self.config.integrality {
                Integrality::Binary => u[k].round().clamp(0.0, 1.0),
                Integrality::Relaxed => u[k].clamp(0.0, 1.0),
            };
            w[k] = w[k].clamp(site.w_min * u[k], site.w_max * u[k]);
            c[k] = c[k].clamp(site.c_min * u[k], site.c_max * u[k]);
        }
        let capex = self
            .sites
            .iter()
            .enumerate()
            .map(|(k, s)| self.config.capex_scale * (s.cost_power * w[k] + s.cost_energy * c[k]))
            .sum::<f64>();
        let lb = capex + alpha.iter().sum::<f64>();
        MasterSolution {
            u,
            w,
            c,
            alpha,
            capex,
            lb,
            nodes,
            solve_time: start.elapsed().as_secs_f64(),
        }
    }

    /// Solves the master with `U` fixed; `None` when infeasible.
    pub fn solve_fixed(&self, u: &[f64]) -> Result<Option<MasterSolution>, MasterError> {
        let start = Instant::now();
        let bounds: Vec<(f64, f64)> = u.iter().map(|&v| (v, v)).collect();
        Ok(match self.solve_node(&bounds)? {
            (NodeOutcome::Solved { x, .. }, blocks) => Some(self.solution(&x, &blocks, 1, start)),
            (NodeOutcome::Infeasible, _) => None,
        })
    }

    /// Solves the master. Binary mode runs best-bound branch and bound with
    /// most-fractional branching and re-solves the winning leaf with `U`
    /// fixed.
    pub fn solve(&self) -> Result<MasterSolution, MasterError> {
        let start = Instant::now();
        let s = self.sites.len();
        let root = vec![(0.0, 1.0); s];
        if self.config.integrality == Integrality::Relaxed {
            return match self.solve_node(&root)? {
                (NodeOutcome::Solved { x, .. }, blocks) => Ok(self.solution(&x, &blocks, 1, start)),
                (NodeOutcome::Infeasible, _) => Err(self.infeasible()),
            };
        }

        struct Node {
            id: usize,
            bound: f64,
            bounds: Vec<(f64, f64)>,
        }
        let mut open = vec![Node {
            id: 0,
            bound: f64::NEG_INFINITY,
            bounds: root,
        }];
        let mut next_id = 1;
        let mut nodes = 0;
        let key = |b: &[(f64, f64)]| -> usize { b.iter().enumerate().filter(|(_, r)| r.0 == 1.0).map(|(k, _)| k + 1).sum() };
        let dominated = |bound: f64, min_key: usize, inc: &Option<(f64, Vec<(f64, f64)>)>| match inc {
            Some((best, b)) => bound > best + MIP_GAP || (bound >= best - MIP_GAP && min_key >= key(b)),
            None => false,
        };
        let mut incumbent: Option<(f64, Vec<(f64, f64)>)> = None;
        while !open.is_empty() {
            let pick = (0..open.len())
                .min_by(|&a, &b| open[a].bound.total_cmp(&open[b].bound).then(open[a].id.cmp(&open[b].id)))
                .expect("nonempty");
            let node = open.swap_remove(pick);
            if dominated(node.bound, key(&node.bounds), &incumbent) {
                continue;
            }
            nodes += 1;
            let (outcome, blocks) = self.solve_node(&node.bounds)?;
            let (objective, x) = match outcome {
                NodeOutcome::Infeasible => continue,
                NodeOutcome::Solved { objective, x } => (objective, x),
            };
            if dominated(objective, key(&node.bounds), &incumbent) {
                continue;
            }
            let u = &x[blocks.u.start..blocks.u.start + s];
            let branch = (0..s)
                .filter(|&k| (u[k] - u[k].round()).abs() > INTEGRALITY_TOL)
                .min_by(|&a, &b| (u[a] - 0.5).abs().total_cmp(&(u[b] - 0.5).abs()).then(a.cmp(&b)));
            match branch {
                None => {
                    let fixed: Vec<(f64, f64)> = u.iter().map(|v| (v.round(), v.round())).collect();
                    if !dominated(objective, key(&fixed), &incumbent) {
                        incumbent = Some((objective, fixed));
                    }
                }
                Some(k) => {
                    for value in [0.0, 1.0] {
                        let mut b = node.bounds.clone();
                        b[k] = (value, value);
                        open.push(Node {
                            id: next_id,
                            bound: objective,
                            bounds: b,
                        });
                        next_id += 1;
                    }
                }
            }
        }
        let (_, fixed) = incumbent.ok_or_else(|| self.infeasible())?;
        match self.solve_node(&fixed)? {
            (NodeOutcome::Solved { x, .. }, blocks) => {
                let mut sol = self.solution(&x, &blocks, nodes, start);
                sol.u = fixed.iter().map(|b| b.0).collect();
                Ok(sol)
            }
            (NodeOutcome::Infeasible, _) => Err(MasterError::Numerical(
                "incumbent leaf became infeasible on re-solve".into(),
            )),
        }
    }
}
