use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DayProgram, Role};
use crate::conic::{ConicSolutionRecord, SolveStatus};

#[derive(Debug, Error, PartialEq)]
pub enum CutError {
    #[error("day {day}: cannot build a cut from a {status:?} solve")]
    NotOptimal { day: usize, status: SolveStatus },
    #[error("day {day}: optimality cuts need an operating-cost subproblem")]
    WrongRole { day: usize },
    #[error("day {day}: feasibility check has zero objective; the ratings are feasible")]
    ZeroObjective { day: usize },
    #[error("day {day}: non-finite multiplier for site {site}")]
    NonFinite { day: usize, site: usize },
}

/// Linear under-estimator of a day's operating cost around the anchor
/// ratings: `opex + lambda . (W - W0) + mu . (C - C0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityCut {
    pub day: usize,
    pub iteration: usize,
    pub opex: f64,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub w_anchor: Vec<f64>,
    pub c_anchor: Vec<f64>,
}

impl OptimalityCut {
    pub fn eval(&self, w: &[f64], c: &[f64]) -> f64 {
        self.opex + affine(&self.lambda, w, &self.w_anchor) + affine(&self.mu, c, &self.c_anchor)
    }
}

/// Valid inequality `penalty + nu . (W - W0) + xi . (C - C0) <= 0` excluding
/// ratings for which a day has no feasible operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityCut {
    pub day: usize,
    pub iteration: usize,
    /// `w_slack * sum(s_W + s_C)` at the anchor.
    pub penalty: f64,
    pub slack_w: Vec<f64>,
    pub slack_c: Vec<f64>,
    pub nu: Vec<f64>,
    pub xi: Vec<f64>,
    pub w_anchor: Vec<f64>,
    pub c_anchor: Vec<f64>,
}

impl FeasibilityCut {
    pub fn eval(&self, w: &[f64], c: &[f64]) -> f64 {
        self.penalty + affine(&self.nu, w, &self.w_anchor) + affine(&self.xi, c, &self.c_anchor)
    }
}

fn affine(coef: &[f64], x: &[f64], anchor: &[f64]) -> f64 {
    coef.iter().zip(x).zip(anchor).map(|((k, x), a)| k * (x - a)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Cut {
    Optimality(OptimalityCut),
    Feasibility(FeasibilityCut),
}

impl Cut {
    pub fn day(&self) -> usize {
        match self {
            Cut::Optimality(c) => c.day,
            Cut::Feasibility(c) => c.day,
        }
    }

    pub fn iteration(&self) -> usize {
        match self {
            Cut::Optimality(c) => c.iteration,
            Cut::Feasibility(c) => c.iteration,
        }
    }

    /// The cut as `constant + a . W + b . C`.
    pub fn coefficients(&self) -> (f64, Vec<f64>, Vec<f64>) {
        let (base, a, b, w0, c0) = match self {
            Cut::Optimality(c) => (c.opex, &c.lambda, &c.mu, &c.w_anchor, &c.c_anchor),
            Cut::Feasibility(c) => (c.penalty, &c.nu, &c.xi, &c.w_anchor, &c.c_anchor),
        };
        let shift: f64 = a.iter().zip(w0).map(|(k, x)| k * x).sum::<f64>()
            + b.iter().zip(c0).map(|(k, x)| k * x).sum::<f64>();
        (base - shift, a.clone(), b.clone())
    }

    pub fn eval(&self, w: &[f64], c: &[f64]) -> f64 {
        match self {
            Cut::Optimality(k) => k.eval(w, c),
            Cut::Feasibility(k) => k.eval(w, c),
        }
    }
}

fn multipliers(prog: &DayProgram, sol: &ConicSolutionRecord) -> Result<(Vec<f64>, Vec<f64>), CutError> {
    let s = prog.n_sites();
    let sens = &sol.param_sensitivities;
    if let Some(site) = sens.iter().position(|v| !v.is_finite()) {
        return Err(CutError::NonFinite {
            day: prog.day,
            site: site % s.max(1),
        });
    }
    Ok((sens[..s].to_vec(), sens[s..2 * s].to_vec()))
}

fn require_optimal(prog: &DayProgram, sol: &ConicSolutionRecord) -> Result<(), CutError> {
    if sol.is_optimal() {
        Ok(())
    } else {
        Err(CutError::NotOptimal {
            day: prog.day,
            status: sol.status,
        })
    }
}

/// Optimality cut from an optimal operating-cost solve at `(w, c)`.
pub fn extract_optimality_cut(
    prog: &DayProgram,
    sol: &ConicSolutionRecord,
    w: &[f64],
    c: &[f64],
    iteration: usize,
) -> Result<OptimalityCut, CutError> {
    require_optimal(prog, sol)?;
    if prog.role != Role::Opex {
        return Err(CutError::WrongRole { day: prog.day });
    }
    let (lambda, mu) = multipliers(prog, sol)?;
    Ok(OptimalityCut {
        day: prog.day,
        iteration,
        opex: sol.objective,
        lambda,
        mu,
        w_anchor: w.to_vec(),
        c_anchor: c.to_vec(),
    })
}

/// Feasibility cut from an optimal feasibility-check solve at `(w, c)`.
pub fn extract_feasibility_cut(
    prog: &DayProgram,
    sol: &ConicSolutionRecord,
    w: &[f64],
    c: &[f64],
    w_slack: f64,
    iteration: usize,
) -> Result<FeasibilityCut, CutError> {
    require_optimal(prog, sol)?;
    let (slack_w, slack_c) = prog.rating_slacks(sol).ok_or(CutError::WrongRole { day: prog.day })?;
    let slack_w: Vec<f64> = slack_w.into_iter().map(|v| v.max(0.0)).collect();
    let slack_c: Vec<f64> = slack_c.into_iter().map(|v| v.max(0.0)).collect();
    let total: f64 = slack_w.iter().chain(&slack_c).sum();
    if total <= 1e-9 {
        return Err(CutError::ZeroObjective { day: prog.day });
    }
    let (nu, xi) = multipliers(prog, sol)?;
    Ok(FeasibilityCut {
        day: prog.day,
        iteration,
        penalty: w_slack * total,
        slack_w,
        slack_c,
        nu,
        xi,
        w_anchor: w.to_vec(),
        c_anchor: c.to_vec(),
    })
}
