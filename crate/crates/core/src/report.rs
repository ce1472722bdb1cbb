//! Model sizes, representative days, scalability sweeps and output files.
//!
//! CSV schemas (one header row, comma separated):
//!
//! | file | columns |
//! |---|---|
//! | `trace.csv` | iteration, lb, ub, gap, feasible_days, master_time, sub_time_max, sub_time_total, stage_time |
//! | `decision.csv` | site, bus, u, w, c |
//! | `residuals.csv` | hour, kind, index, value |
//! | `residual_summary.csv` | kind, count, min, q25, median, q75, max |
//! | `sizes.csv` | mode, g, n, l, s, t, d, p, cut_rounds, binary_vars, continuous_vars, constraints, parameters |
//! | `timing.csv` | subproblems, iterations, master_seconds, subproblem_seconds, total_seconds |
//! | `recovery.csv` | hour, converged, flat_start, iterations, mismatch, switched, solve_time |
//!
//! Times are wall-clock seconds. With the `plot` feature, `convergence.png`
//! (lower bound blue, upper bound red) and `residuals.png` (sorted log10
//! nodal residuals red, cone gaps blue) are written next to the tables. The
//! images carry no text.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acpf::{Distribution, Recovery, ResidualReport};
use crate::benders::{BendersState, MasterSolution};
use crate::ingest::TimeSeriesData;
use crate::network::{BusKind, NetworkModel};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("horizon of {t} hours is not {d} days of {p} hours")]
    Horizon { t: usize, d: usize, p: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("plot {path}: {msg}")]
    Plot { path: PathBuf, msg: String },
    #[error("no PQ bus carries load")]
    NoLoadBus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeMode {
    Centralized,
    Master,
    Subproblem,
}

/// Dimensions entering the size formulas. `g` counts generators other than
/// the slack unit; `cut_rounds` is the number of Benders iterations whose
/// cuts sit in the master.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SizeInputs {
    pub g: usize,
    pub n: usize,
    pub l: usize,
    pub s: usize,
    pub t: usize,
    pub d: usize,
    pub p: usize,
    pub cut_rounds: usize,
}

impl SizeInputs {
    pub fn of(net: &NetworkModel, days: usize, day_length: usize, cut_rounds: usize) -> Self {
        Self {
            g: net.non_slack_generators().count(),
            n: net.n_buses(),
            l: net.n_branches(),
            s: net.n_sites(),
            t: days * day_length,
            d: days,
            p: day_length,
            cut_rounds,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeReport {
    pub mode: SizeMode,
    pub binary_vars: usize,
    pub continuous_vars: usize,
    pub constraints: usize,
    pub parameters: usize,
    pub inputs: SizeInputs,
}

/// Continuous variables per hour of the relaxed grid model.
pub fn hourly_variables(i: &SizeInputs) -> usize {
    2 + i.g + 4 * i.n + 6 * i.l
}

/// Constraints per hour of the relaxed grid model.
pub fn hourly_constraints(i: &SizeInputs) -> usize {
    7 + 2 * i.g + 8 * i.n + 10 * i.l
}

/// Closed-form problem size of one model variant.
pub fn model_size(inputs: SizeInputs, mode: SizeMode) -> Result<SizeReport, ReportError> {
    let i = inputs;
    if i.t != i.d * i.p {
        return Err(ReportError::Horizon { t: i.t, d: i.d, p: i.p });
    }
    let (hv, hc) = (hourly_variables(&i), hourly_constraints(&i));
    let (binary_vars, continuous_vars, constraints, parameters) = match mode {
        SizeMode::Centralized => (
            i.s,
            hv * i.t + (2 * i.t + (i.t + 1) + 2) * i.s,
            hc * i.t + (2 * i.t + 2 * (i.t + 1) + 2 * i.d + 6) * i.s,
            0,
        ),
        SizeMode::Master => (i.s, 2 * i.s + i.d, 5 * i.s + i.d * (i.cut_rounds + 1), 0),
        SizeMode::Subproblem => (
            0,
            hv * i.p + (2 * i.p + (i.p + 1) + 2) * i.s,
            hc * i.p + (2 * i.p + 2 * (i.p + 1) + 5) * i.s,
            2 * i.s,
        ),
    };
    Ok(SizeReport {
        mode,
        binary_vars,
        continuous_vars,
        constraints,
        parameters,
        inputs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Season {
    Djf,
    Mam,
    Jja,
    Son,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Djf, Season::Mam, Season::Jja, Season::Son];

    /// Meteorological season of a zero-based day of a non-leap year.
    pub fn of_day_of_year(doy: usize) -> Self {
        const MONTH_END: [usize; 12] = [31, 59, 90, 120, 151, 181, 212, 243, 273, 304, 334, 365];
        let month = MONTH_END.iter().position(|&e| doy % 365 < e).unwrap_or(11);
        match month {
            11 | 0 | 1 => Season::Djf,
            2..=4 => Season::Mam,
            5..=7 => Season::Jja,
            _ => Season::Son,
        }
    }
}

/// Season label of each horizon day when day 0 is day-of-year `start`.
pub fn seasons_from(start: usize, days: usize) -> Vec<Season> {
    (0..days).map(|d| Season::of_day_of_year(start + d)).collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RepresentativeDays {
    pub bus: usize,
    /// Chosen days per season, best first.
    pub chosen: Vec<(Season, Vec<usize>)>,
    pub warnings: Vec<String>,
}

impl RepresentativeDays {
    pub fn days(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.chosen.iter().flat_map(|(_, d)| d.iter().copied()).collect();
        all.sort_unstable();
        all
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// PQ bus with the largest total active load over the horizon.
pub fn largest_load_bus(net: &NetworkModel, ts: &TimeSeriesData) -> Result<usize, ReportError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, bus) in net.buses.iter().enumerate() {
        if bus.kind != BusKind::Pq {
            continue;
        }
        let total: f64 = ts.load_p.iter().map(|row| row[i]).sum();
        if total > 0.0 && best.map_or(true, |(_, b)| total > b) {
            best = Some((i, total));
        }
    }
    best.map(|(i, _)| i).ok_or(ReportError::NoLoadBus)
}

/// Per season, the `k` days whose load profile at the largest-load PQ bus is
/// closest in RMSE to the element-wise seasonal median profile.
pub fn representative_days(
    net: &NetworkModel,
    ts: &TimeSeriesData,
    seasons: &[Season],
    k: usize,
) -> Result<RepresentativeDays, ReportError> {
    let bus = largest_load_bus(net, ts)?;
    let p = ts.day_length;
    let profile = |d: usize| -> Vec<f64> { (0..p).map(|h| ts.load_p[d * p + h][bus]).collect() };
    let mut out = RepresentativeDays {
        bus,
        ..RepresentativeDays::default()
    };
    for season in Season::ALL {
        let members: Vec<usize> = (0..ts.n_days()).filter(|&d| seasons.get(d) == Some(&season)).collect();
        if members.is_empty() {
            out.warnings.push(format!("season {season:?} has no days; skipped"));
            continue;
        }
        let profiles: Vec<Vec<f64>> = members.iter().map(|&d| profile(d)).collect();
        let med: Vec<f64> = (0..p)
            .map(|h| median(&mut profiles.iter().map(|pr| pr[h]).collect::<Vec<_>>()))
            .collect();
        let mut scored: Vec<(f64, usize)> = members
            .iter()
            .zip(&profiles)
            .map(|(&d, pr)| (rmse(pr, &med), d))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.chosen.push((season, scored.iter().take(k).map(|&(_, d)| d).collect()));
    }
    Ok(out)
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub lb: f64,
    pub ub: Option<f64>,
    pub gap: Option<f64>,
    pub feasible_days: usize,
    pub master_time: f64,
    pub sub_time_max: f64,
    pub sub_time_total: f64,
    pub stage_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub site: usize,
    pub bus: usize,
    pub u: f64,
    pub w: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub hour: usize,
    pub kind: String,
    pub index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub kind: String,
    pub count: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl SummaryRow {
    fn new(kind: &str, d: Distribution) -> Self {
        Self {
            kind: kind.into(),
            count: d.count,
            min: d.min,
            q25: d.q25,
            median: d.median,
            q75: d.q75,
            max: d.max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub mode: SizeMode,
    pub g: usize,
    pub n: usize,
    pub l: usize,
    pub s: usize,
    pub t: usize,
    pub d: usize,
    pub p: usize,
    pub cut_rounds: usize,
    pub binary_vars: usize,
    pub continuous_vars: usize,
    pub constraints: usize,
    pub parameters: usize,
}

impl From<&SizeReport> for SizeRow {
    fn from(r: &SizeReport) -> Self {
        let i = r.inputs;
        Self {
            mode: r.mode,
            g: i.g,
            n: i.n,
            l: i.l,
            s: i.s,
            t: i.t,
            d: i.d,
            p: i.p,
            cut_rounds: i.cut_rounds,
            binary_vars: r.binary_vars,
            continuous_vars: r.continuous_vars,
            constraints: r.constraints,
            parameters: r.parameters,
        }
    }
}

/// One horizon size of a scalability sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub subproblems: usize,
    pub iterations: usize,
    pub master_seconds: f64,
    pub subproblem_seconds: f64,
    pub total_seconds: f64,
}

impl TimingRow {
    pub fn of(state: &BendersState, subproblems: usize, total_seconds: f64) -> Self {
        Self {
            subproblems,
            iterations: state.records.len(),
            master_seconds: state.records.iter().map(|r| r.master_time).sum(),
            subproblem_seconds: state.records.iter().map(|r| r.stage_time).sum(),
            total_seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub hour: usize,
    pub converged: bool,
    pub flat_start: bool,
    pub iterations: usize,
    pub mismatch: f64,
    pub switched: usize,
    pub solve_time: f64,
}

pub fn recovery_rows(rec: &Recovery) -> Vec<RecoveryRow> {
    rec.hours
        .iter()
        .enumerate()
        .map(|(hour, h)| RecoveryRow {
            hour,
            converged: h.state.converged,
            flat_start: h.flat_start,
            iterations: h.state.iterations,
            mismatch: h.state.mismatch,
            switched: h.state.switched.len(),
            solve_time: h.state.solve_time,
        })
        .collect()
}

pub fn trace_rows(state: &BendersState) -> Vec<TraceRow> {
    state
        .records
        .iter()
        .map(|r| TraceRow {
            iteration: r.iteration,
            lb: r.lb,
            ub: r.ub,
            gap: r.gap,
            feasible_days: r.feasible_days,
            master_time: r.master_time,
            sub_time_max: r.sub_time_max,
            sub_time_total: r.sub_time_total,
            stage_time: r.stage_time,
        })
        .collect()
}

pub fn decision_rows(net: &NetworkModel, m: &MasterSolution) -> Vec<DecisionRow> {
    net.sites
        .iter()
        .enumerate()
        .map(|(k, s)| DecisionRow {
            site: s.id,
            bus: net.buses[s.bus].id,
            u: m.u[k],
            w: m.w[k],
            c: m.c[k],
        })
        .collect()
}

pub fn residual_rows(rep: &ResidualReport) -> Vec<ResidualRow> {
    let mut rows = Vec::new();
    for (t, h) in rep.hours.iter().enumerate() {
        for (kind, vals) in [
            ("nodal_p", &h.nodal_p),
            ("nodal_q", &h.nodal_q),
            ("branch", &h.branch),
            ("cycle", &h.cycle),
            ("cone_gap", &h.cone_gap),
        ] {
            rows.extend(vals.iter().enumerate().map(|(index, &value)| ResidualRow {
                hour: t,
                kind: kind.into(),
                index,
                value,
            }));
        }
    }
    rows
}

pub fn summary_rows(rep: &ResidualReport) -> Vec<SummaryRow> {
    vec![
        SummaryRow::new("nodal", rep.nodal()),
        SummaryRow::new("branch", rep.branch()),
        SummaryRow::new("cycle", rep.cycle()),
        SummaryRow::new("cone_gap", rep.cone_gap()),
    ]
}

/// Writes `rows` with a header even when empty.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), ReportError> {
    let csv_err = |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ReportError> {
    let csv_err = |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err)
}

pub const TRACE_HEADER: [&str; 9] = [
    "iteration",
    "lb",
    "ub",
    "gap",
    "feasible_days",
    "master_time",
    "sub_time_max",
    "sub_time_total",
    "stage_time",
];
pub const DECISION_HEADER: [&str; 5] = ["site", "bus", "u", "w", "c"];
pub const RESIDUAL_HEADER: [&str; 4] = ["hour", "kind", "index", "value"];
pub const SUMMARY_HEADER: [&str; 7] = ["kind", "count", "min", "q25", "median", "q75", "max"];
pub const SIZE_HEADER: [&str; 13] = [
    "mode",
    "g",
    "n",
    "l",
    "s",
    "t",
    "d",
    "p",
    "cut_rounds",
    "binary_vars",
    "continuous_vars",
    "constraints",
    "parameters",
];
pub const RECOVERY_HEADER: [&str; 7] = [
    "hour",
    "converged",
    "flat_start",
    "iterations",
    "mismatch",
    "switched",
    "solve_time",
];
pub const TIMING_HEADER: [&str; 5] = [
    "subproblems",
    "iterations",
    "master_seconds",
    "subproblem_seconds",
    "total_seconds",
];

/// Everything a run can report; absent parts produce header-only tables.
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts<'a> {
    pub state: Option<&'a BendersState>,
    pub decision: Vec<DecisionRow>,
    pub residuals: Option<&'a ResidualReport>,
    pub recovery: Option<&'a Recovery>,
    pub sizes: Vec<SizeReport>,
    pub timing: Vec<TimingRow>,
}

/// Writes every table (and plots with the `plot` feature) into `out_dir`,
/// returning the paths written.
pub fn emit_reports(art: &RunArtifacts, out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out_dir).map_err(|source| ReportError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let mut put = |name: &str| {
        let p = out_dir.join(name);
        written.push(p.clone());
        p
    };
    let trace = art.state.map(trace_rows).unwrap_or_default();
    write_csv(&put("trace.csv"), &TRACE_HEADER, &trace)?;
    write_csv(&put("decision.csv"), &DECISION_HEADER, &art.decision)?;
    let (res, summary) = art
        .residuals
        .map(|r| (residual_rows(r), summary_rows(r)))
        .unwrap_or_default();
    write_csv(&put("residuals.csv"), &RESIDUAL_HEADER, &res)?;
    write_csv(&put("residual_summary.csv"), &SUMMARY_HEADER, &summary)?;
    let sizes: Vec<SizeRow> = art.sizes.iter().map(SizeRow::from).collect();
    write_csv(&put("sizes.csv"), &SIZE_HEADER, &sizes)?;
    write_csv(&put("timing.csv"), &TIMING_HEADER, &art.timing)?;
    let rec = art.recovery.map(recovery_rows).unwrap_or_default();
    write_csv(&put("recovery.csv"), &RECOVERY_HEADER, &rec)?;
    #[cfg(feature = "plot")]
    {
        if !trace.is_empty() {
            plot::convergence(&put("convergence.png"), &trace)?;
        }
        if let Some(r) = art.residuals {
            plot::residuals(&put("residuals.png"), r)?;
        }
    }
    Ok(written)
}

/// Least-squares slope of `log y` against `log x` over positive pairs.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Geometric sequence `base^0, base^1, ...` up to `max` inclusive.
pub fn geometric(base: usize, max: usize) -> Vec<usize> {
    let mut v = vec![1];
    while base > 1 && v[v.len() - 1] * base <= max {
        let next = v[v.len() - 1] * base;
        v.push(next);
    }
    v
}

#[cfg(feature = "plot")]
mod plot {
    use std::path::Path;

    use plotters::prelude::*;

    use super::{ReportError, TraceRow};
    use crate::acpf::ResidualReport;

    fn err(path: &Path, e: impl std::fmt::Display) -> ReportError {
        ReportError::Plot {
            path: path.to_path_buf(),
            msg: e.to_string(),
        }
    }

    pub fn convergence(path: &Path, trace: &[TraceRow]) -> Result<(), ReportError> {
        let root = BitMapBackend::new(path, (800, 500)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| err(path, e))?;
        let ys: Vec<f64> = trace
            .iter()
            .flat_map(|r| std::iter::once(r.lb).chain(r.ub))
            .filter(|v| v.is_finite())
            .collect();
        let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = ((hi - lo) * 0.05).max(1e-9);
        let mut chart = ChartBuilder::on(&root)
            .margin(10)
            .build_cartesian_2d(0..trace.len().max(1), (lo - pad)..(hi + pad))
            .map_err(|e| err(path, e))?;
        chart
            .draw_series(LineSeries::new(trace.iter().map(|r| (r.iteration, r.lb)), &BLUE))
            .map_err(|e| err(path, e))?;
        chart
            .draw_series(LineSeries::new(
                trace.iter().filter_map(|r| r.ub.map(|u| (r.iteration, u))),
                &RED,
            ))
            .map_err(|e| err(path, e))?;
        root.present().map_err(|e| err(path, e))
    }

    /// Sorted log10 magnitudes of nodal residuals and cone gaps.
    pub fn residuals(path: &Path, rep: &ResidualReport) -> Result<(), ReportError> {
        let series = |vals: Vec<f64>| -> Vec<f64> {
            let mut v: Vec<f64> = vals.into_iter().map(|x| x.abs().max(1e-16).log10()).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let nodal = series(rep.hours.iter().flat_map(|h| h.nodal_p.iter().chain(&h.nodal_q).copied()).collect());
        let gap = series(rep.hours.iter().flat_map(|h| h.cone_gap.iter().copied()).collect());
        let root = BitMapBackend::new(path, (800, 500)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| err(path, e))?;
        let n = nodal.len().max(gap.len()).max(1);
        let mut chart = ChartBuilder::on(&root)
            .margin(10)
            .build_cartesian_2d(0..n, -16.0..2.0)
            .map_err(|e| err(path, e))?;
        chart
            .draw_series(LineSeries::new(nodal.iter().copied().enumerate(), &RED))
            .map_err(|e| err(path, e))?;
        chart
            .draw_series(LineSeries::new(gap.iter().copied().enumerate(), &BLUE))
            .map_err(|e| err(path, e))?;
        root.present().map_err(|e| err(path, e))
    }
}

#[cfg(test)]
mod tests;
