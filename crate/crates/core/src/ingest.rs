//! Time series, reactive reconstruction and boundary conditions.
//!
//! Series files are plain CSV: a header of bus ids, then one row of active
//! demand in MW per hour. Values are converted to per unit on the network
//! base. Reactive demand is rebuilt from snapshot power factors.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::acpf::{branch_currents, solve_acpf, AcpfError, AcpfOptions, PowerFlowSpec};
use crate::network::{parse_case, write_case, BusKind, CandidateSite, CaseError, NetworkModel};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}, column {col}: {msg}")]
    Cell { row: usize, col: usize, msg: String },
    #[error("bus {0} has no column in the series header")]
    MissingBus(usize),
    #[error("header column {col}: {value:?} is not a known bus id")]
    UnknownBus { col: usize, value: String },
    #[error("{hours} hours is not a whole number of {day_length}-hour days")]
    DayLength { hours: usize, day_length: usize },
    #[error("series has {got} values in hour {hour}, network has {expected} buses")]
    Width { hour: usize, expected: usize, got: usize },
    #[error("non-finite value at hour {hour}, bus index {bus}")]
    NonFinite { hour: usize, bus: usize },
    #[error("network has no snapshot operating point")]
    NoSnapshot,
    #[error("bus {bus}: snapshot has P = 0 and Q = {q}, power factor undefined")]
    UndefinedPowerFactor { bus: usize, q: f64 },
    #[error("tighten factor {0} outside (0, 1]")]
    TightenFactor(f64),
    #[error("nothing to tighten: {0}")]
    NothingToTighten(String),
    #[error("baseline power flow at hour {hour}: {source}")]
    Baseline {
        hour: usize,
        #[source]
        source: AcpfError,
    },
    #[error("baseline power flow did not converge at hour {hour} (mismatch {mismatch:.3e})")]
    BaselineDiverged { hour: usize, mismatch: f64 },
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("bundle: {0}")]
    Bundle(String),
}

fn io_err(path: &Path, source: std::io::Error) -> IngestError {
    IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Per-unit demand per hour and bus, in network bus order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesData {
    pub day_length: usize,
    pub load_p: Vec<Vec<f64>>,
    pub load_q: Vec<Vec<f64>>,
    /// Non-dispatchable injections, subtracted from demand.
    pub fixed_gen_p: Vec<Vec<f64>>,
}

/// Net demand of one day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayData {
    pub index: usize,
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

impl TimeSeriesData {
    pub fn new(day_length: usize, load_p: Vec<Vec<f64>>, load_q: Vec<Vec<f64>>) -> Result<Self, IngestError> {
        let fixed = load_p.iter().map(|r| vec![0.0; r.len()]).collect();
        Self::with_fixed_generation(day_length, load_p, load_q, fixed)
    }

    pub fn with_fixed_generation(
        day_length: usize,
        load_p: Vec<Vec<f64>>,
        load_q: Vec<Vec<f64>>,
        fixed_gen_p: Vec<Vec<f64>>,
    ) -> Result<Self, IngestError> {
        let hours = load_p.len();
        if day_length == 0 || hours % day_length != 0 {
            return Err(IngestError::DayLength { hours, day_length });
        }
        let width = load_p.first().map_or(0, Vec::len);
        for m in [&load_p, &load_q, &fixed_gen_p] {
            if m.len() != hours {
                return Err(IngestError::Width {
                    hour: m.len().min(hours),
                    expected: width,
                    got: 0,
                });
            }
            for (hour, row) in m.iter().enumerate() {
                if row.len() != width {
                    return Err(IngestError::Width {
                        hour,
                        expected: width,
                        got: row.len(),
                    });
                }
                if let Some(bus) = row.iter().position(|v| !v.is_finite()) {
                    return Err(IngestError::NonFinite { hour, bus });
                }
            }
        }
        Ok(Self {
            day_length,
            load_p,
            load_q,
            fixed_gen_p,
        })
    }

    pub fn n_hours(&self) -> usize {
        self.load_p.len()
    }

    pub fn n_days(&self) -> usize {
        self.n_hours() / self.day_length
    }

    pub fn n_buses(&self) -> usize {
        self.load_p.first().map_or(0, Vec::len)
    }

    /// Active and reactive net demand of hour `t`.
    pub fn net_demand(&self, t: usize) -> (Vec<f64>, Vec<f64>) {
        let p = self.load_p[t].iter().zip(&self.fixed_gen_p[t]).map(|(l, g)| l - g).collect();
        (p, self.load_q[t].clone())
    }

    pub fn day(&self, d: usize) -> DayData {
        let hours = d * self.day_length..(d + 1) * self.day_length;
        let (p, q) = hours.map(|t| self.net_demand(t)).unzip();
        DayData { index: d, p, q }
    }

    pub fn days(&self) -> Vec<DayData> {
        (0..self.n_days()).map(|d| self.day(d)).collect()
    }

    /// The first `days` days.
    pub fn truncated(&self, days: usize) -> Self {
        let t = (days * self.day_length).min(self.n_hours());
        Self {
            day_length: self.day_length,
            load_p: self.load_p[..t].to_vec(),
            load_q: self.load_q[..t].to_vec(),
            fixed_gen_p: self.fixed_gen_p[..t].to_vec(),
        }
    }

    /// Scales every demand and injection entry by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let sc = |m: &Vec<Vec<f64>>| m.iter().map(|r| r.iter().map(|v| v * k).collect()).collect();
        Self {
            day_length: self.day_length,
            load_p: sc(&self.load_p),
            load_q: sc(&self.load_q),
            fixed_gen_p: sc(&self.fixed_gen_p),
        }
    }
}

/// Parses an active-demand CSV in MW against the network bus ids. Reactive
/// demand is left at zero; see [`reconstruct_reactive`].
pub fn parse_timeseries(text: &str, net: &NetworkModel, day_length: usize) -> Result<TimeSeriesData, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    let mut column_of = vec![None; net.n_buses()];
    for (col, h) in header.iter().enumerate() {
        let idx = h
            .parse::<usize>()
            .ok()
            .and_then(|id| net.bus_index(id))
            .ok_or_else(|| IngestError::UnknownBus {
                col: col + 1,
                value: h.to_string(),
            })?;
        column_of[idx] = Some(col);
    }
    let column_of: Vec<usize> = column_of
        .iter()
        .enumerate()
        .map(|(i, c)| c.ok_or(IngestError::MissingBus(net.buses[i].id)))
        .collect::<Result<_, _>>()?;

    let mut load_p = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 2;
        let mut values = vec![0.0; header.len()];
        for (col, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| IngestError::Cell {
                row,
                col: col + 1,
                msg: format!("{cell:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(IngestError::Cell {
                    row,
                    col: col + 1,
                    msg: format!("{cell:?} is not finite"),
                });
            }
            values[col] = v;
        }
        load_p.push(column_of.iter().map(|&c| values[c] / net.base_mva).collect::<Vec<f64>>());
    }
    let load_q = load_p.iter().map(|r: &Vec<f64>| vec![0.0; r.len()]).collect();
    TimeSeriesData::new(day_length, load_p, load_q)
}

pub fn load_timeseries(path: impl AsRef<Path>, net: &NetworkModel, day_length: usize) -> Result<TimeSeriesData, IngestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_timeseries(&text, net, day_length)
}

/// Writes net active demand in MW in the format read by [`parse_timeseries`].
pub fn write_timeseries(ts: &TimeSeriesData, net: &NetworkModel) -> Result<String, IngestError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(net.buses.iter().map(|b| b.id.to_string()))?;
    for t in 0..ts.n_hours() {
        let (p, _) = ts.net_demand(t);
        w.write_record(p.iter().map(|v| format!("{:?}", v * net.base_mva)))?;
    }
    let bytes = w.into_inner().map_err(|e| IngestError::Bundle(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| IngestError::Bundle(e.to_string()))
}

fn power_factor(p: f64, q: f64) -> f64 {
    let s = p.hypot(q);
    if s == 0.0 {
        1.0
    } else {
        p.abs() / s
    }
}

/// Index into `candidates` of the `(bus, pf)` entry nearest to `pf`; ties go
/// to the first.
pub fn nearest_donor(pf: f64, candidates: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &(_, c)) in candidates.iter().enumerate() {
        let d = (c - pf).abs();
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

fn is_generation_bus(net: &NetworkModel, bus: usize) -> bool {
    net.generators_at(bus).any(|(_, g)| !g.is_condenser)
}

/// Fills reactive demand from snapshot power factors. Load and condenser
/// buses keep their own ratio `Q/P`; buses with active generation borrow the
/// ratio of the load bus whose snapshot power factor is nearest their own.
pub fn reconstruct_reactive(net: &NetworkModel, ts: &TimeSeriesData) -> Result<TimeSeriesData, IngestError> {
    let snap = net.snapshot.as_ref().ok_or(IngestError::NoSnapshot)?;
    let n = net.n_buses();
    if ts.n_buses() != n {
        return Err(IngestError::Width {
            hour: 0,
            expected: n,
            got: ts.n_buses(),
        });
    }
    let own_ratio = |i: usize| -> Result<f64, IngestError> {
        let d = snap[i];
        if d.p == 0.0 {
            if d.q != 0.0 {
                return Err(IngestError::UndefinedPowerFactor { bus: net.buses[i].id, q: d.q });
            }
            return Ok(0.0);
        }
        Ok(d.q / d.p)
    };
    let mut donors = Vec::new();
    for i in 0..n {
        if !is_generation_bus(net, i) && net.buses[i].kind != BusKind::Slack && snap[i].p != 0.0 {
            donors.push((i, power_factor(snap[i].p, snap[i].q)));
        }
    }
    let mut ratio = vec![0.0; n];
    for (i, r) in ratio.iter_mut().enumerate() {
        let d = snap[i];
        *r = if !is_generation_bus(net, i) {
            own_ratio(i)?
        } else if d.p == 0.0 && d.q == 0.0 {
            0.0
        } else {
            match nearest_donor(power_factor(d.p, d.q), &donors) {
                Some(k) => own_ratio(donors[k].0)?,
                None => own_ratio(i)?,
            }
        };
    }
    let load_q = ts
        .load_p
        .iter()
        .map(|row| row.iter().zip(&ratio).map(|(p, r)| p * r).collect())
        .collect();
    Ok(TimeSeriesData {
        load_q,
        ..ts.clone()
    })
}

/// Seeded synthetic demand: daily shape peaking in the evening, a seasonal
/// swing over the year and uniform multiplicative noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticProfile {
    pub days: usize,
    pub seed: u64,
    pub day_length: usize,
    /// Relative daily swing around the snapshot level.
    pub amplitude: f64,
    /// Half-width of the uniform noise factor.
    pub noise: f64,
    /// Relative seasonal swing.
    pub seasonal: f64,
    /// Hour of the daily peak.
    pub peak_hour: f64,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        Self {
            days: 7,
            seed: 0,
            day_length: 24,
            amplitude: 0.3,
            noise: 0.05,
            seasonal: 0.1,
            peak_hour: 18.0,
        }
    }
}

pub fn synthetic_series(net: &NetworkModel, profile: &SyntheticProfile) -> Result<TimeSeriesData, IngestError> {
    let snap = net.snapshot.as_ref().ok_or(IngestError::NoSnapshot)?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let p = profile.day_length.max(1) as f64;
    let hours = profile.days * profile.day_length;
    let mut load_p = Vec::with_capacity(hours);
    let mut fixed = Vec::with_capacity(hours);
    let gen_output: Vec<f64> = (0..net.n_buses())
        .map(|i| {
            net.generators_at(i)
                .filter(|(g, gen)| *g != net.slack_generator() && !gen.is_condenser)
                .map(|(_, gen)| 0.5 * (gen.p_min + gen.p_max))
                .sum()
        })
        .collect();
    for t in 0..hours {
        let day = (t / profile.day_length.max(1)) as f64;
        let h = (t % profile.day_length.max(1)) as f64;
        let daily = 1.0 + profile.amplitude * (std::f64::consts::TAU * (h - profile.peak_hour) / p).cos();
        let season = 1.0 + profile.seasonal * (std::f64::consts::TAU * day / 365.0).cos();
        let row = snap
            .iter()
            .map(|d| {
                let eps: f64 = if profile.noise > 0.0 {
                    rng.gen_range(-profile.noise..=profile.noise)
                } else {
                    0.0
                };
                d.p * daily * season * (1.0 + eps)
            })
            .collect();
        load_p.push(row);
        fixed.push(gen_output.clone());
    }
    let load_q = load_p.iter().map(|r: &Vec<f64>| vec![0.0; r.len()]).collect();
    TimeSeriesData::with_fixed_generation(profile.day_length, load_p, load_q, fixed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "ids")]
pub enum BranchSelection {
    /// Branch ids.
    List(Vec<usize>),
    /// Branches with both ends at candidate buses.
    BetweenCandidates,
    /// Branches touching at least one candidate bus.
    IncidentToCandidates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "ids")]
pub enum CandidateRule {
    /// Bus ids.
    Explicit(Vec<usize>),
    /// Buses whose baseline voltage leaves its limits in some hour.
    VoltageViolating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditionSpec {
    pub tighten_factor: f64,
    pub branches: BranchSelection,
    pub relax_slack_p: bool,
    pub candidates: CandidateRule,
    /// Ratings and costs copied to every new candidate site.
    pub site_template: CandidateSite,
}

/// Baseline currents and voltage violations over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub max_current: Vec<f64>,
    pub violating_buses: Vec<usize>,
}

/// Flat-start AC power flow with reactive limits for every hour.
pub fn baseline(net: &NetworkModel, ts: &TimeSeriesData) -> Result<Baseline, IngestError> {
    let opts = AcpfOptions::default();
    let mut max_current = vec![0.0_f64; net.n_branches()];
    let mut violating = vec![false; net.n_buses()];
    for t in 0..ts.n_hours() {
        let (p, q) = ts.net_demand(t);
        let spec = PowerFlowSpec::new(net, p, q);
        let st = solve_acpf(net, &spec, None, &opts).map_err(|source| IngestError::Baseline { hour: t, source })?;
        if !st.converged {
            return Err(IngestError::BaselineDiverged {
                hour: t,
                mismatch: st.mismatch,
            });
        }
        for (m, c) in max_current.iter_mut().zip(branch_currents(net, &st.vm, &st.va)) {
            *m = m.max(c);
        }
        for (i, bus) in net.buses.iter().enumerate() {
            let v2 = st.vm[i] * st.vm[i];
            if v2 < bus.vsq_min - 1e-9 || v2 > bus.vsq_max + 1e-9 {
                violating[i] = true;
            }
        }
    }
    let violating_buses = violating.iter().enumerate().filter(|(_, v)| **v).map(|(i, _)| i).collect();
    Ok(Baseline {
        max_current,
        violating_buses,
    })
}

/// Tightens selected ampacities to a fraction of their baseline maxima and
/// assigns candidate sites.
pub fn generate_boundary_conditions(
    net: &NetworkModel,
    ts: &TimeSeriesData,
    spec: &BoundaryConditionSpec,
) -> Result<NetworkModel, IngestError> {
    if !(spec.tighten_factor > 0.0 && spec.tighten_factor <= 1.0) {
        return Err(IngestError::TightenFactor(spec.tighten_factor));
    }
    let base = baseline(net, ts)?;
    let candidate_buses: Vec<usize> = match &spec.candidates {
        CandidateRule::Explicit(ids) => ids
            .iter()
            .map(|&id| net.bus_index(id).ok_or(IngestError::UnknownBus { col: 0, value: id.to_string() }))
            .collect::<Result<_, _>>()?,
        CandidateRule::VoltageViolating => base.violating_buses.clone(),
    };
    if candidate_buses.is_empty() {
        return Err(IngestError::NothingToTighten(
            "no candidate buses: the baseline has no voltage violations".into(),
        ));
    }
    let is_cand = |b: usize| candidate_buses.contains(&b);
    let selected: Vec<usize> = net
        .branches
        .iter()
        .enumerate()
        .filter(|(_, br)| match &spec.branches {
            BranchSelection::List(ids) => ids.contains(&br.id),
            BranchSelection::BetweenCandidates => is_cand(br.from) && is_cand(br.to),
            BranchSelection::IncidentToCandidates => is_cand(br.from) || is_cand(br.to),
        })
        .map(|(l, _)| l)
        .collect();
    if selected.is_empty() {
        return Err(IngestError::NothingToTighten("branch selection is empty".into()));
    }
    let mut out = net.clone();
    for &l in &selected {
        out.branches_mut()[l].ampacity = spec.tighten_factor * base.max_current[l];
    }
    if spec.relax_slack_p {
        let sg = out.slack_generator();
        let g = &mut out.generators_mut()[sg];
        g.p_min = -1e3;
        g.p_max = 1e3;
    }
    let sites = candidate_buses
        .iter()
        .enumerate()
        .map(|(k, &bus)| CandidateSite {
            id: k + 1,
            bus,
            ..spec.site_template.clone()
        })
        .collect();
    Ok(out.with_sites(sites).map_err(|e| IngestError::Bundle(e.to_string()))?)
}

/// Validated planning input written by the ingest step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    /// Network in the native case format.
    pub case: String,
    pub series: TimeSeriesData,
    /// SHA-256 of the case text and the series.
    pub digest: String,
}

impl Bundle {
    pub fn new(net: &NetworkModel, series: TimeSeriesData) -> Self {
        let case = write_case(net);
        let digest = digest(&case, &series);
        Self { case, series, digest }
    }

    pub fn network(&self) -> Result<NetworkModel, IngestError> {
        Ok(parse_case(&self.case)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), IngestError> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| IngestError::Bundle(e.to_string()))?;
        fs::write(path, text).map_err(|e| io_err(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let b: Bundle = serde_json::from_str(&text).map_err(|e| IngestError::Bundle(e.to_string()))?;
        if digest(&b.case, &b.series) != b.digest {
            return Err(IngestError::Bundle(format!("{}: digest mismatch", path.display())));
        }
        Ok(b)
    }
}

fn digest(case: &str, series: &TimeSeriesData) -> String {
    let mut h = Sha256::new();
    h.update(case.as_bytes());
    h.update(serde_json::to_vec(series).unwrap_or_default());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
