//! Static grid data model.
//!
//! All quantities are per-unit on the network's `base_mva`. Voltage bounds are
//! stored as bounds on the *squared* voltage magnitude, matching the
//! branch-flow relaxation where the nodal voltage variable is `|v|^2`.

mod case_file;
mod matpower;
mod per_unit;
mod topology;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use case_file::{parse_case, read_case, write_case, CaseError};
pub use matpower::{parse_matpower, read_matpower};
pub use per_unit::{from_per_unit, to_per_unit, RawBranch, RawBus, RawGenerator, RawNetwork, RawSite};
pub use topology::{build_incidence, connected_components, find_cycle_basis, Cycle, CycleBasis, Incidence};

/// Default branch angle-difference limit when the source data has none.
pub const DEFAULT_THETA_MAX: f64 = std::f64::consts::FRAC_PI_3;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("branch {branch} references missing bus {bus}")]
    DanglingBranch { branch: usize, bus: usize },
    #[error("network is disconnected into {} components: {components:?}", components.len())]
    Disconnected { components: Vec<Vec<usize>> },
    #[error("expected exactly one slack bus, found {0}")]
    SlackCount(usize),
    #[error("slack bus {0} hosts no generator")]
    SlackWithoutGenerator(usize),
    #[error("invalid {what} {id}: {reason}")]
    Invalid {
        what: &'static str,
        id: usize,
        reason: String,
    },
    #[error("invalid base: {0}")]
    Base(String),
}

fn invalid(what: &'static str, id: usize, reason: impl Into<String>) -> NetworkError {
    NetworkError::Invalid {
        what,
        id,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

impl BusKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BusKind::Slack => "slack",
            BusKind::Pv => "pv",
            BusKind::Pq => "pq",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// External identifier, as used in case and time-series files.
    pub id: usize,
    pub kind: BusKind,
    pub shunt_g: f64,
    pub shunt_b: f64,
    /// Lower bound on the squared voltage magnitude.
    pub vsq_min: f64,
    /// Upper bound on the squared voltage magnitude.
    pub vsq_max: f64,
    pub base_kv: f64,
    /// Voltage-magnitude setpoint used by slack and PV buses in power flow.
    pub v_set: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub id: usize,
    /// Sending-end bus index.
    pub from: usize,
    /// Receiving-end bus index.
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Symmetric angle-difference limit, `theta_min = -theta_max`.
    pub theta_max: f64,
    /// Current-magnitude limit; `f64::INFINITY` when unlimited.
    pub ampacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: usize,
    /// Bus index.
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub is_condenser: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSite {
    pub id: usize,
    /// Bus index.
    pub bus: usize,
    pub w_min: f64,
    pub w_max: f64,
    pub c_min: f64,
    pub c_max: f64,
    /// Maximum power-to-energy ratio, 1/h.
    pub c_rate: f64,
    pub cost_power: f64,
    pub cost_energy: f64,
    pub soe_min: f64,
    pub soe_max: f64,
}

/// Per-bus demand snapshot (P, Q) of a reference operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusDemand {
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub sites: Vec<CandidateSite>,
    pub snapshot: Option<Vec<BusDemand>>,
    slack_bus: usize,
    slack_gen: usize,
}

impl NetworkModel {
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
        sites: Vec<CandidateSite>,
    ) -> Result<Self, NetworkError> {
        if !(base_mva > 0.0 && base_mva.is_finite()) {
            return Err(NetworkError::Base(format!("base_mva must be positive, got {base_mva}")));
        }
        for b in &buses {
            if !(b.vsq_min > 0.0 && b.vsq_min < b.vsq_max) {
                return Err(invalid("bus", b.id, "requires 0 < v_min < v_max"));
            }
            if !(b.shunt_g.is_finite() && b.shunt_b.is_finite() && b.v_set > 0.0) {
                return Err(invalid("bus", b.id, "non-finite shunt or nonpositive setpoint"));
            }
        }
        let slacks: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Slack)
            .map(|(i, _)| i)
            .collect();
        if slacks.len() != 1 {
            return Err(NetworkError::SlackCount(slacks.len()));
        }
        let slack_bus = slacks[0];

        build_incidence(buses.len(), &branches)?;
        for br in &branches {
            if br.from == br.to {
                return Err(invalid("branch", br.id, "self-loop"));
            }
            if !(br.x > 0.0 && br.x.is_finite()) {
                return Err(invalid("branch", br.id, "reactance must be positive"));
            }
            if !(br.r >= 0.0 && br.r.is_finite()) {
                return Err(invalid("branch", br.id, "resistance must be nonnegative"));
            }
            if !(br.theta_max > 0.0 && br.theta_max < std::f64::consts::FRAC_PI_2) {
                return Err(invalid("branch", br.id, "theta_max must lie in (0, pi/2)"));
            }
            if !(br.ampacity > 0.0) {
                return Err(invalid("branch", br.id, "ampacity must be positive"));
            }
        }
        for g in &generators {
            if g.bus >= buses.len() {
                return Err(invalid("generator", g.id, "bus index out of range"));
            }
            if g.p_min > g.p_max || g.q_min > g.q_max {
                return Err(invalid("generator", g.id, "inverted bounds"));
            }
            if g.is_condenser && (g.p_min != 0.0 || g.p_max != 0.0) {
                return Err(invalid("generator", g.id, "condensers must have zero active limits"));
            }
        }
        for s in &sites {
            validate_site(s, buses.len())?;
        }
        let slack_gen = generators
            .iter()
            .position(|g| g.bus == slack_bus)
            .ok_or(NetworkError::SlackWithoutGenerator(buses[slack_bus].id))?;

        let comps = connected_components(buses.len(), &branches);
        if comps.len() > 1 {
            return Err(NetworkError::Disconnected {
                components: comps
                    .into_iter()
                    .map(|c| c.into_iter().map(|i| buses[i].id).collect())
                    .collect(),
            });
        }

        Ok(Self {
            name: name.into(),
            base_mva,
            buses,
            branches,
            generators,
            sites,
            snapshot: None,
            slack_bus,
            slack_gen,
        })
    }

    pub fn with_snapshot(mut self, snapshot: Vec<BusDemand>) -> Result<Self, NetworkError> {
        if snapshot.len() != self.buses.len() {
            return Err(NetworkError::Base(format!(
                "snapshot has {} entries for {} buses",
                snapshot.len(),
                self.buses.len()
            )));
        }
        self.snapshot = Some(snapshot);
        Ok(self)
    }

    /// Replaces the candidate sites, re-validating them.
    pub fn with_sites(mut self, sites: Vec<CandidateSite>) -> Result<Self, NetworkError> {
        for s in &sites {
            validate_site(s, self.buses.len())?;
        }
        self.sites = sites;
        Ok(self)
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn slack_bus(&self) -> usize {
        self.slack_bus
    }

    pub fn slack_generator(&self) -> usize {
        self.slack_gen
    }

    /// Generators other than the designated slack unit.
    pub fn non_slack_generators(&self) -> impl Iterator<Item = (usize, &Generator)> {
        let slack = self.slack_gen;
        self.generators.iter().enumerate().filter(move |(i, _)| *i != slack)
    }

    pub fn generators_at(&self, bus: usize) -> impl Iterator<Item = (usize, &Generator)> {
        self.generators.iter().enumerate().filter(move |(_, g)| g.bus == bus)
    }

    pub fn sites_at(&self, bus: usize) -> impl Iterator<Item = (usize, &CandidateSite)> {
        self.sites.iter().enumerate().filter(move |(_, s)| s.bus == bus)
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn incidence(&self) -> Incidence {
        build_incidence(self.buses.len(), &self.branches).expect("validated at construction")
    }

    pub fn cycle_basis(&self) -> CycleBasis {
        find_cycle_basis(self).expect("validated at construction")
    }

    /// True when the bus behaves as a voltage-controlled bus in power flow.
    pub fn is_voltage_controlled(&self, bus: usize) -> bool {
        match self.buses[bus].kind {
            BusKind::Slack => true,
            BusKind::Pv => self.generators_at(bus).next().is_some(),
            BusKind::Pq => false,
        }
    }

    /// Mutable access used by boundary-condition generation.
    pub(crate) fn branches_mut(&mut self) -> &mut [Branch] {
        &mut self.branches
    }

    pub(crate) fn generators_mut(&mut self) -> &mut [Generator] {
        &mut self.generators
    }
}

fn validate_site(s: &CandidateSite, n_buses: usize) -> Result<(), NetworkError> {
    if s.bus >= n_buses {
        return Err(invalid("site", s.id, "bus index out of range"));
    }
    if !(0.0 <= s.w_min && s.w_min <= s.w_max) {
        return Err(invalid("site", s.id, "requires 0 <= w_min <= w_max"));
    }
    if !(0.0 <= s.c_min && s.c_min <= s.c_max) {
        return Err(invalid("site", s.id, "requires 0 <= c_min <= c_max"));
    }
    if !(0.0 <= s.soe_min && s.soe_min < s.soe_max && s.soe_max <= 1.0) {
        return Err(invalid("site", s.id, "requires 0 <= soe_min < soe_max <= 1"));
    }
    if !(s.c_rate > 0.0) {
        return Err(invalid("site", s.id, "c_rate must be positive"));
    }
    if !(s.cost_power >= 0.0 && s.cost_energy >= 0.0) {
        return Err(invalid("site", s.id, "costs must be nonnegative"));
    }
    Ok(())
}
