//! Conversion between physical units and the per-unit system.
//!
//! Impedance base uses the sending-end bus voltage base, `Z = kV^2 / MVA`;
//! current base is `MVA / (sqrt(3) kV)` in kA. Site costs are given per MW and
//! per MWh and scale with the power base.

use serde::{Deserialize, Serialize};

use super::{Branch, Bus, BusKind, CandidateSite, Generator, NetworkError, NetworkModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawBus {
    pub id: usize,
    pub kind: BusKind,
    /// Shunt conductance as MW consumed at 1 p.u. voltage.
    pub shunt_mw: f64,
    /// Shunt susceptance as MVAr injected at 1 p.u. voltage.
    pub shunt_mvar: f64,
    /// Voltage-magnitude bounds in p.u. (not squared).
    pub v_min: f64,
    pub v_max: f64,
    pub base_kv: f64,
    pub v_set: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawBranch {
    pub id: usize,
    pub from_id: usize,
    pub to_id: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
    pub theta_max: f64,
    pub ampacity_ka: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawGenerator {
    pub id: usize,
    pub bus_id: usize,
    pub p_min_mw: f64,
    pub p_max_mw: f64,
    pub q_min_mvar: f64,
    pub q_max_mvar: f64,
    pub is_condenser: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSite {
    pub id: usize,
    pub bus_id: usize,
    pub w_min_mw: f64,
    pub w_max_mw: f64,
    pub c_min_mwh: f64,
    pub c_max_mwh: f64,
    pub c_rate: f64,
    pub cost_per_mw: f64,
    pub cost_per_mwh: f64,
    pub soe_min: f64,
    pub soe_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawNetwork {
    pub name: String,
    pub buses: Vec<RawBus>,
    pub branches: Vec<RawBranch>,
    pub generators: Vec<RawGenerator>,
    pub sites: Vec<RawSite>,
}

fn lookup(raw: &RawNetwork, id: usize, what: &'static str, owner: usize) -> Result<usize, NetworkError> {
    raw.buses
        .iter()
        .position(|b| b.id == id)
        .ok_or_else(|| match what {
            "branch" => NetworkError::DanglingBranch { branch: owner, bus: id },
            _ => super::invalid(what, owner, format!("unknown bus {id}")),
        })
}

pub fn to_per_unit(raw: &RawNetwork, base_mva: f64) -> Result<NetworkModel, NetworkError> {
    if !(base_mva > 0.0 && base_mva.is_finite()) {
        return Err(NetworkError::Base(format!("base_mva must be positive, got {base_mva}")));
    }
    if let Some(b) = raw.buses.iter().find(|b| !(b.base_kv > 0.0)) {
        return Err(NetworkError::Base(format!("bus {} has nonpositive base_kv", b.id)));
    }
    let buses = raw
        .buses
        .iter()
        .map(|b| Bus {
            id: b.id,
            kind: b.kind,
            shunt_g: b.shunt_mw / base_mva,
            shunt_b: b.shunt_mvar / base_mva,
            vsq_min: b.v_min * b.v_min,
            vsq_max: b.v_max * b.v_max,
            base_kv: b.base_kv,
            v_set: b.v_set,
        })
        .collect();
    let mut branches = Vec::with_capacity(raw.branches.len());
    for br in &raw.branches {
        let from = lookup(raw, br.from_id, "branch", br.id)?;
        let to = lookup(raw, br.to_id, "branch", br.id)?;
        let kv = raw.buses[from].base_kv;
        let z_base = kv * kv / base_mva;
        let i_base = base_mva / (3f64.sqrt() * kv);
        branches.push(Branch {
            id: br.id,
            from,
            to,
            r: br.r_ohm / z_base,
            x: br.x_ohm / z_base,
            theta_max: br.theta_max,
            ampacity: br.ampacity_ka / i_base,
        });
    }
    let mut generators = Vec::with_capacity(raw.generators.len());
    for g in &raw.generators {
        generators.push(Generator {
            id: g.id,
            bus: lookup(raw, g.bus_id, "generator", g.id)?,
            p_min: g.p_min_mw / base_mva,
            p_max: g.p_max_mw / base_mva,
            q_min: g.q_min_mvar / base_mva,
            q_max: g.q_max_mvar / base_mva,
            is_condenser: g.is_condenser,
        });
    }
    let mut sites = Vec::with_capacity(raw.sites.len());
    for s in &raw.sites {
        sites.push(CandidateSite {
            id: s.id,
            bus: lookup(raw, s.bus_id, "site", s.id)?,
            w_min: s.w_min_mw / base_mva,
            w_max: s.w_max_mw / base_mva,
            c_min: s.c_min_mwh / base_mva,
            c_max: s.c_max_mwh / base_mva,
            c_rate: s.c_rate,
            cost_power: s.cost_per_mw * base_mva,
            cost_energy: s.cost_per_mwh * base_mva,
            soe_min: s.soe_min,
            soe_max: s.soe_max,
        });
    }
    NetworkModel::new(raw.name.clone(), base_mva, buses, branches, generators, sites)
}

pub fn from_per_unit(net: &NetworkModel) -> RawNetwork {
    let base = net.base_mva;
    let buses = net
        .buses
        .iter()
        .map(|b| RawBus {
            id: b.id,
            kind: b.kind,
            shunt_mw: b.shunt_g * base,
            shunt_mvar: b.shunt_b * base,
            v_min: b.vsq_min.sqrt(),
            v_max: b.vsq_max.sqrt(),
            base_kv: b.base_kv,
            v_set: b.v_set,
        })
        .collect();
    let branches = net
        .branches
        .iter()
        .map(|br| {
            let kv = net.buses[br.from].base_kv;
            let z_base = kv * kv / base;
            let i_base = base / (3f64.sqrt() * kv);
            RawBranch {
                id: br.id,
                from_id: net.buses[br.from].id,
                to_id: net.buses[br.to].id,
                r_ohm: br.r * z_base,
                x_ohm: br.x * z_base,
                theta_max: br.theta_max,
                ampacity_ka: br.ampacity * i_base,
            }
        })
        .collect();
    let generators = net
        .generators
        .iter()
        .map(|g| RawGenerator {
            id: g.id,
            bus_id: net.buses[g.bus].id,
            p_min_mw: g.p_min * base,
            p_max_mw: g.p_max * base,
            q_min_mvar: g.q_min * base,
            q_max_mvar: g.q_max * base,
            is_condenser: g.is_condenser,
        })
        .collect();
    let sites = net
        .sites
        .iter()
        .map(|s| RawSite {
            id: s.id,
            bus_id: net.buses[s.bus].id,
            w_min_mw: s.w_min * base,
            w_max_mw: s.w_max * base,
            c_min_mwh: s.c_min * base,
            c_max_mwh: s.c_max * base,
            c_rate: s.c_rate,
            cost_per_mw: s.cost_power / base,
            cost_per_mwh: s.cost_energy / base,
            soe_min: s.soe_min,
            soe_max: s.soe_max,
        })
        .collect();
    RawNetwork {
        name: net.name.clone(),
        buses,
        branches,
        generators,
        sites,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw_two_bus(kv: f64, load_mw: f64) -> RawNetwork {
        RawNetwork {
            name: "raw".into(),
            buses: vec![
                RawBus {
                    id: 1,
                    kind: BusKind::Slack,
                    shunt_mw: 0.0,
                    shunt_mvar: 0.0,
                    v_min: 0.9,
                    v_max: 1.1,
                    base_kv: kv,
                    v_set: 1.0,
                },
                RawBus {
                    id: 2,
                    kind: BusKind::Pq,
                    shunt_mw: load_mw,
                    shunt_mvar: 5.0,
                    v_min: 0.9,
                    v_max: 1.1,
                    base_kv: kv,
                    v_set: 1.0,
                },
            ],
            branches: vec![RawBranch {
                id: 1,
                from_id: 1,
                to_id: 2,
                r_ohm: 1.0,
                x_ohm: 10.0,
                theta_max: 0.5,
                ampacity_ka: 0.8,
            }],
            generators: vec![RawGenerator {
                id: 1,
                bus_id: 1,
                p_min_mw: 0.0,
                p_max_mw: 250.0,
                q_min_mvar: -50.0,
                q_max_mvar: 80.0,
                is_condenser: false,
            }],
            sites: vec![RawSite {
                id: 1,
                bus_id: 2,
                w_min_mw: 0.0,
                w_max_mw: 40.0,
                c_min_mwh: 0.0,
                c_max_mwh: 160.0,
                c_rate: 0.5,
                cost_per_mw: 2.0,
                cost_per_mwh: 1.0,
                soe_min: 0.1,
                soe_max: 0.9,
            }],
        }
    }

    #[test]
    fn hundred_mw_on_hundred_mva_is_one_pu() {
        let net = to_per_unit(&raw_two_bus(138.0, 100.0), 100.0).unwrap();
        assert_eq!(net.buses[1].shunt_g, 1.0);
        assert_eq!(net.generators[0].p_max, 2.5);
    }

    #[test]
    fn unit_bases_leave_values_unchanged() {
        let raw = raw_two_bus(1.0, 0.3);
        let net = to_per_unit(&raw, 1.0).unwrap();
        assert_eq!(net.branches[0].r, 1.0);
        assert_eq!(net.branches[0].x, 10.0);
        assert_eq!(net.buses[1].shunt_g, 0.3);
        assert_eq!(net.sites[0].cost_power, 2.0);
    }

    #[test]
    fn rejects_bad_bases() {
        assert!(to_per_unit(&raw_two_bus(138.0, 1.0), 0.0).is_err());
        assert!(to_per_unit(&raw_two_bus(138.0, 1.0), -5.0).is_err());
        assert!(to_per_unit(&raw_two_bus(0.0, 1.0), 100.0).is_err());
    }

    fn rel(a: f64, b: f64) -> f64 {
        if a == b {
            0.0
        } else {
            (a - b).abs() / a.abs().max(b.abs())
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn round_trip_is_identity(
            kv in 0.4f64..800.0,
            base in 1.0f64..10_000.0,
            r in 0.0f64..50.0,
            x in 0.01f64..500.0,
            amp in 0.01f64..5.0,
            load in -500.0f64..500.0,
        ) {
            let mut raw = raw_two_bus(kv, load);
            raw.branches[0].r_ohm = r;
            raw.branches[0].x_ohm = x;
            raw.branches[0].ampacity_ka = amp;
            let back = from_per_unit(&to_per_unit(&raw, base).unwrap());
            let pairs = [
                (raw.branches[0].r_ohm, back.branches[0].r_ohm),
                (raw.branches[0].x_ohm, back.branches[0].x_ohm),
                (raw.branches[0].ampacity_ka, back.branches[0].ampacity_ka),
                (raw.buses[1].shunt_mw, back.buses[1].shunt_mw),
                (raw.buses[1].v_min, back.buses[1].v_min),
                (raw.generators[0].q_min_mvar, back.generators[0].q_min_mvar),
                (raw.sites[0].cost_per_mw, back.sites[0].cost_per_mw),
                (raw.sites[0].c_max_mwh, back.sites[0].c_max_mwh),
            ];
            for (a, b) in pairs {
                prop_assert!(rel(a, b) < 1e-12, "{a} vs {b}");
            }
        }
    }
}
