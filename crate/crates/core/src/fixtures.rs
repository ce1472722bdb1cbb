//! Small reference networks and horizons used by tests, examples and the
//! browser demo.

use crate::ingest::{reconstruct_reactive, synthetic_series, SyntheticProfile, TimeSeriesData};
use crate::network::{Branch, Bus, BusDemand, BusKind, CandidateSite, Generator, NetworkModel, DEFAULT_THETA_MAX};

fn bus(id: usize, kind: BusKind) -> Bus {
    Bus {
        id,
        kind,
        shunt_g: 0.0,
        shunt_b: 0.0,
        vsq_min: 0.9 * 0.9,
        vsq_max: 1.1 * 1.1,
        base_kv: 230.0,
        v_set: 1.0,
    }
}

fn line(id: usize, from: usize, to: usize, r: f64, x: f64) -> Branch {
    Branch {
        id,
        from,
        to,
        r,
        x,
        theta_max: DEFAULT_THETA_MAX,
        ampacity: f64::INFINITY,
    }
}

fn slack_unit(bus: usize) -> Generator {
    Generator {
        id: 1,
        bus,
        p_min: -20.0,
        p_max: 20.0,
        q_min: -10.0,
        q_max: 10.0,
        is_condenser: false,
    }
}

/// Site template with unit rating bounds and a 2 h minimum duration.
pub fn site(id: usize, bus: usize) -> CandidateSite {
    CandidateSite {
        id,
        bus,
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

fn demand(p: f64, q: f64) -> BusDemand {
    BusDemand { p, q }
}

/// Slack bus 1 feeding a PQ bus 2 through one branch.
pub fn two_bus(r: f64, x: f64) -> NetworkModel {
    NetworkModel::new(
        "two_bus",
        100.0,
        vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)],
        vec![line(1, 0, 1, r, x)],
        vec![slack_unit(0)],
        vec![],
    )
    .and_then(|n| n.with_snapshot(vec![demand(0.0, 0.0), demand(1.0, 0.0)]))
    .expect("valid fixture")
}

/// `n` buses in a line, slack at the head, light load at every other bus.
pub fn radial_chain(n: usize) -> NetworkModel {
    let mut buses = vec![bus(1, BusKind::Slack)];
    buses.extend((2..=n).map(|i| bus(i, BusKind::Pq)));
    let branches = (1..n).map(|i| line(i, i - 1, i, 0.01, 0.05)).collect();
    let mut snap = vec![demand(0.0, 0.0)];
    snap.extend((2..=n).map(|_| demand(0.2, 0.05)));
    NetworkModel::new("radial_chain", 100.0, buses, branches, vec![slack_unit(0)], vec![])
        .and_then(|net| net.with_snapshot(snap))
        .expect("valid fixture")
}

/// Three buses in a loop with deliberately unequal impedances, heavy enough
/// load that angle differences reach a few tenths of a radian.
pub fn triangle() -> NetworkModel {
    NetworkModel::new(
        "triangle",
        100.0,
        vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq), bus(3, BusKind::Pq)],
        vec![
            line(1, 0, 1, 0.02, 0.08),
            line(2, 1, 2, 0.06, 0.30),
            line(3, 0, 2, 0.01, 0.12),
        ],
        vec![slack_unit(0)],
        vec![site(1, 1), site(2, 2)],
    )
    .and_then(|n| n.with_snapshot(vec![demand(0.0, 0.0), demand(1.6, 0.5), demand(1.2, 0.4)]))
    .expect("valid fixture")
}

/// Radial 1-2-3 feeder whose second branch cannot carry the evening peak
/// without storage; two candidate sites at buses 2 and 3.
pub fn three_bus_congested() -> NetworkModel {
    let mut tight = line(2, 1, 2, 0.01, 0.08);
    tight.ampacity = 1.0;
    NetworkModel::new(
        "three_bus_congested",
        100.0,
        vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq), bus(3, BusKind::Pq)],
        vec![line(1, 0, 1, 0.01, 0.05), tight],
        vec![slack_unit(0)],
        vec![site(1, 1), site(2, 2)],
    )
    .and_then(|n| n.with_snapshot(vec![demand(0.0, 0.0), demand(0.1, 0.02), demand(0.9, 0.2)]))
    .expect("valid fixture")
}

/// Hourly demand at bus 3 of [`three_bus_congested`]: overnight valley and a
/// two-hour evening peak above the branch rating. `day` shifts the level
/// slightly so that consecutive days differ.
pub fn congested_day(day: usize) -> [f64; 24] {
    let mut p = [0.0; 24];
    let wiggle = 0.02 * ((day as f64) * 1.7).sin();
    for (h, v) in p.iter_mut().enumerate() {
        let base = 0.55 + 0.25 * (std::f64::consts::PI * (h as f64 - 4.0) / 24.0).sin().powi(2);
        *v = base + wiggle;
    }
    p[18] = 1.12 + wiggle;
    p[19] = 1.15 + wiggle;
    p
}

/// Horizon for [`three_bus_congested`] with a 4.5:1 active/reactive ratio.
pub fn congested_series(days: usize) -> TimeSeriesData {
    let mut load_p = Vec::with_capacity(24 * days);
    let mut load_q = Vec::with_capacity(24 * days);
    for d in 0..days {
        for p3 in congested_day(d) {
            load_p.push(vec![0.0, 0.1, p3]);
            load_q.push(vec![0.0, 0.02, p3 / 4.5]);
        }
    }
    TimeSeriesData::new(24, load_p, load_q).expect("valid series")
}

/// Six-bus meshed desk network: slack and one fixed-output generator, four
/// load buses, eight branches (three independent loops) and three candidate
/// sites at buses 3, 5 and 6.
pub fn six_bus_meshed() -> NetworkModel {
    let mut b2 = bus(2, BusKind::Pv);
    b2.v_set = 1.02;
    let mut b1 = bus(1, BusKind::Slack);
    b1.v_set = 1.03;
    let mut b5 = bus(5, BusKind::Pq);
    b5.shunt_b = 0.05;
    let buses = vec![
        b1,
        b2,
        bus(3, BusKind::Pq),
        bus(4, BusKind::Pq),
        b5,
        bus(6, BusKind::Pq),
    ];
    let branches = vec![
        line(1, 0, 1, 0.01, 0.05),
        line(2, 0, 3, 0.015, 0.07),
        line(3, 1, 2, 0.02, 0.09),
        line(4, 1, 3, 0.01, 0.06),
        line(5, 2, 5, 0.02, 0.10),
        line(6, 3, 4, 0.015, 0.08),
        line(7, 4, 5, 0.02, 0.10),
        line(8, 1, 4, 0.015, 0.07),
    ];
    let generators = vec![
        slack_unit(0),
        Generator {
            id: 2,
            bus: 1,
            p_min: 0.8,
            p_max: 0.8,
            q_min: -1.0,
            q_max: 1.5,
            is_condenser: false,
        },
    ];
    let sites = vec![site(1, 2), site(2, 4), site(3, 5)];
    let snapshot = vec![
        demand(0.0, 0.0),
        demand(0.2, 0.05),
        demand(0.6, 0.2),
        demand(0.4, 0.1),
        demand(0.5, 0.15),
        demand(0.7, 0.25),
    ];
    NetworkModel::new("six_bus_meshed", 100.0, buses, branches, generators, sites)
        .and_then(|n| n.with_snapshot(snapshot))
        .expect("valid fixture")
}

/// Seeded synthetic horizon for any network with a snapshot, reactive part
/// reconstructed from snapshot power factors.
pub fn desk_series(net: &NetworkModel, days: usize, seed: u64) -> TimeSeriesData {
    let profile = SyntheticProfile {
        days,
        seed,
        ..SyntheticProfile::default()
    };
    let active = synthetic_series(net, &profile).expect("fixture has a snapshot");
    reconstruct_reactive(net, &active).expect("fixture snapshot is consistent")
}
