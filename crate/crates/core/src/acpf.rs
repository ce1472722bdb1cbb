//! Polar Newton–Raphson AC power flow.
//!
//! Buses with generators keep their voltage setpoint until their reactive
//! output leaves the combined generator range, at which point they are
//! converted to load buses pinned at the violated limit. Converted buses are
//! never switched back.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::Instant;

use crate::network::{CycleBasis, NetworkModel};
use crate::opf::HourPoint;

#[derive(Debug, Error)]
pub enum AcpfError {
    #[error("singular Jacobian at Newton iteration {iteration} (condition estimate {condition:.3e})")]
    Singular { iteration: usize, condition: f64 },
    #[error("expected {expected} per-bus values, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("bus {bus} has nonpositive squared voltage {value}")]
    NonpositiveVoltage { bus: usize, value: f64 },
}

/// Net demand per bus (consumption positive) and voltage setpoints. Setpoints
/// are read only at voltage-controlled buses.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSpec {
    pub p_demand: Vec<f64>,
    pub q_demand: Vec<f64>,
    pub v_set: Vec<f64>,
}

impl PowerFlowSpec {
    pub fn new(net: &NetworkModel, p_demand: Vec<f64>, q_demand: Vec<f64>) -> Self {
        Self {
            p_demand,
            q_demand,
            v_set: net.buses.iter().map(|b| b.v_set).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcpfOptions {
    pub enforce_q_limits: bool,
    pub max_newton: usize,
    pub max_rounds: usize,
    pub tolerance: f64,
}

impl Default for AcpfOptions {
    fn default() -> Self {
        Self {
            enforce_q_limits: true,
            max_newton: 30,
            max_rounds: 10,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcpfState {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    /// Computed net injections per bus.
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    /// Reactive output per generator; units at a bus share the bus total in
    /// proportion to their ranges.
    pub gen_q: Vec<f64>,
    pub slack_p: f64,
    pub slack_q: f64,
    /// Total Newton iterations over all switching rounds.
    pub iterations: usize,
    pub mismatch: f64,
    pub converged: bool,
    /// Bus indices converted from voltage control to fixed reactive output.
    pub switched: Vec<usize>,
    pub solve_time: f64,
}

/// Dense bus admittance matrix as conductance and susceptance parts.
pub fn ybus(net: &NetworkModel) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = net.n_buses();
    let mut g = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    for br in &net.branches {
        let den = br.r * br.r + br.x * br.x;
        let (gs, bs) = (br.r / den, -br.x / den);
        let (f, t) = (br.from, br.to);
        g[(f, f)] += gs;
        g[(t, t)] += gs;
        g[(f, t)] -= gs;
        g[(t, f)] -= gs;
        b[(f, f)] += bs;
        b[(t, t)] += bs;
        b[(f, t)] -= bs;
        b[(t, f)] -= bs;
    }
    for (i, bus) in net.buses.iter().enumerate() {
        g[(i, i)] += bus.shunt_g;
        b[(i, i)] += bus.shunt_b;
    }
    (g, b)
}

/// Complex power injections `S_i = V_i * conj(sum_k Y_ik V_k)`.
pub fn injections(g: &DMatrix<f64>, b: &DMatrix<f64>, vm: &[f64], va: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = vm.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        for k in 0..n {
            let (gik, bik) = (g[(i, k)], b[(i, k)]);
            if gik == 0.0 && bik == 0.0 {
                continue;
            }
            let (s, c) = (va[i] - va[k]).sin_cos();
            p[i] += vm[i] * vm[k] * (gik * c + bik * s);
            q[i] += vm[i] * vm[k] * (gik * s - bik * c);
        }
    }
    (p, q)
}

/// Newton Jacobian of `[P(pvpq); Q(pq)]` with respect to `[va(pvpq); vm(pq)]`.
pub fn jacobian(
    g: &DMatrix<f64>,
    b: &DMatrix<f64>,
    vm: &[f64],
    va: &[f64],
    pvpq: &[usize],
    pq: &[usize],
) -> DMatrix<f64> {
    let (p, q) = injections(g, b, vm, va);
    let (na, nv) = (pvpq.len(), pq.len());
    let mut jac = DMatrix::zeros(na + nv, na + nv);
    let mut col_a = vec![usize::MAX; vm.len()];
    let mut col_v = vec![usize::MAX; vm.len()];
    for (c, &k) in pvpq.iter().enumerate() {
        col_a[k] = c;
    }
    for (c, &k) in pq.iter().enumerate() {
        col_v[k] = na + c;
    }
    let rows = pvpq
        .iter()
        .map(|&i| (i, true))
        .chain(pq.iter().map(|&i| (i, false)))
        .enumerate();
    for (r, (i, is_p)) in rows {
        for k in 0..vm.len() {
            let (gik, bik) = (g[(i, k)], b[(i, k)]);
            if k != i && gik == 0.0 && bik == 0.0 {
                continue;
            }
            let (s, c) = (va[i] - va[k]).sin_cos();
            let (d_va, d_vm) = if k == i {
                if is_p {
                    (-q[i] - bik * vm[i] * vm[i], p[i] / vm[i] + gik * vm[i])
                } else {
                    (p[i] - gik * vm[i] * vm[i], q[i] / vm[i] - bik * vm[i])
                }
            } else if is_p {
                (vm[i] * vm[k] * (gik * s - bik * c), vm[i] * (gik * c + bik * s))
            } else {
                (-vm[i] * vm[k] * (gik * c + bik * s), vm[i] * (gik * s - bik * c))
            };
            if col_a[k] != usize::MAX {
                jac[(r, col_a[k])] = d_va;
            }
            if col_v[k] != usize::MAX {
                jac[(r, col_v[k])] = d_vm;
            }
        }
    }
    jac
}

fn q_range(net: &NetworkModel, bus: usize) -> (f64, f64) {
    net.generators_at(bus)
        .fold((0.0, 0.0), |(lo, hi), (_, g)| (lo + g.q_min, hi + g.q_max))
}

fn check_len(n: usize, v: &[f64]) -> Result<(), AcpfError> {
    if v.len() != n {
        return Err(AcpfError::Dimension {
            expected: n,
            got: v.len(),
        });
    }
    Ok(())
}

/// Solves the power flow from `init` (flat start when `None`).
///
/// Returns `Ok` with `converged == false` when the iteration caps are hit;
/// an `Err` only for structural problems or a singular Jacobian.
pub fn solve_acpf(
    net: &NetworkModel,
    spec: &PowerFlowSpec,
    init: Option<(&[f64], &[f64])>,
    opts: &AcpfOptions,
) -> Result<AcpfState, AcpfError> {
    let start = Instant::now();
    let n = net.n_buses();
    check_len(n, &spec.p_demand)?;
    check_len(n, &spec.q_demand)?;
    check_len(n, &spec.v_set)?;
    let (g, b) = ybus(net);
    let slack = net.slack_bus();

    let mut controlled: Vec<bool> = (0..n).map(|i| net.is_voltage_controlled(i)).collect();
    let mut q_fixed = spec.q_demand.clone();
    let (mut vm, mut va) = match init {
        Some((v, a)) => {
            check_len(n, v)?;
            check_len(n, a)?;
            (v.to_vec(), a.to_vec())
        }
        None => (vec![1.0; n], vec![0.0; n]),
    };
    for i in 0..n {
        if controlled[i] {
            vm[i] = spec.v_set[i];
        }
    }
    va[slack] = 0.0;

    let p_spec: Vec<f64> = spec.p_demand.iter().map(|d| -d).collect();
    let mut iterations = 0;
    let mut switched = Vec::new();
    let mut converged = false;
    let mut mismatch = f64::INFINITY;

    for _round in 0..opts.max_rounds.max(1) {
        let pvpq: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
        let pq: Vec<usize> = (0..n).filter(|&i| !controlled[i]).collect();
        let mut round_ok = false;
        for it in 0..=opts.max_newton {
            let (p, q) = injections(&g, &b, &vm, &va);
            let mut f = DVector::zeros(pvpq.len() + pq.len());
            for (r, &i) in pvpq.iter().enumerate() {
                f[r] = p[i] - p_spec[i];
            }
            for (r, &i) in pq.iter().enumerate() {
                f[pvpq.len() + r] = q[i] + q_fixed[i];
            }
            mismatch = f.amax();
            if mismatch <= opts.tolerance {
                round_ok = true;
                break;
            }
            if it == opts.max_newton {
                break;
            }
            let jac = jacobian(&g, &b, &vm, &va, &pvpq, &pq);
            let dx = match jac.clone().lu().solve(&f) {
                Some(dx) if dx.iter().all(|v| v.is_finite()) => dx,
                _ => {
                    let sv = jac.singular_values();
                    let condition = sv.max() / sv.min();
                    return Err(AcpfError::Singular {
                        iteration: iterations,
                        condition,
                    });
                }
            };
            iterations += 1;
            for (r, &i) in pvpq.iter().enumerate() {
                va[i] -= dx[r];
            }
            for (r, &i) in pq.iter().enumerate() {
                vm[i] -= dx[pvpq.len() + r];
            }
        }
        if !round_ok {
            break;
        }
        if !opts.enforce_q_limits {
            converged = true;
            break;
        }
        let (_, q) = injections(&g, &b, &vm, &va);
        let mut violated = false;
        for i in 0..n {
            if !controlled[i] || i == slack {
                continue;
            }
            let (lo, hi) = q_range(net, i);
            let q_gen = q[i] + spec.q_demand[i];
            let tol = 1e-9;
            let limit = if q_gen > hi + tol {
                Some(hi)
            } else if q_gen < lo - tol {
                Some(lo)
            } else {
                None
            };
            if let Some(lim) = limit {
                controlled[i] = false;
                q_fixed[i] = spec.q_demand[i] - lim;
                switched.push(i);
                violated = true;
            }
        }
        if !violated {
            converged = true;
            break;
        }
    }

    let (p_inj, q_inj) = injections(&g, &b, &vm, &va);
    let mut gen_q = vec![0.0; net.generators.len()];
    for i in 0..n {
        let total = q_inj[i] + spec.q_demand[i];
        let units: Vec<usize> = net.generators_at(i).map(|(k, _)| k).collect();
        if units.is_empty() {
            continue;
        }
        let (lo, hi) = q_range(net, i);
        let frac = if hi > lo { (total - lo) / (hi - lo) } else { 1.0 / units.len() as f64 };
        for k in units {
            let gk = &net.generators[k];
            gen_q[k] = if hi > lo {
                gk.q_min + frac * (gk.q_max - gk.q_min)
            } else {
                total * frac
            };
        }
    }
    Ok(AcpfState {
        slack_p: p_inj[slack] + spec.p_demand[slack],
        slack_q: q_inj[slack] + spec.q_demand[slack],
        vm,
        va,
        p_inj,
        q_inj,
        gen_q,
        iterations,
        mismatch,
        converged,
        switched,
        solve_time: start.elapsed().as_secs_f64(),
    })
}

/// Current magnitude per branch at a power-flow state.
pub fn branch_currents(net: &NetworkModel, vm: &[f64], va: &[f64]) -> Vec<f64> {
    net.branches
        .iter()
        .map(|br| {
            let (f, t) = (br.from, br.to);
            let dr = vm[f] * va[f].cos() - vm[t] * va[t].cos();
            let di = vm[f] * va[f].sin() - vm[t] * va[t].sin();
            ((dr * dr + di * di) / (br.r * br.r + br.x * br.x)).sqrt()
        })
        .collect()
}

/// Converts an exact state to the relaxed-model variables, with storage
/// injections carried through unchanged.
pub fn to_hour_point(net: &NetworkModel, state: &AcpfState, site_p: &[f64], site_q: &[f64]) -> HourPoint {
    let (vm, va) = (&state.vm, &state.va);
    let mut hp = HourPoint::zeros(net);
    for i in 0..net.n_buses() {
        hp.v[i] = vm[i] * vm[i];
        hp.theta_n[i] = va[i];
        hp.p_n[i] = state.p_inj[i];
        hp.q_n[i] = state.q_inj[i];
    }
    for (l, br) in net.branches.iter().enumerate() {
        let (f, t) = (br.from, br.to);
        let (vfr, vfi) = (vm[f] * va[f].cos(), vm[f] * va[f].sin());
        let (vtr, vti) = (vm[t] * va[t].cos(), vm[t] * va[t].sin());
        let den = br.r * br.r + br.x * br.x;
        let (gs, bs) = (br.r / den, -br.x / den);
        let (dr, di) = (vfr - vtr, vfi - vti);
        let (ir, ii) = (gs * dr - bs * di, gs * di + bs * dr);
        // S = V * conj(I)
        hp.p_s[l] = vfr * ir + vfi * ii;
        hp.q_s[l] = vfi * ir - vfr * ii;
        let isq = ir * ir + ii * ii;
        hp.p_o[l] = br.r * isq;
        hp.q_o[l] = br.x * isq;
        hp.k[l] = hp.q_o[l];
        hp.theta_l[l] = va[f] - va[t];
    }
    hp.slack_p = state.slack_p;
    hp.slack_q = state.slack_q;
    hp.site_p = site_p.to_vec();
    hp.site_q = site_q.to_vec();
    hp
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w - two_pi
    } else {
        w
    }
}

/// Residuals of one hour of a relaxed operating point.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HourResiduals {
    /// AC injection at `(sqrt(V), theta_n)` minus the relaxed net injection.
    pub nodal_p: Vec<f64>,
    pub nodal_q: Vec<f64>,
    /// `v_s v_r sin(theta_s - theta_r) - (X p_s - R q_s)` per branch.
    pub branch: Vec<f64>,
    /// Per basis cycle, the wrapped sum of the angle differences implied by
    /// the flows, `asin((X p_s - R q_s) / (v_s v_r))`.
    pub cycle: Vec<f64>,
    /// `q_o - X (p_s^2 + q_s^2) / V_s` per branch.
    pub cone_gap: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Distribution {
    pub count: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Distribution {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        v.sort_by(f64::total_cmp);
        let q = |f: f64| {
            let pos = f * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Self {
            count: v.len(),
            min: v[0],
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            max: v[v.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResidualReport {
    pub hours: Vec<HourResiduals>,
}

impl ResidualReport {
    fn collect(&self, f: impl Fn(&HourResiduals) -> &Vec<f64>) -> Distribution {
        Distribution::of(self.hours.iter().flat_map(|h| f(h).iter().map(|v| v.abs())))
    }

    /// Distribution of the absolute nodal residuals, active and reactive.
    pub fn nodal(&self) -> Distribution {
        Distribution::of(
            self.hours
                .iter()
                .flat_map(|h| h.nodal_p.iter().chain(&h.nodal_q).map(|v| v.abs())),
        )
    }

    pub fn branch(&self) -> Distribution {
        self.collect(|h| &h.branch)
    }

    pub fn cycle(&self) -> Distribution {
        self.collect(|h| &h.cycle)
    }

    /// Distribution of signed cone gaps.
    pub fn cone_gap(&self) -> Distribution {
        Distribution::of(self.hours.iter().flat_map(|h| h.cone_gap.iter().copied()))
    }

    pub fn max_nodal(&self) -> f64 {
        self.nodal().max
    }
}

pub fn evaluate_hour(
    net: &NetworkModel,
    (g, b): (&DMatrix<f64>, &DMatrix<f64>),
    hp: &HourPoint,
    cycles: &CycleBasis,
) -> Result<HourResiduals, AcpfError> {
    if let Some((bus, &value)) = hp.v.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(AcpfError::NonpositiveVoltage { bus, value });
    }
    let vm: Vec<f64> = hp.v.iter().map(|v| v.sqrt()).collect();
    let (p, q) = injections(g, b, &vm, &hp.theta_n);
    let nodal_p = p.iter().zip(&hp.p_n).map(|(a, r)| a - r).collect();
    let nodal_q = q.iter().zip(&hp.q_n).map(|(a, r)| a - r).collect();
    let mut branch = Vec::with_capacity(net.n_branches());
    let mut implied = Vec::with_capacity(net.n_branches());
    let mut cone_gap = Vec::with_capacity(net.n_branches());
    for (l, br) in net.branches.iter().enumerate() {
        let (f, t) = (br.from, br.to);
        let rhs = br.x * hp.p_s[l] - br.r * hp.q_s[l];
        let vv = vm[f] * vm[t];
        branch.push(vv * (hp.theta_n[f] - hp.theta_n[t]).sin() - rhs);
        implied.push((rhs / vv).clamp(-1.0, 1.0).asin());
        cone_gap.push(hp.q_o[l] - br.x * (hp.p_s[l].powi(2) + hp.q_s[l].powi(2)) / hp.v[f]);
    }
    let cycle = cycles.cycles.iter().map(|c| wrap_angle(c.signed_sum(&implied))).collect();
    Ok(HourResiduals {
        nodal_p,
        nodal_q,
        branch,
        cycle,
        cone_gap,
    })
}

pub fn evaluate_residuals(net: &NetworkModel, hours: &[HourPoint], cycles: &CycleBasis) -> Result<ResidualReport, AcpfError> {
    let (g, b) = ybus(net);
    let hours = hours
        .iter()
        .map(|hp| evaluate_hour(net, (&g, &b), hp, cycles))
        .collect::<Result<_, _>>()?;
    Ok(ResidualReport { hours })
}

/// Outcome of recovering one hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredHour {
    pub state: AcpfState,
    /// True when the warm start failed and the flat start was used.
    pub flat_start: bool,
    /// Newton iterations of the warm-start attempt.
    pub warm_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Recovery {
    pub hours: Vec<RecoveredHour>,
    /// Hour indices that converged under neither initialization.
    pub flagged: Vec<usize>,
}

impl Recovery {
    pub fn solve_times(&self) -> Vec<f64> {
        self.hours.iter().map(|h| h.state.solve_time).collect()
    }

    /// Largest power-balance mismatch over converged hours.
    pub fn max_mismatch(&self) -> f64 {
        self.hours
            .iter()
            .filter(|h| h.state.converged)
            .map(|h| h.state.mismatch)
            .fold(0.0, f64::max)
    }
}

/// Power-flow input for one hour of a relaxed point: net demand plus storage
/// consumption, voltage setpoints at controlled buses taken from the relaxed
/// squared voltages.
pub fn recovery_spec(net: &NetworkModel, hp: &HourPoint, demand_p: &[f64], demand_q: &[f64]) -> PowerFlowSpec {
    let mut p = demand_p.to_vec();
    let mut q = demand_q.to_vec();
    for (s, site) in net.sites.iter().enumerate() {
        p[site.bus] += hp.site_p.get(s).copied().unwrap_or(0.0);
        q[site.bus] += hp.site_q.get(s).copied().unwrap_or(0.0);
    }
    let v_set = (0..net.n_buses())
        .map(|i| {
            if net.is_voltage_controlled(i) && hp.v[i] > 0.0 {
                hp.v[i].sqrt()
            } else {
                net.buses[i].v_set
            }
        })
        .collect();
    PowerFlowSpec {
        p_demand: p,
        q_demand: q,
        v_set,
    }
}

/// Solves one hour warm-started from the relaxed point, falling back to a
/// flat start.
pub fn recover_hour(net: &NetworkModel, hp: &HourPoint, spec: &PowerFlowSpec, opts: &AcpfOptions) -> RecoveredHour {
    let vm: Vec<f64> = hp.v.iter().map(|v| v.max(1e-6).sqrt()).collect();
    let warm = solve_acpf(net, spec, Some((&vm, &hp.theta_n)), opts);
    let warm_iterations = warm.as_ref().map(|s| s.iterations).unwrap_or(usize::MAX);
    match warm {
        Ok(state) if state.converged => RecoveredHour {
            state,
            flat_start: false,
            warm_iterations,
        },
        other => {
            let flat = solve_acpf(net, spec, None, opts);
            let state = match (flat, other) {
                (Ok(s), _) => s,
                (Err(_), Ok(s)) => s,
                (Err(_), Err(_)) => AcpfState {
                    vm,
                    va: hp.theta_n.clone(),
                    p_inj: vec![f64::NAN; net.n_buses()],
                    q_inj: vec![f64::NAN; net.n_buses()],
                    gen_q: vec![f64::NAN; net.generators.len()],
                    slack_p: f64::NAN,
                    slack_q: f64::NAN,
                    iterations: 0,
                    mismatch: f64::INFINITY,
                    converged: false,
                    switched: Vec::new(),
                    solve_time: 0.0,
                },
            };
            RecoveredHour {
                state,
                flat_start: true,
                warm_iterations,
            }
        }
    }
}

/// Runs [`recover_hour`] for every hour, in parallel over `workers` threads.
pub fn recover_feasible(
    net: &NetworkModel,
    hours: &[HourPoint],
    demand: &[(Vec<f64>, Vec<f64>)],
    opts: &AcpfOptions,
    workers: usize,
) -> Recovery {
    let idx: Vec<usize> = (0..hours.len()).collect();
    let out = crate::exec::par_map(workers, &idx, |&t| {
        let spec = recovery_spec(net, &hours[t], &demand[t].0, &demand[t].1);
        recover_hour(net, &hours[t], &spec, opts)
    });
    let flagged = out
        .iter()
        .enumerate()
        .filter(|(_, h)| !h.state.converged)
        .map(|(t, _)| t)
        .collect();
    Recovery { hours: out, flagged }
}

/// Reactive loss per branch for an exact state, `X |I|^2`.
pub fn reactive_losses(net: &NetworkModel, state: &AcpfState) -> Vec<f64> {
    branch_currents(net, &state.vm, &state.va)
        .iter()
        .zip(&net.branches)
        .map(|(i, br)| br.x * i * i)
        .collect()
}
