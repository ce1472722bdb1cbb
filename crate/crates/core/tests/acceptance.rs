//! One PASS/FAIL line per acceptance criterion. Tolerances are pinned here.
//!
//! Run with `cargo test -p storeplan --test acceptance -- --nocapture` to see
//! the lines. Every criterion is asserted except the four-worker speedup,
//! which depends on the host having several cores.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use storeplan::acpf::{evaluate_residuals, injections, jacobian, to_hour_point, ybus};
use storeplan::benders::{build_days, build_master, run_gbd, GbdOptions, Integrality, MasterConfig, PlanResult, Termination};
use storeplan::fixtures;
use storeplan::ingest::{
    generate_boundary_conditions, BoundaryConditionSpec, BranchSelection, CandidateRule, TimeSeriesData,
};
use storeplan::opf::{build_centralized, build_subproblem, Formulation, HourPoint, OpfSettings};
use storeplan::report::{decision_rows, loglog_slope, model_size, write_csv, SizeInputs, SizeMode, DECISION_HEADER};
use storeplan::NetworkModel;

const DELTA_SOCP: f64 = 1e-1;
const DELTA_DC: f64 = 1e-2;
const SWEEP_TOL: f64 = 1e-8;
const EPSILON: f64 = 5e-3;
const CONE_GAP_MAX: f64 = 1e-6;
const NODAL_MIN: f64 = 1e-3;
const REFINED_MAX: f64 = 1e-8;
const JAC_REL: f64 = 1e-6;
const REFINE_SECONDS: f64 = 0.2;
const SPEEDUP: f64 = 0.5;
const ITER_SLOPE_MAX: f64 = 0.1;

struct Line {
    name: &'static str,
    pass: bool,
    detail: String,
    asserted: bool,
}

fn line(name: &'static str, pass: bool, detail: String) -> Line {
    Line { name, pass, detail, asserted: true }
}

fn lb_monotone(res: &PlanResult) -> bool {
    res.state.lb_history().windows(2).all(|w| w[1] >= w[0])
}

fn relative_gap(res: &PlanResult) -> f64 {
    match res.ub {
        Some(ub) if ub - res.lb <= storeplan::benders::GAP_FLOOR => 0.0,
        Some(ub) => (ub - res.lb) / res.lb.abs(),
        None => f64::INFINITY,
    }
}

fn six_bus_desk() -> (NetworkModel, TimeSeriesData) {
    let net = fixtures::six_bus_meshed();
    let ts = fixtures::desk_series(&net, 4, 7);
    (net, ts)
}

/// Desk planning run: integer siting, relative termination.
fn desk_options(workers: usize) -> GbdOptions {
    let mut o = GbdOptions::default();
    o.workers = workers;
    o.master.capex_scale = 2.0;
    o.opf.loss_cost = 100.0;
    o
}

fn max_linking(res: &PlanResult, w: &[f64], c: &[f64]) -> f64 {
    let dw = res.decision.w.iter().zip(w).map(|(a, b)| (a - b).abs());
    let dc = res.decision.c.iter().zip(c).map(|(a, b)| (a - b).abs());
    dw.chain(dc).fold(0.0, f64::max)
}

fn socp_equivalence(runs: &mut Vec<(&'static str, PlanResult)>) -> Line {
    let (net, ts) = six_bus_desk();
    let mut o = desk_options(1);
    o.master.integrality = Integrality::Relaxed;
    o.termination = Termination::Absolute(DELTA_SOCP);
    o.refine = false;
    let t = Instant::now();
    let res = run_gbd(&net, &ts, &o).unwrap();
    let cen = build_centralized(&net, &ts, Formulation::Socp, &o.opf, o.master.capex_scale)
        .unwrap()
        .solve(&net)
        .unwrap();
    let secs = t.elapsed().as_secs_f64();
    let r = max_linking(&res, &cen.w, &cen.c);
    let pass = res.converged && cen.record.is_optimal() && r <= DELTA_SOCP && secs < 120.0;
    let detail = format!(
        "max linking residual {r:.3e} <= {DELTA_SOCP:e}, {} iterations, {secs:.1} s < 120 s",
        res.state.records.len()
    );
    runs.push(("six-bus relaxed SOCP", res));
    line("decomposed = centralized (SOCP)", pass, detail)
}

fn dc_equivalence(runs: &mut Vec<(&'static str, PlanResult)>) -> Line {
    let (net, ts) = six_bus_desk();
    let spec = BoundaryConditionSpec {
        tighten_factor: 0.82,
        branches: BranchSelection::BetweenCandidates,
        relax_slack_p: true,
        candidates: CandidateRule::Explicit(vec![3, 5, 6]),
        site_template: fixtures::site(0, 0),
    };
    let net = generate_boundary_conditions(&net, &ts, &spec).unwrap();
    let mut o = GbdOptions::default();
    o.formulation = Formulation::Dc;
    o.master.integrality = Integrality::Relaxed;
    o.termination = Termination::Absolute(1e-4);
    o.refine = false;
    let t = Instant::now();
    let res = run_gbd(&net, &ts, &o).unwrap();
    let cen = build_centralized(&net, &ts, Formulation::Dc, &o.opf, 1.0).unwrap().solve(&net).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let r = max_linking(&res, &cen.w, &cen.c);
    let fc_days: std::collections::BTreeSet<usize> = res.state.feasibility_cuts().map(|c| c.day).collect();
    let restored = res.state.records.last().is_some_and(|l| l.feasible_days == ts.n_days());
    let pass = res.converged && cen.record.is_optimal() && r <= DELTA_DC && !fc_days.is_empty() && restored && secs < 60.0;
    let detail = format!(
        "max linking residual {r:.3e} <= {DELTA_DC:e}, feasibility cuts on {} days, all days feasible at end: {restored}, {secs:.1} s < 60 s",
        fc_days.len()
    );
    runs.push(("six-bus tightened DC", res));
    line("decomposed = centralized (DC, infeasible start)", pass, detail)
}

fn feasibility_sweep(runs: &mut Vec<(&'static str, PlanResult)>) -> Line {
    let net = fixtures::three_bus_congested();
    let ts = fixtures::congested_series(2);
    let o = GbdOptions::default();
    let res = run_gbd(&net, &ts, &o).unwrap();
    let cuts: Vec<_> = res.state.feasibility_cuts().cloned().collect();
    let anchor_min = cuts.iter().map(|c| c.eval(&c.w_anchor, &c.c_anchor)).fold(f64::INFINITY, f64::min);
    let pairs = build_days(&net, &ts, &o).unwrap();
    let (mut feasible, mut violations) = (0, 0);
    for i in 0..=10 {
        for j in 0..=10 {
            let w = vec![0.1 * i as f64; net.n_sites()];
            let c = vec![0.4 * j as f64; net.n_sites()];
            for (d, p) in pairs.iter().enumerate() {
                if p.check.solve(&w, &c).unwrap().objective > SWEEP_TOL {
                    continue;
                }
                feasible += 1;
                violations += cuts.iter().filter(|k| k.day == d && k.eval(&w, &c) > SWEEP_TOL).count();
            }
        }
    }
    let pass = !cuts.is_empty() && violations == 0 && anchor_min > 0.0;
    let detail = format!(
        "{} cuts, {feasible} feasible (point, day) pairs, {violations} violations, min cut value at anchor {anchor_min:.3e} > 0",
        cuts.len()
    );
    runs.push(("three-bus congested", res));
    line("feasibility-cut validity (11 x 11 sweep)", pass, detail)
}

fn gap_closure(runs: &mut Vec<(&'static str, PlanResult)>, desk: &PlanResult) -> Line {
    let triangle = fixtures::triangle();
    let res = run_gbd(&triangle, &fixtures::desk_series(&triangle, 1, 3), &GbdOptions::default()).unwrap();
    runs.push(("triangle", res));
    runs.push(("six-bus integer", desk.clone()));
    let mut bad = Vec::new();
    for (name, r) in runs.iter() {
        if !lb_monotone(r) {
            bad.push(format!("{name}: LB decreased"));
        }
        if !r.converged {
            bad.push(format!("{name}: not converged"));
        }
    }
    let relative_runs = ["three-bus congested", "triangle", "six-bus integer"];
    let mut gaps = Vec::new();
    for (name, r) in runs.iter().filter(|(n, _)| relative_runs.contains(n)) {
        let g = relative_gap(r);
        if g >= EPSILON {
            bad.push(format!("{name}: gap {g:.2e}"));
        }
        gaps.push(format!("{name} {g:.1e}"));
    }
    let detail = if bad.is_empty() {
        format!("{} runs with nondecreasing LB; gaps {} < {EPSILON:e}", runs.len(), gaps.join(", "))
    } else {
        bad.join("; ")
    };
    line("LB monotone, gap closed", bad.is_empty(), detail)
}

fn model_sizes() -> Line {
    let inputs = SizeInputs { g: 53, n: 118, l: 179, s: 118, t: 24, d: 1, p: 24, cut_rounds: 0 };
    let f = model_size(inputs, SizeMode::Subproblem).unwrap();
    let table = (f.continuous_vars, f.constraints, f.parameters) == (47274, 80482, 236);
    let mut emitted = true;
    for net in [fixtures::triangle(), fixtures::three_bus_congested(), fixtures::six_bus_meshed()] {
        let ts = fixtures::desk_series(&net, 2, 1);
        let settings = OpfSettings::default();
        let i = SizeInputs::of(&net, 2, 24, 3);
        let sub = build_subproblem(&net, &ts.day(0), &settings).unwrap();
        let fs = model_size(i, SizeMode::Subproblem).unwrap();
        emitted &= sub.program.counted_variables() == fs.continuous_vars
            && sub.program.counted_constraints() == fs.constraints
            && sub.program.n_params() == fs.parameters;
        let cen = build_centralized(&net, &ts, Formulation::Socp, &settings, 1.0).unwrap();
        let fc = model_size(i, SizeMode::Centralized).unwrap();
        emitted &= cen.program.counted_variables() == fc.continuous_vars
            && cen.program.counted_constraints() == fc.constraints
            && cen.binaries() == fc.binary_vars;
        let m = build_master(&net.sites, 2, &[], &MasterConfig::default()).unwrap().size();
        let fm = model_size(SizeInputs { cut_rounds: 0, ..i }, SizeMode::Master).unwrap();
        emitted &= (m.binaries, m.continuous, m.constraints) == (fm.binary_vars, fm.continuous_vars, fm.constraints);
    }
    let detail = format!(
        "118-bus subproblem {} / {} / {} (expect 47274 / 80482 / 236); emitted counts equal formulas on 3 fixtures: {emitted}",
        f.continuous_vars, f.constraints, f.parameters
    );
    line("model-size anchors", table && emitted, detail)
}

fn relaxation_gap(runs: &[(&'static str, PlanResult)]) -> Line {
    let net = fixtures::triangle();
    let res = &runs.iter().find(|(n, _)| *n == "triangle").unwrap().1;
    let hours: Vec<HourPoint> = res.points.iter().flat_map(|p| p.hours.clone()).collect();
    let rep = evaluate_residuals(&net, &hours, &net.cycle_basis()).unwrap();
    let cone = rep.cone_gap().max;
    let nodal = rep.max_nodal();
    let rec = res.recovery.as_ref().unwrap();
    let refined = rec.max_mismatch();
    let recovered: Vec<HourPoint> = rec
        .hours
        .iter()
        .zip(&hours)
        .map(|(h, hp)| to_hour_point(&net, &h.state, &hp.site_p, &hp.site_q))
        .collect();
    let after = evaluate_residuals(&net, &recovered, &net.cycle_basis()).unwrap().max_nodal();
    let pass = cone <= CONE_GAP_MAX && nodal >= NODAL_MIN && refined <= REFINED_MAX && rec.flagged.is_empty();
    let detail = format!(
        "cone gap {cone:.2e} <= {CONE_GAP_MAX:e}, relaxed nodal residual {nodal:.2e} >= {NODAL_MIN:e}, refined mismatch {refined:.2e} <= {REFINED_MAX:e} (nodal {after:.1e})"
    );
    line("relaxation gap vs AC residual", pass, detail)
}

fn acpf_solver(desk: &PlanResult) -> Line {
    let net = fixtures::six_bus_meshed();
    let n = net.n_buses();
    let (g, b) = ybus(&net);
    let slack = net.slack_bus();
    let pvpq: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| !net.is_voltage_controlled(i)).collect();
    let f = |vm: &[f64], va: &[f64]| {
        let (p, q) = injections(&g, &b, vm, va);
        pvpq.iter().map(|&i| p[i]).chain(pq.iter().map(|&i| q[i])).collect::<Vec<_>>()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let vm: Vec<f64> = (0..n).map(|_| rng.gen_range(0.9..1.1)).collect();
        let va: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let jac = jacobian(&g, &b, &vm, &va, &pvpq, &pq);
        for (col, (k, angle)) in pvpq.iter().map(|&k| (k, true)).chain(pq.iter().map(|&k| (k, false))).enumerate() {
            let (mut up, mut dn) = if angle { (va.clone(), va.clone()) } else { (vm.clone(), vm.clone()) };
            up[k] += h;
            dn[k] -= h;
            let (f1, f2) = if angle { (f(&vm, &up), f(&vm, &dn)) } else { (f(&up, &va), f(&dn, &va)) };
            for r in 0..f1.len() {
                let fd = (f1[r] - f2[r]) / (2.0 * h);
                worst = worst.max((fd - jac[(r, col)]).abs() / (1.0 + fd.abs()));
            }
        }
    }
    let rec = desk.recovery.as_ref().unwrap();
    let slowest = rec.solve_times().into_iter().fold(0.0, f64::max);
    let pass = worst <= JAC_REL && slowest <= REFINE_SECONDS;
    let detail = format!(
        "Jacobian vs central differences on 100 states: worst relative {worst:.2e} <= {JAC_REL:e}; slowest refinement {slowest:.4} s <= {REFINE_SECONDS} s over {} hours",
        rec.hours.len()
    );
    line("AC power-flow solver", pass, detail)
}

fn decision_csv(net: &NetworkModel, res: &PlanResult, dir: &std::path::Path, name: &str) -> Vec<u8> {
    let path = dir.join(name);
    write_csv(&path, &DECISION_HEADER, &decision_rows(net, &res.decision)).unwrap();
    std::fs::read(path).unwrap()
}

fn stage_seconds(res: &PlanResult) -> f64 {
    res.state.records.iter().map(|r| r.stage_time).sum()
}

fn sweep_run(days: usize, workers: usize) -> PlanResult {
    let net = fixtures::three_bus_congested();
    let mut o = GbdOptions::default();
    o.refine = false;
    o.workers = workers;
    run_gbd(&net, &fixtures::congested_series(days), &o).unwrap()
}

fn parallel_identity(desk: &PlanResult) -> Line {
    let (net, ts) = six_bus_desk();
    let four = run_gbd(&net, &ts, &desk_options(4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = decision_csv(&net, desk, dir.path(), "one.csv");
    let b = decision_csv(&net, &four, dir.path(), "four.csv");
    let cuts = desk.state.cuts == four.state.cuts;
    let pass = cuts && a == b;
    let detail = format!(
        "1 vs 4 workers: {} cuts identical: {cuts}; decision CSVs bitwise identical: {}",
        desk.state.cuts.len(),
        a == b
    );
    line("parallel correctness (determinism)", pass, detail)
}

fn parallel_speedup(one: &PlanResult) -> Line {
    let four = sweep_run(81, 4);
    let (t1, t4) = (stage_seconds(one), stage_seconds(&four));
    let ratio = t4 / t1;
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let detail = format!(
        "81 subproblems: stage time {t1:.2} s with 1 worker, {t4:.2} s with 4, ratio {ratio:.2} <= {SPEEDUP} ({cpus} CPU available)"
    );
    Line { name: "parallel speedup", pass: ratio <= SPEEDUP, detail, asserted: false }
}

fn scalability(sweep: &[(usize, PlanResult)]) -> Line {
    let xs: Vec<f64> = sweep.iter().map(|(n, _)| *n as f64).collect();
    let iters: Vec<f64> = sweep.iter().map(|(_, r)| r.state.records.len() as f64).collect();
    let master: Vec<f64> = sweep
        .iter()
        .map(|(_, r)| {
            let mut t: Vec<f64> = r.state.records.iter().map(|x| x.master_time).collect();
            t.sort_by(f64::total_cmp);
            t[t.len() / 2]
        })
        .collect();
    let iter_slope = loglog_slope(&xs, &iters).unwrap();
    let master_slope = loglog_slope(&xs, &master).unwrap();
    let converged = sweep.iter().all(|(_, r)| r.converged);
    let pass = converged && iter_slope <= ITER_SLOPE_MAX && master_slope > 0.0;
    let detail = format!(
        "subproblems {:?}: iterations {:?} (log-log slope {iter_slope:.3} <= {ITER_SLOPE_MAX}), median master time slope {master_slope:.3} > 0",
        sweep.iter().map(|(n, _)| *n).collect::<Vec<_>>(),
        iters
    );
    line("scalability shape", pass, detail)
}

#[test]
fn acceptance() {
    let (net, ts) = six_bus_desk();
    let desk = run_gbd(&net, &ts, &desk_options(1)).unwrap();
    let sweep: Vec<(usize, PlanResult)> = [1, 3, 9, 27, 81].into_iter().map(|n| (n, sweep_run(n, 1))).collect();

    let mut runs = Vec::new();
    let mut lines = vec![socp_equivalence(&mut runs), dc_equivalence(&mut runs), feasibility_sweep(&mut runs)];
    lines.push(gap_closure(&mut runs, &desk));
    lines.push(model_sizes());
    lines.push(relaxation_gap(&runs));
    lines.push(acpf_solver(&desk));
    lines.push(parallel_identity(&desk));
    lines.push(parallel_speedup(&sweep[4].1));
    lines.push(scalability(&sweep));

    for l in &lines {
        let tag = match (l.pass, l.asserted) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FAIL (not asserted)",
        };
        println!("{tag} [{}] {}", l.name, l.detail);
    }
    let failed: Vec<&str> = lines.iter().filter(|l| l.asserted && !l.pass).map(|l| l.name).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}

/// The speedup bound on its own, asserted. Needs at least four cores.
#[test]
#[ignore]
fn parallel_speedup_strict() {
    let one = sweep_run(81, 1);
    let l = parallel_speedup(&one);
    println!("{}", l.detail);
    assert!(l.pass, "{}", l.detail);
}
