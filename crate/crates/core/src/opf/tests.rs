use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::acpf::{solve_acpf, AcpfOptions, PowerFlowSpec};
use crate::fixtures;
use crate::ingest::TimeSeriesData;

fn single_hour(net: &NetworkModel, p: Vec<f64>, q: Vec<f64>) -> (DayData, OpfSettings) {
    let _ = net;
    let day = DayData {
        index: 0,
        p: vec![p],
        q: vec![q],
    };
    let settings = OpfSettings {
        day_length: 1,
        ..OpfSettings::default()
    };
    (day, settings)
}

fn hourly_counts(net: &NetworkModel) -> (usize, usize) {
    let g = net.non_slack_generators().count();
    let (n, l) = (net.n_buses(), net.n_branches());
    (2 + g + 4 * n + 6 * l, 7 + 2 * g + 8 * n + 10 * l)
}

#[test]
fn two_bus_relaxation_matches_power_flow() {
    let net = fixtures::two_bus(0.01, 0.1);
    let (day, settings) = single_hour(&net, vec![0.0, 1.0], vec![0.0, 0.2]);
    let prog = build_subproblem(&net, &day, &settings).unwrap();
    let sol = prog.solve(&[], &[]).unwrap();
    assert!(sol.is_optimal(), "{}", sol.diagnostics);
    let hp = &prog.operating_point(&net, &sol).hours[0];

    let spec = PowerFlowSpec::new(&net, vec![0.0, 1.0], vec![0.0, 0.2]);
    let exact = solve_acpf(&net, &spec, None, &AcpfOptions::default()).unwrap();
    assert!(exact.converged);
    let vr2 = exact.vm[1] * exact.vm[1];
    assert!((hp.v[1] - vr2).abs() < 1e-6, "{} vs {}", hp.v[1], vr2);
    assert!((hp.slack_p - exact.slack_p).abs() < 1e-6);
    assert!((hp.slack_q - exact.slack_q).abs() < 1e-6);
    let gap = hp.q_o[0] * hp.v[0] - 0.1 * (hp.p_s[0].powi(2) + hp.q_s[0].powi(2));
    assert!(gap.abs() < 1e-7, "cone gap {gap}");
}

#[test]
fn day_counts_match_closed_form() {
    for net in [
        fixtures::two_bus(0.01, 0.1),
        fixtures::triangle(),
        fixtures::three_bus_congested(),
        fixtures::six_bus_meshed(),
    ] {
        let ts = fixtures::desk_series(&net, 1, 4);
        let settings = OpfSettings::default();
        let prog = build_subproblem(&net, &ts.day(0), &settings).unwrap();
        let (hv, hc) = hourly_counts(&net);
        let (t, s) = (24, net.n_sites());
        assert_eq!(prog.program.counted_variables(), t * hv + s * (2 * t + t + 1 + 2), "{}", net.name);
        assert_eq!(
            prog.program.counted_constraints(),
            t * hc + s * (2 * t + 2 * (t + 1) + 5),
            "{}",
            net.name
        );
        assert_eq!(prog.program.n_params(), 2 * s);
    }
}

#[test]
fn centralized_counts_match_closed_form() {
    let net = fixtures::six_bus_meshed();
    let ts = fixtures::desk_series(&net, 3, 1);
    let c = build_centralized(&net, &ts, Formulation::Socp, &OpfSettings::default(), 1.0).unwrap();
    let (hv, hc) = hourly_counts(&net);
    let (t, d, s) = (72, 3, net.n_sites());
    assert_eq!(c.program.counted_variables(), t * hv + s * (2 * t + t + 1 + 2));
    assert_eq!(c.binaries(), s);
    assert_eq!(
        c.program.counted_constraints(),
        t * hc + s * (2 * t + 2 * (t + 1) + 2 * d + 6)
    );
}

#[test]
fn feasibility_check_differs_only_in_linking() {
    let net = fixtures::three_bus_congested();
    let ts = fixtures::congested_series(1);
    let settings = OpfSettings::default();
    let a = build_subproblem(&net, &ts.day(0), &settings).unwrap();
    let b = build_feasibility_subproblem(&net, &ts.day(0), &settings).unwrap();
    let kinds = |p: &DayProgram| {
        let mut m: BTreeMap<&str, usize> = BTreeMap::new();
        for c in p.program.constraints() {
            *m.entry(c.label.kind).or_default() += 1;
        }
        m
    };
    let (ka, mut kb) = (kinds(&a), kinds(&b));
    assert_eq!(kb.remove("slack_w_nonneg"), Some(2));
    assert_eq!(kb.remove("slack_c_nonneg"), Some(2));
    assert_eq!(ka, kb);
    for (ca, cb) in a.program.constraints().iter().zip(b.program.constraints()) {
        assert_eq!(ca.label, cb.label);
        if !ca.label.kind.starts_with("link_") {
            assert_eq!(ca.kind, cb.kind, "{}", ca.label);
        } else {
            assert_ne!(ca.kind, cb.kind);
        }
    }
}

#[test]
fn feasibility_objective_scales_with_weight() {
    let net = fixtures::three_bus_congested();
    let ts = fixtures::congested_series(1);
    let mut settings = OpfSettings::default();
    let zero = [0.0, 0.0];
    let v1 = build_feasibility_subproblem(&net, &ts.day(0), &settings)
        .unwrap()
        .solve(&zero, &zero)
        .unwrap()
        .objective;
    settings.w_slack *= 2.0;
    let v2 = build_feasibility_subproblem(&net, &ts.day(0), &settings)
        .unwrap()
        .solve(&zero, &zero)
        .unwrap()
        .objective;
    assert!(v1 > 0.0);
    assert!((v2 / v1 - 2.0).abs() < 1e-6, "{v1} {v2}");
}

#[test]
fn zero_ratings_are_infeasible_on_congested_feeder() {
    let net = fixtures::three_bus_congested();
    let ts = fixtures::congested_series(1);
    let prog = build_subproblem(&net, &ts.day(0), &OpfSettings::default()).unwrap();
    let sol = prog.solve(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
    assert_eq!(sol.status, crate::conic::SolveStatus::Infeasible);
    assert!(extract_optimality_cut(&prog, &sol, &[0.0; 2], &[0.0; 2], 0).is_err());
}

#[test]
fn optimality_cut_is_exact_at_anchor() {
    let net = fixtures::three_bus_congested();
    let ts = fixtures::congested_series(1);
    let prog = build_subproblem(&net, &ts.day(0), &OpfSettings::default()).unwrap();
    let (w, c) = ([0.3, 0.3], [1.0, 1.0]);
    let sol = prog.solve(&w, &c).unwrap();
    let cut = extract_optimality_cut(&prog, &sol, &w, &c, 0).unwrap();
    assert_eq!(cut.eval(&w, &c), sol.objective);
    let as_enum = Cut::Optimality(cut.clone());
    let (k0, a, b) = as_enum.coefficients();
    let affine = k0 + a.iter().zip(&w).map(|(x, y)| x * y).sum::<f64>() + b.iter().zip(&c).map(|(x, y)| x * y).sum::<f64>();
    assert!((affine - sol.objective).abs() < 1e-12);
}

#[test]
fn multipliers_match_finite_differences() {
    let net = fixtures::three_bus_congested();
    let ts = fixtures::congested_series(1);
    let prog = build_subproblem(&net, &ts.day(0), &OpfSettings::default()).unwrap();
    let (w, c) = ([0.3, 0.3], [1.0, 1.0]);
    let base = prog.solve(&w, &c).unwrap();
    let h = 1e-4;
    for i in 0..2 {
        let mut wp = w;
        wp[i] += h;
        let mut wm = w;
        wm[i] -= h;
        let fd = (prog.solve(&wp, &c).unwrap().objective - prog.solve(&wm, &c).unwrap().objective) / (2.0 * h);
        assert!((fd - base.param_sensitivities[i]).abs() < 1e-4, "site {i}: {fd} vs {}", base.param_sensitivities[i]);
    }
}

#[test]
fn feasibility_multipliers_are_nonpositive() {
    let net = fixtures::three_bus_congested();
    let ts = fixtures::congested_series(1);
    let settings = OpfSettings::default();
    let prog = build_feasibility_subproblem(&net, &ts.day(0), &settings).unwrap();
    let (w, c) = ([0.1, 0.1], [0.4, 0.4]);
    let sol = prog.solve(&w, &c).unwrap();
    let cut = extract_feasibility_cut(&prog, &sol, &w, &c, settings.w_slack, 0).unwrap();
    assert!((cut.eval(&w, &c) - sol.objective).abs() < 1e-5 * settings.w_slack);
    for v in cut.nu.iter().chain(&cut.xi) {
        assert!(*v <= 1e-6, "{v}");
    }
    let h = 1e-3;
    for i in 0..2 {
        let mut wp = w;
        wp[i] += h;
        let up = prog.solve(&wp, &c).unwrap().objective;
        assert!(up <= sol.objective + 1e-6);
        assert!(up >= sol.objective + cut.nu[i] * h - 1e-5, "convexity at site {i}");
    }
}

#[test]
fn feasibility_cut_requires_positive_slack() {
    let net = fixtures::three_bus_congested();
    let ts = fixtures::congested_series(1);
    let settings = OpfSettings::default();
    let prog = build_feasibility_subproblem(&net, &ts.day(0), &settings).unwrap();
    let (w, c) = ([1.0, 1.0], [4.0, 4.0]);
    let sol = prog.solve(&w, &c).unwrap();
    assert_eq!(
        extract_feasibility_cut(&prog, &sol, &w, &c, settings.w_slack, 0),
        Err(CutError::ZeroObjective { day: 0 })
    );
}

#[test]
fn dc_slack_energy_equals_total_demand() {
    let net = fixtures::three_bus_congested();
    let ts = fixtures::congested_series(1);
    let settings = OpfSettings::default();
    let prog = build_dc_subproblem(&net, &ts.day(0), &settings).unwrap();
    let sol = prog.solve(&[0.5, 0.5], &[2.0, 2.0]).unwrap();
    assert!(sol.is_optimal(), "{}", sol.diagnostics);
    let demand: f64 = ts.day(0).p.iter().flatten().sum();
    assert!((sol.objective - demand).abs() < 1e-6);
    let op = prog.operating_point(&net, &sol);
    for hp in &op.hours {
        assert!(hp.site_p.iter().sum::<f64>().abs() < 1e-7);
        assert!(hp.p_s[1].abs() <= 1.0 + 1e-7);
    }
}

#[test]
fn storage_trajectory_is_consistent() {
    let net = fixtures::three_bus_congested();
    let ts = fixtures::congested_series(1);
    let prog = build_subproblem(&net, &ts.day(0), &OpfSettings::default()).unwrap();
    let sol = prog.solve(&[0.4, 0.4], &[1.5, 1.5]).unwrap();
    let op = prog.operating_point(&net, &sol);
    for (s, e) in op.soe.iter().enumerate() {
        assert!((e[0] - 0.5 * 0.8 * 1.5).abs() < 1e-6);
        assert!((e[0] - e[24]).abs() < 1e-6);
        for t in 0..24 {
            assert!((e[t + 1] - e[t] - op.hours[t].site_p[s]).abs() < 1e-6);
            assert!(op.hours[t].site_p[s].hypot(op.hours[t].site_q[s]) <= 0.4 + 1e-6);
        }
    }
}

#[test]
fn wrong_day_length_rejected() {
    let net = fixtures::two_bus(0.01, 0.1);
    let ts = TimeSeriesData::new(2, vec![vec![0.0, 1.0]; 2], vec![vec![0.0; 2]; 2]).unwrap();
    assert!(matches!(
        build_subproblem(&net, &ts.day(0), &OpfSettings::default()),
        Err(OpfError::DayLength { expected: 24, got: 2, .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn optimality_cut_underestimates(dw0 in -0.1f64..0.3, dw1 in -0.1f64..0.3, dc0 in -0.3f64..1.0, dc1 in -0.3f64..1.0) {
        let net = fixtures::three_bus_congested();
        let ts = fixtures::congested_series(1);
        let prog = build_subproblem(&net, &ts.day(0), &OpfSettings::default()).unwrap();
        let (w, c) = ([0.35, 0.35], [1.2, 1.2]);
        let cut = extract_optimality_cut(&prog, &prog.solve(&w, &c).unwrap(), &w, &c, 0).unwrap();
        let (w2, c2) = ([w[0] + dw0, w[1] + dw1], [c[0] + dc0, c[1] + dc1]);
        let sol = prog.solve(&w2, &c2).unwrap();
        if sol.is_optimal() {
            prop_assert!(sol.objective >= cut.eval(&w2, &c2) - 1e-6, "{} < {}", sol.objective, cut.eval(&w2, &c2));
        }
    }
}
