use proptest::prelude::*;

use super::*;
use crate::benders::{build_master, IterationRecord, MasterConfig};
use crate::fixtures;
use crate::opf::{build_centralized, build_subproblem, Cut, Formulation, OpfSettings, OptimalityCut};

fn table3_inputs() -> SizeInputs {
    SizeInputs {
        g: 53,
        n: 118,
        l: 179,
        s: 118,
        t: 24,
        d: 1,
        p: 24,
        cut_rounds: 0,
    }
}

#[test]
fn subproblem_size_reproduces_table_values() {
    let i = table3_inputs();
    assert_eq!(hourly_variables(&i), 1601);
    let r = model_size(i, SizeMode::Subproblem).unwrap();
    assert_eq!((r.continuous_vars, r.constraints, r.parameters), (47_274, 80_482, 236));
    assert_eq!(r.binary_vars, 0);
}

#[test]
fn master_size_formula() {
    let i = SizeInputs {
        s: 118,
        d: 365,
        t: 365 * 24,
        p: 24,
        ..SizeInputs::default()
    };
    let r = model_size(i, SizeMode::Master).unwrap();
    assert_eq!((r.binary_vars, r.continuous_vars, r.constraints), (118, 601, 955));
    let short = SizeInputs {
        d: 24,
        t: 24 * 24,
        cut_rounds: 3,
        ..i
    };
    let r = model_size(short, SizeMode::Master).unwrap();
    assert_eq!(r.continuous_vars, 260);
    assert_eq!(r.constraints, 590 + 24 * 4);
}

#[test]
fn inconsistent_horizon_is_rejected() {
    let i = SizeInputs {
        t: 25,
        d: 1,
        p: 24,
        ..SizeInputs::default()
    };
    assert!(matches!(
        model_size(i, SizeMode::Centralized),
        Err(ReportError::Horizon { t: 25, d: 1, p: 24 })
    ));
}

#[test]
fn zero_inputs_leave_only_constants() {
    let c = model_size(SizeInputs::default(), SizeMode::Centralized).unwrap();
    assert_eq!((c.binary_vars, c.continuous_vars, c.constraints, c.parameters), (0, 0, 0, 0));
    let m = model_size(SizeInputs::default(), SizeMode::Master).unwrap();
    assert_eq!((m.continuous_vars, m.constraints), (0, 0));
}

fn empty_opt_cut(day: usize, s: usize, iteration: usize) -> Cut {
    Cut::Optimality(OptimalityCut {
        day,
        iteration,
        opex: 1.0,
        lambda: vec![0.0; s],
        mu: vec![0.0; s],
        w_anchor: vec![0.0; s],
        c_anchor: vec![0.0; s],
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn formulas_match_emitted_counts(which in 0usize..3, p in 1usize..5, days in 1usize..3, rounds in 0usize..4) {
        let net = match which {
            0 => fixtures::triangle(),
            1 => fixtures::three_bus_congested(),
            _ => fixtures::six_bus_meshed(),
        };
        let mut ts = fixtures::desk_series(&net, days, 2);
        ts.day_length = p;
        ts = ts.truncated(days);
        let settings = OpfSettings { day_length: p, ..OpfSettings::default() };
        let inputs = SizeInputs::of(&net, days, p, rounds);

        let sub = build_subproblem(&net, &ts.day(0), &settings).unwrap();
        let f = model_size(inputs, SizeMode::Subproblem).unwrap();
        prop_assert_eq!(sub.program.counted_variables(), f.continuous_vars);
        prop_assert_eq!(sub.program.counted_constraints(), f.constraints);
        prop_assert_eq!(sub.program.n_params(), f.parameters);

        let cen = build_centralized(&net, &ts, Formulation::Socp, &settings, 1.0).unwrap();
        let f = model_size(inputs, SizeMode::Centralized).unwrap();
        prop_assert_eq!(cen.program.counted_variables(), f.continuous_vars);
        prop_assert_eq!(cen.program.counted_constraints(), f.constraints);
        prop_assert_eq!(cen.binaries(), f.binary_vars);

        let s = net.n_sites();
        let cuts: Vec<Cut> = (0..rounds).flat_map(|k| (0..days).map(move |d| empty_opt_cut(d, s, k))).collect();
        let size = build_master(&net.sites, days, &cuts, &MasterConfig::default()).unwrap().size();
        let f = model_size(inputs, SizeMode::Master).unwrap();
        prop_assert_eq!((size.binaries, size.continuous, size.constraints), (f.binary_vars, f.continuous_vars, f.constraints));
    }
}

#[test]
fn seasons_follow_calendar() {
    assert_eq!(Season::of_day_of_year(0), Season::Djf);
    assert_eq!(Season::of_day_of_year(59), Season::Mam);
    assert_eq!(Season::of_day_of_year(151), Season::Jja);
    assert_eq!(Season::of_day_of_year(243), Season::Son);
    assert_eq!(Season::of_day_of_year(334), Season::Djf);
    assert_eq!(seasons_from(364, 2), vec![Season::Djf, Season::Djf]);
}

fn series_from_profiles(net: &NetworkModel, profiles: &[Vec<f64>], bus: usize) -> TimeSeriesData {
    let mut load_p = Vec::new();
    for pr in profiles {
        for &v in pr {
            let mut row = vec![0.0; net.n_buses()];
            row[bus] = v;
            load_p.push(row);
        }
    }
    let load_q = load_p.iter().map(|r| vec![0.0; r.len()]).collect();
    TimeSeriesData::new(profiles[0].len(), load_p, load_q).unwrap()
}

#[test]
fn identical_days_one_per_season_are_each_selected() {
    let net = fixtures::triangle();
    let day: Vec<f64> = (0..24).map(|h| 1.0 + 0.1 * h as f64).collect();
    let ts = series_from_profiles(&net, &vec![day; 4], 1);
    let rep = representative_days(&net, &ts, &Season::ALL, 1).unwrap();
    assert_eq!(rep.bus, 1);
    assert_eq!(rep.days(), vec![0, 1, 2, 3]);
    assert!(rep.warnings.is_empty());
}

#[test]
fn outlier_is_never_representative() {
    let net = fixtures::triangle();
    let clone: Vec<f64> = (0..24).map(|h| 1.0 + 0.05 * (h as f64 / 3.0).sin()).collect();
    let outlier: Vec<f64> = clone.iter().map(|v| v * 3.0).collect();
    let mut profiles = Vec::new();
    let mut seasons = Vec::new();
    for s in Season::ALL {
        profiles.extend([outlier.clone(), clone.clone(), clone.clone()]);
        seasons.extend([s; 3]);
    }
    let ts = series_from_profiles(&net, &profiles, 2);
    let rep = representative_days(&net, &ts, &seasons, 1).unwrap();
    for (_, days) in &rep.chosen {
        assert_ne!(days[0] % 3, 0);
    }
}

#[test]
fn empty_season_is_skipped_with_warning() {
    let net = fixtures::triangle();
    let ts = fixtures::desk_series(&net, 3, 1);
    let rep = representative_days(&net, &ts, &[Season::Jja; 3], 1).unwrap();
    assert_eq!(rep.chosen.len(), 1);
    assert_eq!(rep.warnings.len(), 3);
}

#[test]
fn synthetic_year_matches_brute_force_scan() {
    let net = fixtures::six_bus_meshed();
    let ts = fixtures::desk_series(&net, 365, 11);
    let seasons = seasons_from(0, 365);
    let rep = representative_days(&net, &ts, &seasons, 1).unwrap();
    let bus = rep.bus;
    for (season, chosen) in &rep.chosen {
        let members: Vec<usize> = (0..365).filter(|&d| seasons[d] == *season).collect();
        let med: Vec<f64> = (0..24)
            .map(|h| {
                let mut v: Vec<f64> = members.iter().map(|&d| ts.load_p[d * 24 + h][bus]).collect();
                v.sort_by(f64::total_cmp);
                let m = v.len() / 2;
                if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) }
            })
            .collect();
        let mut best = (f64::INFINITY, 0);
        for &d in &members {
            let pr: Vec<f64> = (0..24).map(|h| ts.load_p[d * 24 + h][bus]).collect();
            let e = rmse(&pr, &med);
            if e < best.0 {
                best = (e, d);
            }
        }
        assert_eq!(chosen[0], best.1, "{season:?}");
    }
}

fn record(iteration: usize, lb: f64, ub: Option<f64>) -> IterationRecord {
    IterationRecord {
        iteration,
        lb,
        ub,
        gap: ub.map(|u| (u - lb) / lb),
        feasible_days: 2,
        master_time: 0.01,
        sub_time_max: 0.02,
        sub_time_total: 0.03,
        stage_time: 0.03,
        w: vec![0.5],
        c: vec![1.0],
        u: vec![1.0],
    }
}

fn data_lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn empty_state_writes_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let state = BendersState::default();
    let art = RunArtifacts {
        state: Some(&state),
        ..RunArtifacts::default()
    };
    let files = emit_reports(&art, dir.path()).unwrap();
    for f in files.iter().filter(|f| f.extension().is_some_and(|e| e == "csv")) {
        assert_eq!(data_lines(f), 0, "{}", f.display());
    }
    let head = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(head.trim(), TRACE_HEADER.join(","));
}

#[test]
fn trace_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let state = BendersState {
        iteration: 2,
        records: vec![record(0, 1.0, None), record(1, 2.0, Some(3.0)), record(2, 2.5, Some(2.5))],
        ..BendersState::default()
    };
    let art = RunArtifacts {
        state: Some(&state),
        ..RunArtifacts::default()
    };
    emit_reports(&art, dir.path()).unwrap();
    let path = dir.path().join("trace.csv");
    assert_eq!(data_lines(&path), 3);
    let back: Vec<TraceRow> = read_csv(&path).unwrap();
    assert_eq!(back, trace_rows(&state));
    assert!(back.windows(2).all(|w| w[1].lb >= w[0].lb));
    #[cfg(feature = "plot")]
    assert!(dir.path().join("convergence.png").exists());
}

#[test]
fn sizes_decisions_and_residuals_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let net = fixtures::triangle();
    let sizes = vec![
        model_size(table3_inputs(), SizeMode::Subproblem).unwrap(),
        model_size(table3_inputs(), SizeMode::Master).unwrap(),
    ];
    let master = crate::benders::MasterSolution {
        u: vec![1.0, 0.0],
        w: vec![0.25, 0.0],
        c: vec![0.5, 0.0],
        alpha: vec![],
        capex: 0.75,
        lb: 0.75,
        nodes: 1,
        solve_time: 0.0,
    };
    let mut hp = crate::opf::HourPoint::zeros(&net);
    hp.v = vec![1.0; 3];
    hp.p_s = vec![0.1, 0.2, -0.3];
    hp.q_o = vec![1e-3, 2e-3, 3e-3];
    let residuals = crate::acpf::evaluate_residuals(&net, &[hp], &net.cycle_basis()).unwrap();
    let timing = vec![TimingRow {
        subproblems: 3,
        iterations: 7,
        master_seconds: 0.5,
        subproblem_seconds: 1.5,
        total_seconds: 2.0,
    }];
    let art = RunArtifacts {
        state: None,
        decision: decision_rows(&net, &master),
        residuals: Some(&residuals),
        recovery: None,
        sizes: sizes.clone(),
        timing: timing.clone(),
    };
    emit_reports(&art, dir.path()).unwrap();
    let back: Vec<SizeRow> = read_csv(&dir.path().join("sizes.csv")).unwrap();
    assert_eq!(back, sizes.iter().map(SizeRow::from).collect::<Vec<_>>());
    let back: Vec<DecisionRow> = read_csv(&dir.path().join("decision.csv")).unwrap();
    assert_eq!(back, art.decision);
    assert_eq!(back[0].bus, 2);
    let back: Vec<ResidualRow> = read_csv(&dir.path().join("residuals.csv")).unwrap();
    assert_eq!(back, residual_rows(&residuals));
    let back: Vec<SummaryRow> = read_csv(&dir.path().join("residual_summary.csv")).unwrap();
    assert_eq!(back, summary_rows(&residuals));
    let back: Vec<TimingRow> = read_csv(&dir.path().join("timing.csv")).unwrap();
    assert_eq!(back, timing);
}

#[test]
fn unwritable_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let err = emit_reports(&RunArtifacts::default(), &blocker.join("out")).unwrap_err();
    assert!(matches!(err, ReportError::Io { .. }));
}

#[test]
fn slope_and_geometric_helpers() {
    assert_eq!(geometric(3, 81), vec![1, 3, 9, 27, 81]);
    assert_eq!(geometric(2, 1), vec![1]);
    let xs = [1.0, 2.0, 4.0, 8.0];
    let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(0.9)).collect();
    assert!((loglog_slope(&xs, &ys).unwrap() - 0.9).abs() < 1e-12);
    assert_eq!(loglog_slope(&[1.0], &[1.0]), None);
}
