//! Browser bindings: model-size calculator, a small planning run on the
//! congested three-bus feeder, and an AC power flow on the six-bus case.
//!
//! Every export returns a JSON string. The `*_json` functions carry the logic
//! and are plain Rust so they can be tested off the browser.

use serde::Serialize;
use storeplan::acpf::{solve_acpf, AcpfOptions, PowerFlowSpec};
use storeplan::benders::{run_gbd, GbdOptions};
use storeplan::fixtures;
use storeplan::report::{self, SizeInputs, SizeMode};
use wasm_bindgen::prelude::*;

fn to_js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

fn json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[allow(clippy::too_many_arguments)]
pub fn model_size_json(
    g: usize,
    n: usize,
    l: usize,
    s: usize,
    d: usize,
    p: usize,
    cut_rounds: usize,
    mode: &str,
) -> Result<String, String> {
    let mode = match mode {
        "centralized" => SizeMode::Centralized,
        "master" => SizeMode::Master,
        "subproblem" => SizeMode::Subproblem,
        other => return Err(format!("unknown mode {other:?}")),
    };
    let inputs = SizeInputs {
        g,
        n,
        l,
        s,
        t: d * p,
        d,
        p,
        cut_rounds,
    };
    json(&report::model_size(inputs, mode).map_err(|e| e.to_string())?)
}

/// Sizes of the three models for the given grid dimensions.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn model_size(
    g: usize,
    n: usize,
    l: usize,
    s: usize,
    d: usize,
    p: usize,
    cut_rounds: usize,
    mode: &str,
) -> Result<String, JsError> {
    to_js(model_size_json(g, n, l, s, d, p, cut_rounds, mode))
}

#[derive(Serialize)]
struct SiteOut {
    bus: usize,
    built: bool,
    power: f64,
    energy: f64,
}

#[derive(Serialize)]
struct PlanOut {
    converged: bool,
    iterations: usize,
    lb: Vec<f64>,
    ub: Vec<Option<f64>>,
    sites: Vec<SiteOut>,
    capex: f64,
    total_cost: Option<f64>,
    max_mismatch: Option<f64>,
}

pub fn plan_feeder_json(days: usize, load_scale: f64, capex_scale: f64) -> Result<String, String> {
    if !(1..=14).contains(&days) {
        return Err("days must be between 1 and 14".into());
    }
    let net = fixtures::three_bus_congested();
    let ts = fixtures::congested_series(days).scaled(load_scale);
    let mut opts = GbdOptions::default();
    opts.master.capex_scale = capex_scale;
    let res = run_gbd(&net, &ts, &opts).map_err(|e| e.to_string())?;
    let sites = net
        .sites
        .iter()
        .enumerate()
        .map(|(k, s)| SiteOut {
            bus: net.buses[s.bus].id,
            built: res.decision.u[k] > 0.5,
            power: res.decision.w[k],
            energy: res.decision.c[k],
        })
        .collect();
    json(&PlanOut {
        converged: res.converged,
        iterations: res.state.records.len(),
        lb: res.state.lb_history(),
        ub: res.state.ub_history(),
        sites,
        capex: res.decision.capex,
        total_cost: res.total_cost(),
        max_mismatch: res.recovery.as_ref().map(|r| r.max_mismatch()),
    })
}

/// Plans storage on the three-bus feeder for `days` scaled days.
#[wasm_bindgen]
pub fn plan_feeder(days: usize, load_scale: f64, capex_scale: f64) -> Result<String, JsError> {
    to_js(plan_feeder_json(days, load_scale, capex_scale))
}

#[derive(Serialize)]
struct FlowOut {
    converged: bool,
    iterations: usize,
    mismatch: f64,
    bus: Vec<usize>,
    vm: Vec<f64>,
    va_deg: Vec<f64>,
    slack_p: f64,
    switched: Vec<usize>,
}

pub fn power_flow_json(hour: usize, load_scale: f64) -> Result<String, String> {
    let net = fixtures::six_bus_meshed();
    let ts = fixtures::desk_series(&net, 1, 1);
    if hour >= ts.n_hours() {
        return Err(format!("hour must be below {}", ts.n_hours()));
    }
    let (p, q) = ts.net_demand(hour);
    let scale = |v: Vec<f64>| v.into_iter().map(|x| x * load_scale).collect();
    let spec = PowerFlowSpec::new(&net, scale(p), scale(q));
    let st = solve_acpf(&net, &spec, None, &AcpfOptions::default()).map_err(|e| e.to_string())?;
    json(&FlowOut {
        converged: st.converged,
        iterations: st.iterations,
        mismatch: st.mismatch,
        bus: net.buses.iter().map(|b| b.id).collect(),
        vm: st.vm.clone(),
        va_deg: st.va.iter().map(|a| a.to_degrees()).collect(),
        slack_p: st.slack_p,
        switched: st.switched.iter().map(|&i| net.buses[i].id).collect(),
    })
}

/// Newton power flow on the six-bus case at one hour of a synthetic day.
#[wasm_bindgen]
pub fn power_flow(hour: usize, load_scale: f64) -> Result<String, JsError> {
    to_js(power_flow_json(hour, load_scale))
}
