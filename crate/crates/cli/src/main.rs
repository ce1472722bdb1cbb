//! `storeplan` command-line front end.
//!
//! Exit codes: 0 success, 1 error, 2 planning finished without convergence
//! or with unrecovered hours (artifacts are still written).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use storeplan::acpf::{evaluate_residuals, Distribution};
use storeplan::benders::{run_gbd, Integrality, PlanResult, Termination};
use storeplan::config::{RunConfig, ValidationMode, WORKERS_ENV};
use storeplan::ingest::{generate_boundary_conditions, load_timeseries, reconstruct_reactive, synthetic_series, Bundle};
use storeplan::network::{read_case, read_matpower, NetworkModel};
use storeplan::opf::{build_centralized, Formulation, HourPoint};
use storeplan::report::{
    decision_rows, emit_reports, model_size, representative_days, seasons_from, write_csv, RunArtifacts, SizeInputs,
    SizeMode, TimingRow,
};

#[derive(Parser)]
#[command(name = "storeplan", version, about = "Battery storage siting and sizing planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for subproblems and power flows.
    #[arg(long, global = true, env = WORKERS_ENV)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `paths.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse case and series, apply boundary conditions, write the bundle.
    Ingest,
    /// Run the decomposition and the power-flow recovery.
    Plan,
    /// Compare the decomposition with the centralized counterpart.
    Validate,
    /// Rebuild report tables from a finished plan.
    Report,
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn bundle_path(&self) -> PathBuf {
        self.cfg.paths.bundle.clone().unwrap_or_else(|| self.out.join("bundle.json"))
    }

    fn load_bundle(&self) -> Result<(NetworkModel, Bundle)> {
        let path = self.bundle_path();
        let bundle = Bundle::read(&path).with_context(|| format!("run `storeplan ingest` first ({})", path.display()))?;
        let net = bundle.network()?;
        Ok((net, bundle))
    }
}

fn read_network(path: &Path) -> Result<NetworkModel> {
    let net = if path.extension().is_some_and(|e| e == "m") {
        read_matpower(path)
    } else {
        read_case(path)
    }
    .with_context(|| format!("case file {}", path.display()))?;
    Ok(net)
}

fn ingest(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let case = cfg.paths.case.as_ref().context("paths.case is not set")?;
    let mut net = read_network(case)?;
    let p = cfg.run.day_length;
    let active = match &cfg.paths.series {
        Some(path) => load_timeseries(path, &net, p)?,
        None => synthetic_series(&net, &cfg.synthetic_profile()).context("synthetic series")?,
    };
    let mut series = reconstruct_reactive(&net, &active).context("reactive reconstruction")?;
    if let Some(days) = cfg.run.days {
        series = series.truncated(days);
    }
    if let Some(spec) = cfg.boundary_spec() {
        net = generate_boundary_conditions(&net, &series, &spec).context("boundary conditions")?;
    }
    let bundle = Bundle::new(&net, series);
    fs::create_dir_all(&ctx.out).with_context(|| ctx.out.display().to_string())?;
    let path = ctx.bundle_path();
    bundle.write(&path)?;
    println!(
        "bundle {} ({} buses, {} branches, {} sites, {} days) sha256 {}",
        path.display(),
        net.n_buses(),
        net.n_branches(),
        net.n_sites(),
        bundle.series.n_days(),
        bundle.digest
    );
    Ok(())
}

fn relaxed_hours(res: &PlanResult) -> Vec<HourPoint> {
    res.points.iter().flat_map(|p| p.hours.iter().cloned()).collect()
}

fn sizes(net: &NetworkModel, days: usize, p: usize, rounds: usize) -> Result<Vec<storeplan::report::SizeReport>> {
    let inputs = SizeInputs::of(net, days, p, rounds);
    [SizeMode::Centralized, SizeMode::Master, SizeMode::Subproblem]
        .into_iter()
        .map(|m| Ok(model_size(inputs, m)?))
        .collect()
}

fn write_reports(ctx: &Ctx, net: &NetworkModel, days: usize, res: &PlanResult, total: Option<f64>) -> Result<()> {
    let hours = relaxed_hours(res);
    let residuals = if hours.is_empty() {
        None
    } else {
        Some(evaluate_residuals(net, &hours, &net.cycle_basis())?)
    };
    let timing = total.map(|t| TimingRow::of(&res.state, days, t)).into_iter().collect();
    let art = RunArtifacts {
        state: Some(&res.state),
        decision: decision_rows(net, &res.decision),
        residuals: residuals.as_ref(),
        recovery: res.recovery.as_ref(),
        sizes: sizes(net, days, ctx.cfg.run.day_length, res.state.records.len())?,
        timing,
    };
    emit_reports(&art, &ctx.out)?;
    fs::write(ctx.out.join("trace.jsonl"), res.state.trace_jsonl())?;
    Ok(())
}

fn plan(ctx: &Ctx) -> Result<bool> {
    let (net, bundle) = ctx.load_bundle()?;
    let opts = ctx.cfg.gbd_options();
    let start = Instant::now();
    let res = run_gbd(&net, &bundle.series, &opts)?;
    let total = start.elapsed().as_secs_f64();
    write_reports(ctx, &net, bundle.series.n_days(), &res, Some(total))?;
    let stored = PlanResult {
        recovery: None,
        ..res.clone()
    };
    fs::write(ctx.out.join("plan.json"), serde_json::to_string(&stored)?)?;
    println!(
        "{} after {} iterations: lb {:.6} ub {} total time {:.2} s",
        if res.converged { "converged" } else { "not converged" },
        res.state.records.len(),
        res.lb,
        res.ub.map_or("undefined".into(), |u| format!("{u:.6}")),
        total
    );
    for (k, site) in net.sites.iter().enumerate() {
        if res.decision.u[k] > 0.0 {
            println!(
                "  site {} at bus {}: W {:.4} p.u., C {:.4} p.u.h",
                site.id, net.buses[site.bus].id, res.decision.w[k], res.decision.c[k]
            );
        }
    }
    if let Some(rec) = &res.recovery {
        println!(
            "  power flow recovered {}/{} hours, max mismatch {:.2e}",
            rec.hours.len() - rec.flagged.len(),
            rec.hours.len(),
            rec.max_mismatch()
        );
    }
    Ok(res.success())
}

fn validate(ctx: &Ctx) -> Result<bool> {
    let (net, bundle) = ctx.load_bundle()?;
    let mut opts = ctx.cfg.gbd_options();
    if ctx.cfg.run.validation_mode == ValidationMode::None {
        opts.master.integrality = Integrality::Relaxed;
        opts.termination = Termination::Absolute(ctx.cfg.tolerances.delta);
    }
    opts.refine = false;
    let res = run_gbd(&net, &bundle.series, &opts)?;
    write_reports(ctx, &net, bundle.series.n_days(), &res, None)?;

    let cen = build_centralized(&net, &bundle.series, opts.formulation, &opts.opf, opts.master.capex_scale)
        .context("building the centralized counterpart")?
        .solve(&net)?;
    if !cen.record.is_optimal() {
        eprintln!("centralized solve failed: {}", cen.record.diagnostics);
        return Ok(false);
    }
    let mut linking = Vec::new();
    for (k, site) in net.sites.iter().enumerate() {
        linking.push((site.id, "w", res.decision.w[k], cen.w[k]));
        linking.push((site.id, "c", res.decision.c[k], cen.c[k]));
    }
    let rows: Vec<(usize, &str, f64, f64, f64)> =
        linking.iter().map(|&(s, k, d, c)| (s, k, d, c, (d - c).abs())).collect();
    write_csv(
        &ctx.out.join("validation_linking.csv"),
        &["site", "kind", "decomposed", "centralized", "residual"],
        &rows,
    )?;
    let hours = relaxed_hours(&res);
    let mut state = Vec::new();
    for (t, (a, b)) in hours.iter().zip(&cen.point.hours).enumerate() {
        let pairs = [("v", &a.v, &b.v), ("p_n", &a.p_n, &b.p_n), ("site_p", &a.site_p, &b.site_p)];
        for (kind, x, y) in pairs {
            for (i, (u, v)) in x.iter().zip(y.iter()).enumerate() {
                state.push((t, kind, i, (u - v).abs()));
            }
        }
    }
    write_csv(&ctx.out.join("validation_state.csv"), &["hour", "kind", "index", "residual"], &state)?;
    let lk = Distribution::of(rows.iter().map(|r| r.4));
    let st = Distribution::of(state.iter().map(|r| r.3));
    println!(
        "{:?} validation: decomposed {} after {} iterations (ub {}), centralized objective {:.6}",
        opts.formulation,
        if res.converged { "converged" } else { "did not converge" },
        res.state.records.len(),
        res.ub.map_or("undefined".into(), |u| format!("{u:.6}")),
        cen.objective
    );
    println!("  linking residuals: median {:.3e}, max {:.3e}", lk.median, lk.max);
    println!("  state residuals:   median {:.3e}, max {:.3e}", st.median, st.max);
    println!("  feasibility cuts: {}", res.state.feasibility_cuts().count());
    if opts.formulation == Formulation::Dc {
        println!("  (DC mode: voltages are not modeled)");
    }
    Ok(res.converged)
}

fn report(ctx: &Ctx) -> Result<()> {
    let (net, bundle) = ctx.load_bundle()?;
    let path = ctx.out.join("plan.json");
    let text = fs::read_to_string(&path).with_context(|| format!("run `storeplan plan` first ({})", path.display()))?;
    let res: PlanResult = serde_json::from_str(&text)?;
    write_reports(ctx, &net, bundle.series.n_days(), &res, None)?;
    let days = bundle.series.n_days();
    if days >= 4 {
        let rep = representative_days(&net, &bundle.series, &seasons_from(0, days), 1)?;
        for w in &rep.warnings {
            eprintln!("warning: {w}");
        }
        let rows: Vec<(String, usize)> = rep
            .chosen
            .iter()
            .flat_map(|(s, d)| d.iter().map(move |&d| (format!("{s:?}").to_lowercase(), d)))
            .collect();
        write_csv(&ctx.out.join("representative_days.csv"), &["season", "day"], &rows)?;
    }
    println!("reports written to {}", ctx.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = cfg.with_overrides(cli.workers, cli.seed)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.paths.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Ctx { cfg, out };
    if !matches!(cli.command, Command::Ingest) && !ctx.bundle_path().exists() {
        bail!("no bundle at {}; run `storeplan ingest` first", ctx.bundle_path().display());
    }
    fs::create_dir_all(&ctx.out).with_context(|| ctx.out.display().to_string())?;
    let ok = match cli.command {
        Command::Ingest => {
            ingest(&ctx)?;
            true
        }
        Command::Plan => plan(&ctx)?,
        Command::Validate => validate(&ctx)?,
        Command::Report => {
            report(&ctx)?;
            true
        }
    };
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1).map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    msg = format!("{msg}: {cause}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
