use super::build::{add_hours, add_storage_constraints, add_storage_vars, opex_objective, Layout};
use super::{check_initial_energy, Formulation, OperatingPoint, OpfError, OpfSettings};
use crate::conic::{Affine, CompiledProgram, ConicProgram, ConicSolutionRecord, Label, VarBlock};
use crate::ingest::TimeSeriesData;
use crate::network::NetworkModel;

/// The whole horizon in one program, with installation decisions relaxed to
/// `0 <= U <= 1`.
#[derive(Debug, Clone)]
pub struct CentralizedProgram {
    pub formulation: Formulation,
    pub program: ConicProgram,
    pub compiled: CompiledProgram,
    pub layout: Layout,
    pub u: VarBlock,
    pub day_length: usize,
    capex: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct CentralizedSolution {
    pub record: ConicSolutionRecord,
    pub w: Vec<f64>,
    pub c: Vec<f64>,
    pub u: Vec<f64>,
    /// Scaled investment cost.
    pub capex: f64,
    pub opex: f64,
    pub objective: f64,
    pub point: OperatingPoint,
}

impl CentralizedProgram {
    /// Installation decisions per site; not counted among the continuous
    /// variables.
    pub fn binaries(&self) -> usize {
        self.u.len
    }

    pub fn solve(&self, net: &NetworkModel) -> Result<CentralizedSolution, OpfError> {
        let record = self.compiled.solve(&[])?;
        if !record.is_optimal() {
            return Ok(CentralizedSolution {
                w: Vec::new(),
                c: Vec::new(),
                u: Vec::new(),
                capex: f64::NAN,
                opex: f64::NAN,
                objective: f64::NAN,
                point: OperatingPoint::default(),
                record,
            });
        }
        let capex: f64 = self.capex.iter().map(|&(v, k)| k * record.x[v]).sum();
        let point = self.layout.extract(net, 0, &record.x);
        Ok(CentralizedSolution {
            w: record.values(&self.layout.w).to_vec(),
            c: record.values(&self.layout.c).to_vec(),
            u: record.values(&self.u).to_vec(),
            capex,
            opex: record.objective - capex,
            objective: record.objective,
            point,
            record,
        })
    }
}

/// Builds the centralized counterpart over every day of `ts`, storage
/// trajectories chained across day boundaries.
pub fn build_centralized(
    net: &NetworkModel,
    ts: &TimeSeriesData,
    formulation: Formulation,
    settings: &OpfSettings,
    capex_scale: f64,
) -> Result<CentralizedProgram, OpfError> {
    check_initial_energy(net, settings)?;
    if ts.day_length != settings.day_length {
        return Err(OpfError::DayLength {
            day: 0,
            expected: settings.day_length,
            got: ts.day_length,
        });
    }
    let hours = ts.n_hours();
    let demand: Vec<(Vec<f64>, Vec<f64>)> = (0..hours).map(|t| ts.net_demand(t)).collect();
    for (hour, (p, _)) in demand.iter().enumerate() {
        if p.len() != net.n_buses() {
            return Err(OpfError::Dimension {
                day: hour / ts.day_length,
                hour: hour % ts.day_length,
                expected: net.n_buses(),
                got: p.len(),
            });
        }
    }
    let p = ts.day_length;
    let days: Vec<(usize, usize)> = (0..ts.n_days()).map(|d| (d * p, (d + 1) * p)).collect();

    let mut prog = ConicProgram::new();
    let st = add_storage_vars(&mut prog, net, hours, formulation);
    let hour_vars = add_hours(&mut prog, net, &st, &demand, formulation);
    add_storage_constraints(&mut prog, net, &st, hours, &days, formulation, settings);

    prog.set_counting(false);
    let u = prog.add_block("u", net.n_sites());
    for s in 0..net.n_sites() {
        prog.geq(Label::new("u_min", s, 0), Affine::var(u.at(s)));
        prog.leq(Label::new("u_max", s, 0), Affine::var(u.at(s)).plus(-1.0));
    }
    prog.set_counting(true);

    let mut capex = Vec::new();
    for (s, site) in net.sites.iter().enumerate() {
        let (w, c, us) = (st.w.at(s), st.c.at(s), u.at(s));
        prog.geq(Label::new("w_min", s, 0), Affine::var(w).term(us, -site.w_min));
        prog.geq(Label::new("w_max", s, 0), Affine::var(us).scaled(site.w_max).term(w, -1.0));
        prog.geq(Label::new("c_min", s, 0), Affine::var(c).term(us, -site.c_min));
        prog.geq(Label::new("c_max", s, 0), Affine::var(us).scaled(site.c_max).term(c, -1.0));
        prog.geq(Label::new("c_rate", s, 0), Affine::var(c).scaled(site.c_rate).term(w, -1.0));
        capex.push((w, capex_scale * site.cost_power));
        capex.push((c, capex_scale * site.cost_energy));
    }
    for &(v, k) in &capex {
        prog.minimize(v, k);
    }
    opex_objective(&mut prog, &hour_vars, formulation, settings);

    let compiled = prog.compile()?.with_settings(settings.solver);
    let layout = Layout {
        formulation,
        hours: hour_vars,
        site_p: st.site_p,
        site_q: st.site_q,
        soe: st.soe,
        w: st.w,
        c: st.c,
        slack_w: None,
        slack_c: None,
    };
    Ok(CentralizedProgram {
        formulation,
        program: prog,
        compiled,
        layout,
        u,
        day_length: p,
        capex,
    })
}
