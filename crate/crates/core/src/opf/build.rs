use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{block_values, Formulation, HourPoint, LossMode, OperatingPoint, OpfSettings, Role};
use crate::conic::{Affine, ConicProgram, Label, VarBlock};
use crate::ingest::DayData;
use crate::network::NetworkModel;

/// Variable blocks of one hour. Blocks unused by a formulation have length 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourVars {
    /// `[P, Q]` of the slack unit; DC hours have only `P`.
    pub slack: VarBlock,
    /// Reactive output of the non-slack generators.
    pub qg: VarBlock,
    pub v: VarBlock,
    pub theta: VarBlock,
    pub pn: VarBlock,
    pub qn: VarBlock,
    pub theta_l: VarBlock,
    /// Sending-end active flow; the branch flow itself in DC hours.
    pub ps: VarBlock,
    pub qs: VarBlock,
    pub po: VarBlock,
    pub qo: VarBlock,
    pub k: VarBlock,
}

/// Variable layout of a daily or multi-day program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub formulation: Formulation,
    pub hours: Vec<HourVars>,
    /// Storage power, site-major: `s * hours + t`.
    pub site_p: VarBlock,
    pub site_q: VarBlock,
    /// State of energy, site-major: `s * (hours + 1) + t`.
    pub soe: VarBlock,
    pub w: VarBlock,
    pub c: VarBlock,
    pub slack_w: Option<VarBlock>,
    pub slack_c: Option<VarBlock>,
}

impl Layout {
    pub fn n_hours(&self) -> usize {
        self.hours.len()
    }

    pub fn n_sites(&self) -> usize {
        self.w.len
    }

    fn site_p_var(&self, s: usize, t: usize) -> usize {
        self.site_p.at(s * self.n_hours() + t)
    }

    fn site_q_var(&self, s: usize, t: usize) -> Option<usize> {
        (self.site_q.len > 0).then(|| self.site_q.at(s * self.n_hours() + t))
    }

    fn soe_var(&self, s: usize, t: usize) -> usize {
        self.soe.at(s * (self.n_hours() + 1) + t)
    }

    /// Reads the operating point out of a primal vector.
    pub fn extract(&self, net: &NetworkModel, day: usize, x: &[f64]) -> OperatingPoint {
        let t_len = self.n_hours();
        let s_len = self.n_sites();
        let slack_gen = net.slack_generator();
        let mut hours = Vec::with_capacity(t_len);
        for (t, hv) in self.hours.iter().enumerate() {
            let mut hp = HourPoint::zeros(net);
            let slack = block_values(x, &hv.slack);
            hp.slack_p = slack[0];
            hp.slack_q = slack.get(1).copied().unwrap_or(0.0);
            hp.gen_q[slack_gen] = hp.slack_q;
            let qg = block_values(x, &hv.qg);
            for (pos, (g, _)) in net.non_slack_generators().enumerate() {
                hp.gen_q[g] = qg.get(pos).copied().unwrap_or(0.0);
            }
            let copy = |dst: &mut Vec<f64>, b: &VarBlock| {
                if b.len > 0 {
                    dst.copy_from_slice(block_values(x, b));
                }
            };
            copy(&mut hp.v, &hv.v);
            copy(&mut hp.theta_n, &hv.theta);
            copy(&mut hp.p_n, &hv.pn);
            copy(&mut hp.q_n, &hv.qn);
            copy(&mut hp.theta_l, &hv.theta_l);
            copy(&mut hp.p_s, &hv.ps);
            copy(&mut hp.q_s, &hv.qs);
            copy(&mut hp.p_o, &hv.po);
            copy(&mut hp.q_o, &hv.qo);
            copy(&mut hp.k, &hv.k);
            if self.formulation == Formulation::Dc {
                hp.v.iter_mut().for_each(|v| *v = 1.0);
                for (l, br) in net.branches.iter().enumerate() {
                    hp.theta_l[l] = hp.theta_n[br.from] - hp.theta_n[br.to];
                }
            }
            for s in 0..s_len {
                hp.site_p[s] = x[self.site_p_var(s, t)];
                hp.site_q[s] = self.site_q_var(s, t).map(|v| x[v]).unwrap_or(0.0);
            }
            hours.push(hp);
        }
        let soe = (0..s_len)
            .map(|s| (0..=t_len).map(|t| x[self.soe_var(s, t)]).collect())
            .collect();
        OperatingPoint { day, hours, soe }
    }
}

fn lbl(kind: &'static str, a: usize, b: usize) -> Label {
    Label::new(kind, a, b)
}

/// Adds the variables and constraints of one relaxed AC hour:
/// `7 + 2G + 8N + 10L` constraints over `2 + G + 4N + 6L` variables.
fn add_hour_socp(
    prog: &mut ConicProgram,
    net: &NetworkModel,
    t: usize,
    demand_p: &[f64],
    demand_q: &[f64],
    site_p: &[usize],
    site_q: &[usize],
) -> HourVars {
    let (n, l) = (net.n_buses(), net.n_branches());
    let non_slack: Vec<usize> = net.non_slack_generators().map(|(g, _)| g).collect();
    let slack = prog.add_block(format!("slack[{t}]"), 2);
    let qg = prog.add_block(format!("qg[{t}]"), non_slack.len());
    let v = prog.add_block(format!("v[{t}]"), n);
    let theta = prog.add_block(format!("theta[{t}]"), n);
    let pn = prog.add_block(format!("pn[{t}]"), n);
    let qn = prog.add_block(format!("qn[{t}]"), n);
    let theta_l = prog.add_block(format!("theta_l[{t}]"), l);
    let ps = prog.add_block(format!("ps[{t}]"), l);
    let qs = prog.add_block(format!("qs[{t}]"), l);
    let po = prog.add_block(format!("po[{t}]"), l);
    let qo = prog.add_block(format!("qo[{t}]"), l);
    let k = prog.add_block(format!("k[{t}]"), l);

    let sb = net.slack_bus();
    let sg = &net.generators[net.slack_generator()];
    let (sp, sq) = (slack.at(0), slack.at(1));
    prog.geq(lbl("slack_p_min", t, 0), Affine::var(sp).plus(-sg.p_min));
    prog.leq(lbl("slack_p_max", t, 0), Affine::var(sp).plus(-sg.p_max));
    prog.geq(lbl("slack_q_min", t, 0), Affine::var(sq).plus(-sg.q_min));
    prog.leq(lbl("slack_q_max", t, 0), Affine::var(sq).plus(-sg.q_max));
    prog.eq(lbl("slack_angle", t, 0), Affine::var(theta.at(sb)));
    let vs = net.buses[sb].v_set;
    prog.eq(lbl("slack_voltage", t, 0), Affine::var(v.at(sb)).plus(-vs * vs));
    let neutral = site_p.iter().fold(Affine::new(), |a, &p| a.term(p, 1.0));
    prog.eq(lbl("balancing_neutrality", t, 0), neutral);

    for (pos, &g) in non_slack.iter().enumerate() {
        let gen = &net.generators[g];
        prog.geq(lbl("qg_min", t, g), Affine::var(qg.at(pos)).plus(-gen.q_min));
        prog.leq(lbl("qg_max", t, g), Affine::var(qg.at(pos)).plus(-gen.q_max));
    }

    for (i, bus) in net.buses.iter().enumerate() {
        let mut bal_p = Affine::var(pn.at(i)).term(v.at(i), -bus.shunt_g);
        let mut bal_q = Affine::var(qn.at(i)).term(v.at(i), bus.shunt_b);
        for (li, br) in net.branches.iter().enumerate() {
            if br.from == i {
                bal_p = bal_p.term(ps.at(li), -1.0);
                bal_q = bal_q.term(qs.at(li), -1.0);
            }
            if br.to == i {
                bal_p = bal_p.term(ps.at(li), 1.0).term(po.at(li), -1.0);
                bal_q = bal_q.term(qs.at(li), 1.0).term(qo.at(li), -1.0);
            }
        }
        prog.eq(lbl("flow_balance_p", t, i), bal_p);
        prog.eq(lbl("flow_balance_q", t, i), bal_q);

        let mut inj_p = Affine::var(pn.at(i)).plus(demand_p[i]);
        let mut inj_q = Affine::var(qn.at(i)).plus(demand_q[i]);
        if i == sb {
            inj_p = inj_p.term(sp, -1.0);
            inj_q = inj_q.term(sq, -1.0);
        }
        for (pos, &g) in non_slack.iter().enumerate() {
            if net.generators[g].bus == i {
                inj_q = inj_q.term(qg.at(pos), -1.0);
            }
        }
        for (s, site) in net.sites.iter().enumerate() {
            if site.bus == i {
                inj_p = inj_p.term(site_p[s], 1.0);
                inj_q = inj_q.term(site_q[s], 1.0);
            }
        }
        prog.eq(lbl("injection_p", t, i), inj_p);
        prog.eq(lbl("injection_q", t, i), inj_q);

        prog.geq(lbl("v_min", t, i), Affine::var(v.at(i)).plus(-bus.vsq_min));
        prog.leq(lbl("v_max", t, i), Affine::var(v.at(i)).plus(-bus.vsq_max));
        prog.geq(lbl("theta_min", t, i), Affine::var(theta.at(i)).plus(PI));
        prog.leq(lbl("theta_max", t, i), Affine::var(theta.at(i)).plus(-PI));
    }

    for (li, br) in net.branches.iter().enumerate() {
        let (f, to) = (br.from, br.to);
        let (r, x) = (br.r, br.x);
        prog.eq(
            lbl("voltage_drop", t, li),
            Affine::var(v.at(f))
                .term(v.at(to), -1.0)
                .term(ps.at(li), -2.0 * r)
                .term(qs.at(li), -2.0 * x)
                .term(po.at(li), r)
                .term(qo.at(li), x),
        );
        prog.eq(
            lbl("angle_proxy", t, li),
            Affine::var(theta_l.at(li)).term(ps.at(li), -x).term(qs.at(li), r),
        );
        prog.eq(
            lbl("angle_difference", t, li),
            Affine::var(theta_l.at(li))
                .term(theta.at(f), -1.0)
                .term(theta.at(to), 1.0),
        );
        let sx = x.sqrt();
        prog.rotated_soc(
            lbl("loss_cone", t, li),
            Affine::var(qo.at(li)),
            Affine::new().term(v.at(f), 0.5),
            vec![Affine::new().term(ps.at(li), sx), Affine::new().term(qs.at(li), sx)],
        );
        prog.geq(lbl("loss_bound", t, li), Affine::var(k.at(li)).term(qo.at(li), -1.0));
        prog.eq(lbl("loss_ratio", t, li), Affine::new().term(po.at(li), x).term(qo.at(li), -r));
        let sin2 = br.theta_max.sin().powi(2);
        prog.rotated_soc(
            lbl("angle_cone", t, li),
            Affine::new().term(v.at(f), 0.5 * sin2),
            Affine::var(v.at(to)),
            vec![Affine::var(theta_l.at(li))],
        );
        prog.geq(lbl("theta_l_min", t, li), Affine::var(theta_l.at(li)).plus(br.theta_max));
        prog.leq(lbl("theta_l_max", t, li), Affine::var(theta_l.at(li)).plus(-br.theta_max));
        prog.leq(
            lbl("ampacity", t, li),
            Affine::var(k.at(li)).plus(-x * br.ampacity * br.ampacity),
        );
    }

    HourVars {
        slack,
        qg,
        v,
        theta,
        pn,
        qn,
        theta_l,
        ps,
        qs,
        po,
        qo,
        k,
    }
}

/// Adds one lossless DC hour: slack active power, nodal angles and branch
/// flows.
fn add_hour_dc(prog: &mut ConicProgram, net: &NetworkModel, t: usize, demand_p: &[f64], site_p: &[usize]) -> HourVars {
    let (n, l) = (net.n_buses(), net.n_branches());
    let slack = prog.add_block(format!("slack[{t}]"), 1);
    let theta = prog.add_block(format!("theta[{t}]"), n);
    let flow = prog.add_block(format!("flow[{t}]"), l);
    let empty = |prog: &mut ConicProgram, name: &str| prog.add_block(format!("{name}[{t}]"), 0);

    let sb = net.slack_bus();
    let sg = &net.generators[net.slack_generator()];
    let sp = slack.at(0);
    prog.geq(lbl("slack_p_min", t, 0), Affine::var(sp).plus(-sg.p_min));
    prog.leq(lbl("slack_p_max", t, 0), Affine::var(sp).plus(-sg.p_max));
    prog.eq(lbl("slack_angle", t, 0), Affine::var(theta.at(sb)));
    let neutral = site_p.iter().fold(Affine::new(), |a, &p| a.term(p, 1.0));
    prog.eq(lbl("balancing_neutrality", t, 0), neutral);

    for i in 0..n {
        let mut bal = Affine::constant(-demand_p[i]);
        if i == sb {
            bal = bal.term(sp, 1.0);
        }
        for (li, br) in net.branches.iter().enumerate() {
            if br.from == i {
                bal = bal.term(flow.at(li), -1.0);
            }
            if br.to == i {
                bal = bal.term(flow.at(li), 1.0);
            }
        }
        for (s, site) in net.sites.iter().enumerate() {
            if site.bus == i {
                bal = bal.term(site_p[s], -1.0);
            }
        }
        prog.eq(lbl("dc_balance", t, i), bal);
    }
    for (li, br) in net.branches.iter().enumerate() {
        prog.eq(
            lbl("dc_flow", t, li),
            Affine::var(flow.at(li))
                .term(theta.at(br.from), -1.0 / br.x)
                .term(theta.at(br.to), 1.0 / br.x),
        );
        prog.leq(lbl("dc_rating_max", t, li), Affine::var(flow.at(li)).plus(-br.ampacity));
        prog.geq(lbl("dc_rating_min", t, li), Affine::var(flow.at(li)).plus(br.ampacity));
        let diff = Affine::var(theta.at(br.from)).term(theta.at(br.to), -1.0);
        prog.geq(lbl("theta_l_min", t, li), diff.clone().plus(br.theta_max));
        prog.leq(lbl("theta_l_max", t, li), diff.plus(-br.theta_max));
    }
    HourVars {
        slack,
        qg: empty(prog, "qg"),
        v: empty(prog, "v"),
        theta,
        pn: empty(prog, "pn"),
        qn: empty(prog, "qn"),
        theta_l: empty(prog, "theta_l"),
        ps: flow,
        qs: empty(prog, "qs"),
        po: empty(prog, "po"),
        qo: empty(prog, "qo"),
        k: empty(prog, "k"),
    }
}

/// Storage variables shared by daily and multi-day programs.
pub(super) struct StorageBlocks {
    pub site_p: VarBlock,
    pub site_q: VarBlock,
    pub soe: VarBlock,
    pub w: VarBlock,
    pub c: VarBlock,
}

pub(super) fn add_storage_vars(prog: &mut ConicProgram, net: &NetworkModel, hours: usize, formulation: Formulation) -> StorageBlocks {
    let s = net.n_sites();
    let site_p = prog.add_block("site_p", s * hours);
    let site_q = prog.add_block("site_q", if formulation == Formulation::Socp { s * hours } else { 0 });
    let soe = prog.add_block("soe", s * (hours + 1));
    let w = prog.add_block("w", s);
    let c = prog.add_block("c", s);
    StorageBlocks {
        site_p,
        site_q,
        soe,
        w,
        c,
    }
}

/// Adds every hour of the horizon and returns the per-hour variable blocks.
pub(super) fn add_hours(
    prog: &mut ConicProgram,
    net: &NetworkModel,
    st: &StorageBlocks,
    demand: &[(Vec<f64>, Vec<f64>)],
    formulation: Formulation,
) -> Vec<HourVars> {
    let hours = demand.len();
    let s = net.n_sites();
    demand
        .iter()
        .enumerate()
        .map(|(t, (p, q))| {
            let sp: Vec<usize> = (0..s).map(|k| st.site_p.at(k * hours + t)).collect();
            match formulation {
                Formulation::Socp => {
                    let sq: Vec<usize> = (0..s).map(|k| st.site_q.at(k * hours + t)).collect();
                    add_hour_socp(prog, net, t, p, q, &sp, &sq)
                }
                Formulation::Dc => add_hour_dc(prog, net, t, p, &sp),
            }
        })
        .collect()
}

/// Storage dynamics, converter capability and state-of-energy limits for
/// every site, with energy neutrality and the initial state imposed on each
/// `(start, end)` day window of the trajectory.
pub(super) fn add_storage_constraints(
    prog: &mut ConicProgram,
    net: &NetworkModel,
    st: &StorageBlocks,
    hours: usize,
    days: &[(usize, usize)],
    formulation: Formulation,
    settings: &OpfSettings,
) {
    for (s, site) in net.sites.iter().enumerate() {
        let p = |t: usize| st.site_p.at(s * hours + t);
        let e = |t: usize| st.soe.at(s * (hours + 1) + t);
        let (w, c) = (st.w.at(s), st.c.at(s));
        for t in 0..hours {
            prog.eq(
                lbl("soe_dynamics", s, t),
                Affine::var(e(t + 1)).term(e(t), -1.0).term(p(t), -settings.dt),
            );
        }
        for t in 0..hours {
            match formulation {
                Formulation::Socp => {
                    let q = st.site_q.at(s * hours + t);
                    prog.soc(lbl("converter", s, t), Affine::var(w), vec![Affine::var(p(t)), Affine::var(q)]);
                }
                Formulation::Dc => {
                    prog.geq(lbl("converter_max", s, t), Affine::var(w).term(p(t), -1.0));
                    prog.geq(lbl("converter_min", s, t), Affine::var(w).term(p(t), 1.0));
                }
            }
        }
        for t in 0..=hours {
            prog.geq(lbl("soe_min", s, t), Affine::var(e(t)).term(c, -site.soe_min));
            prog.geq(lbl("soe_max", s, t), Affine::var(c).scaled(site.soe_max).term(e(t), -1.0));
        }
        let init = settings.soe_init_factor * (site.soe_max - site.soe_min);
        for (d, &(start, end)) in days.iter().enumerate() {
            prog.eq(lbl("energy_neutrality", s, d), Affine::var(e(start)).term(e(end), -1.0));
            prog.eq(lbl("initial_soe", s, d), Affine::var(e(start)).term(c, -init));
        }
        prog.geq(lbl("w_nonneg", s, 0), Affine::var(w));
    }
}

fn loss_objective(prog: &mut ConicProgram, hours: &[HourVars], settings: &OpfSettings) {
    let w = settings.w_loss * settings.loss_cost;
    for hv in hours {
        for l in 0..hv.qo.len {
            match settings.loss_mode {
                LossMode::Quadratic => prog.minimize_square(hv.qo.at(l), w),
                LossMode::Linear => prog.minimize(hv.k.at(l), w),
            }
        }
    }
}

pub(super) fn opex_objective(prog: &mut ConicProgram, hours: &[HourVars], formulation: Formulation, settings: &OpfSettings) {
    match formulation {
        Formulation::Socp => loss_objective(prog, hours, settings),
        Formulation::Dc => {
            for hv in hours {
                prog.minimize(hv.slack.at(0), settings.dc_slack_weight);
            }
        }
    }
}

pub(super) fn day_program(
    net: &NetworkModel,
    day: &DayData,
    formulation: Formulation,
    role: Role,
    settings: &OpfSettings,
) -> (ConicProgram, Layout) {
    let hours = day.p.len();
    let s = net.n_sites();
    let mut prog = ConicProgram::new();
    let st = add_storage_vars(&mut prog, net, hours, formulation);
    let demand: Vec<(Vec<f64>, Vec<f64>)> = day.p.iter().cloned().zip(day.q.iter().cloned()).collect();
    let hour_vars = add_hours(&mut prog, net, &st, &demand, formulation);
    add_storage_constraints(&mut prog, net, &st, hours, &[(0, hours)], formulation, settings);

    let w_hat: Vec<_> = (0..s).map(|k| prog.add_param(format!("w_hat[{k}]"))).collect();
    let c_hat: Vec<_> = (0..s).map(|k| prog.add_param(format!("c_hat[{k}]"))).collect();
    let (slack_w, slack_c) = match role {
        Role::Opex => {
            for k in 0..s {
                let id = prog.eq(lbl("link_w", k, 0), Affine::var(st.w.at(k)).param(w_hat[k], -1.0));
                prog.tag(format!("w[{k}]"), id);
            }
            for k in 0..s {
                let id = prog.eq(lbl("link_c", k, 0), Affine::var(st.c.at(k)).param(c_hat[k], -1.0));
                prog.tag(format!("c[{k}]"), id);
            }
            opex_objective(&mut prog, &hour_vars, formulation, settings);
            (None, None)
        }
        Role::FeasibilityCheck => {
            let sw = prog.add_block("slack_w", s);
            let sc = prog.add_block("slack_c", s);
            for k in 0..s {
                let id = prog.eq(
                    lbl("link_w", k, 0),
                    Affine::var(st.w.at(k)).param(w_hat[k], -1.0).term(sw.at(k), -1.0),
                );
                prog.tag(format!("w[{k}]"), id);
            }
            for k in 0..s {
                let id = prog.eq(
                    lbl("link_c", k, 0),
                    Affine::var(st.c.at(k)).param(c_hat[k], -1.0).term(sc.at(k), -1.0),
                );
                prog.tag(format!("c[{k}]"), id);
            }
            for k in 0..s {
                prog.geq(lbl("slack_w_nonneg", k, 0), Affine::var(sw.at(k)));
                prog.geq(lbl("slack_c_nonneg", k, 0), Affine::var(sc.at(k)));
                prog.minimize(sw.at(k), settings.w_slack);
                prog.minimize(sc.at(k), settings.w_slack);
            }
            (Some(sw), Some(sc))
        }
    };
    let layout = Layout {
        formulation,
        hours: hour_vars,
        site_p: st.site_p,
        site_q: st.site_q,
        soe: st.soe,
        w: st.w,
        c: st.c,
        slack_w,
        slack_c,
    };
    (prog, layout)
}
