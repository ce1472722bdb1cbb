//! Parameterized conic programs.
//!
//! A [`ConicProgram`] collects linear equalities and inequalities, standard
//! and rotated second-order cones and a linear objective with an optional
//! nonnegative diagonal quadratic term. Named scalar parameters enter the
//! constant part of affine expressions only, so [`CompiledProgram::solve`]
//! rebuilds nothing but the right-hand side between solves.
//!
//! Dual values use the sensitivity convention: the dual of a tagged equality
//! `expr == 0` is the derivative of the optimal value when the equality is
//! perturbed to `expr == r`, evaluated at `r = 0`.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use web_time::Instant;

/// Constants beyond this magnitude are treated as absent bounds.
const INF_BOUND: f64 = 1e25;

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("convexity audit failed at {constraint}: {reason}")]
    Audit { constraint: String, reason: String },
    #[error("expected {expected} parameter values, got {got}")]
    Parameters { expected: usize, got: usize },
    #[error("solver setup failed: {0}")]
    Setup(String),
}

/// Handle to a contiguous block of variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarBlock {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl VarBlock {
    #[inline]
    pub fn at(&self, i: usize) -> usize {
        debug_assert!(i < self.len, "{}[{i}] out of range", self.name);
        self.start + i
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConstraintId(pub usize);

/// Affine expression `sum(coef * x) + constant + sum(coef * param)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
    pub params: Vec<(ParamId, f64)>,
}

impl Affine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(v: usize) -> Self {
        Self::new().term(v, 1.0)
    }

    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            ..Self::default()
        }
    }

    pub fn term(mut self, v: usize, coef: f64) -> Self {
        if coef != 0.0 {
            self.terms.push((v, coef));
        }
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn param(mut self, p: ParamId, coef: f64) -> Self {
        self.params.push((p, coef));
        self
    }

    pub fn scaled(mut self, k: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= k;
        }
        for p in &mut self.params {
            p.1 *= k;
        }
        self.constant *= k;
        self
    }

    pub fn eval(&self, x: &[f64], params: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>()
            + self.constant
            + self.params.iter().map(|&(p, c)| c * params[p.0]).sum::<f64>()
    }
}

/// Short structured label used for diagnostics and structural comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label {
    pub kind: &'static str,
    pub a: u32,
    pub b: u32,
}

impl Label {
    pub fn new(kind: &'static str, a: usize, b: usize) -> Self {
        Self {
            kind,
            a: a as u32,
            b: b as u32,
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}[{},{}]", self.kind, self.a, self.b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintKind {
    /// `expr == 0`
    Eq(Affine),
    /// `expr >= 0`
    Geq(Affine),
    /// `||vector|| <= bound`
    Soc { bound: Affine, vector: Vec<Affine> },
    /// `2 x y >= ||z||^2`, `x, y >= 0`
    RotatedSoc { x: Affine, y: Affine, z: Vec<Affine> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub label: Label,
    pub kind: ConstraintKind,
    /// Whether the constraint counts towards the model-size report.
    pub counted: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    blocks: Vec<VarBlock>,
    n_vars: usize,
    n_counted_vars: usize,
    params: Vec<String>,
    constraints: Vec<Constraint>,
    linear_obj: Vec<(usize, f64)>,
    quad_obj: Vec<(usize, f64)>,
    obj_constant: f64,
    tagged: Vec<(String, ConstraintId)>,
    counting: bool,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self {
            counting: true,
            ..Self::default()
        }
    }

    /// Toggles whether subsequently added variables and constraints are
    /// counted in [`ConicProgram::counted_variables`] and
    /// [`ConicProgram::counted_constraints`].
    pub fn set_counting(&mut self, on: bool) {
        self.counting = on;
    }

    pub fn add_block(&mut self, name: impl Into<String>, len: usize) -> VarBlock {
        let block = VarBlock {
            name: name.into(),
            start: self.n_vars,
            len,
        };
        self.n_vars += len;
        if self.counting {
            self.n_counted_vars += len;
        }
        self.blocks.push(block.clone());
        block
    }

    pub fn add_param(&mut self, name: impl Into<String>) -> ParamId {
        self.params.push(name.into());
        ParamId(self.params.len() - 1)
    }

    fn push(&mut self, label: Label, kind: ConstraintKind) -> ConstraintId {
        self.constraints.push(Constraint {
            label,
            kind,
            counted: self.counting,
        });
        ConstraintId(self.constraints.len() - 1)
    }

    pub fn eq(&mut self, label: Label, expr: Affine) -> ConstraintId {
        self.push(label, ConstraintKind::Eq(expr))
    }

    pub fn geq(&mut self, label: Label, expr: Affine) -> ConstraintId {
        self.push(label, ConstraintKind::Geq(expr))
    }

    pub fn leq(&mut self, label: Label, expr: Affine) -> ConstraintId {
        self.push(label, ConstraintKind::Geq(expr.scaled(-1.0)))
    }

    pub fn soc(&mut self, label: Label, bound: Affine, vector: Vec<Affine>) -> ConstraintId {
        self.push(label, ConstraintKind::Soc { bound, vector })
    }

    pub fn rotated_soc(&mut self, label: Label, x: Affine, y: Affine, z: Vec<Affine>) -> ConstraintId {
        self.push(label, ConstraintKind::RotatedSoc { x, y, z })
    }

    /// Marks an equality whose dual must be reported.
    pub fn tag(&mut self, name: impl Into<String>, id: ConstraintId) {
        self.tagged.push((name.into(), id));
    }

    pub fn minimize(&mut self, v: usize, coef: f64) {
        self.linear_obj.push((v, coef));
    }

    /// Adds `coef * x_v^2` to the objective.
    pub fn minimize_square(&mut self, v: usize, coef: f64) {
        self.quad_obj.push((v, coef));
    }

    pub fn add_objective_constant(&mut self, c: f64) {
        self.obj_constant += c;
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn blocks(&self) -> &[VarBlock] {
        &self.blocks
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn param_names(&self) -> &[String] {
        &self.params
    }

    pub fn counted_variables(&self) -> usize {
        self.n_counted_vars
    }

    pub fn counted_constraints(&self) -> usize {
        self.constraints.iter().filter(|c| c.counted).count()
    }

    pub fn tagged(&self) -> &[(String, ConstraintId)] {
        &self.tagged
    }

    fn audit(&self) -> Result<(), ConicError> {
        let fail = |c: &str, r: &str| ConicError::Audit {
            constraint: c.to_string(),
            reason: r.to_string(),
        };
        let check = |e: &Affine, label: &Label| -> Result<(), ConicError> {
            for &(v, c) in &e.terms {
                if v >= self.n_vars {
                    return Err(fail(&label.to_string(), "variable index out of range"));
                }
                if !c.is_finite() {
                    return Err(fail(&label.to_string(), "non-finite coefficient"));
                }
            }
            for &(p, c) in &e.params {
                if p.0 >= self.params.len() || !c.is_finite() {
                    return Err(fail(&label.to_string(), "bad parameter reference"));
                }
            }
            if e.constant.is_nan() {
                return Err(fail(&label.to_string(), "NaN constant"));
            }
            Ok(())
        };
        for c in &self.constraints {
            match &c.kind {
                ConstraintKind::Eq(e) | ConstraintKind::Geq(e) => check(e, &c.label)?,
                ConstraintKind::Soc { bound, vector } => {
                    check(bound, &c.label)?;
                    for e in vector {
                        check(e, &c.label)?;
                    }
                }
                ConstraintKind::RotatedSoc { x, y, z } => {
                    check(x, &c.label)?;
                    check(y, &c.label)?;
                    for e in z {
                        check(e, &c.label)?;
                    }
                }
            }
        }
        for &(v, q) in &self.quad_obj {
            if v >= self.n_vars {
                return Err(fail("objective", "variable index out of range"));
            }
            if !(q >= 0.0 && q.is_finite()) {
                return Err(fail(
                    "objective",
                    &format!("quadratic coefficient {q} on variable {v} is not convex"),
                ));
            }
        }
        for &(v, c) in &self.linear_obj {
            if v >= self.n_vars || !c.is_finite() {
                return Err(fail("objective", "bad linear term"));
            }
        }
        for (name, id) in &self.tagged {
            match self.constraints.get(id.0).map(|c| &c.kind) {
                Some(ConstraintKind::Eq(_)) => {}
                _ => return Err(fail(name, "only equalities can be tagged for duals")),
            }
        }
        Ok(())
    }

    /// Audits the program and assembles solver-ready data.
    pub fn compile(&self) -> Result<CompiledProgram, ConicError> {
        self.audit()?;
        let n = self.n_vars;

        // rows are emitted as s = b - A x with s in the cone, i.e. s = expr
        let mut rows: Vec<&Affine> = Vec::new();
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        let mut row_span = vec![(0usize, 0usize); self.constraints.len()];
        let mut extra: Vec<Affine> = Vec::new();

        let eqs: Vec<usize> = (0..self.constraints.len())
            .filter(|&i| matches!(self.constraints[i].kind, ConstraintKind::Eq(_)))
            .collect();
        let geqs: Vec<usize> = (0..self.constraints.len())
            .filter(|&i| matches!(self.constraints[i].kind, ConstraintKind::Geq(_)))
            .collect();
        for &i in &eqs {
            if let ConstraintKind::Eq(e) = &self.constraints[i].kind {
                row_span[i] = (rows.len(), 1);
                rows.push(e);
            }
        }
        if !eqs.is_empty() {
            cones.push(SupportedConeT::ZeroConeT(eqs.len()));
        }
        for &i in &geqs {
            if let ConstraintKind::Geq(e) = &self.constraints[i].kind {
                row_span[i] = (rows.len(), 1);
                rows.push(e);
            }
        }
        if !geqs.is_empty() {
            cones.push(SupportedConeT::NonnegativeConeT(geqs.len()));
        }
        // rotated cones become standard ones: (x + y, x - y, sqrt2 z)
        for c in &self.constraints {
            if let ConstraintKind::RotatedSoc { x, y, z } = &c.kind {
                extra.push(add(x, y, 1.0));
                extra.push(add(x, y, -1.0));
                for e in z {
                    extra.push(e.clone().scaled(std::f64::consts::SQRT_2));
                }
            }
        }
        let mut extra_iter = 0usize;
        let mut cone_rows: Vec<Affine> = Vec::new();
        for (i, c) in self.constraints.iter().enumerate() {
            match &c.kind {
                ConstraintKind::Soc { bound, vector } => {
                    let start = rows.len() + cone_rows.len();
                    cone_rows.push(bound.clone());
                    cone_rows.extend(vector.iter().cloned());
                    row_span[i] = (start, 1 + vector.len());
                    cones.push(SupportedConeT::SecondOrderConeT(1 + vector.len()));
                }
                ConstraintKind::RotatedSoc { z, .. } => {
                    let start = rows.len() + cone_rows.len();
                    let len = 2 + z.len();
                    cone_rows.extend(extra[extra_iter..extra_iter + len].iter().cloned());
                    extra_iter += len;
                    row_span[i] = (start, len);
                    cones.push(SupportedConeT::SecondOrderConeT(len));
                }
                _ => {}
            }
        }
        let all_rows: Vec<&Affine> = rows.into_iter().chain(cone_rows.iter()).collect();
        let m = all_rows.len();

        let mut ii = Vec::new();
        let mut jj = Vec::new();
        let mut vv = Vec::new();
        let mut b0 = Vec::with_capacity(m);
        let mut param_entries = Vec::new();
        for (r, e) in all_rows.iter().enumerate() {
            for &(v, c) in &e.terms {
                ii.push(r);
                jj.push(v);
                vv.push(-c);
            }
            b0.push(e.constant.clamp(-INF_BOUND, INF_BOUND));
            for &(p, c) in &e.params {
                param_entries.push((r, p.0, c));
            }
        }
        let a = CscMatrix::new_from_triplets(m, n, ii, jj, vv);

        let mut q = vec![0.0; n];
        for &(v, c) in &self.linear_obj {
            q[v] += c;
        }
        let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
        for &(v, c) in &self.quad_obj {
            // clarabel minimizes 1/2 x'Px
            pi.push(v);
            pj.push(v);
            pv.push(2.0 * c);
        }
        let p = CscMatrix::new_from_triplets(n, n, pi, pj, pv);

        let tagged_rows = self
            .tagged
            .iter()
            .map(|(name, id)| (name.clone(), row_span[id.0].0))
            .collect();

        Ok(CompiledProgram {
            n,
            m,
            p,
            q,
            a,
            b0,
            param_entries,
            n_params: self.params.len(),
            cones,
            row_span,
            tagged_rows,
            objective_constant: self.obj_constant,
            settings: SolverSettings::default(),
        })
    }
}

fn add(a: &Affine, b: &Affine, sign: f64) -> Affine {
    let mut out = a.clone();
    out.terms.extend(b.terms.iter().map(|&(v, c)| (v, sign * c)));
    out.params.extend(b.params.iter().map(|&(p, c)| (p, sign * c)));
    out.constant += sign * b.constant;
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub tol_feas: f64,
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub max_iter: u32,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_gap_abs: 1e-8,
            tol_gap_rel: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolutionRecord {
    pub status: SolveStatus,
    /// Primal values; empty unless optimal.
    pub x: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    /// Duals of tagged equalities, in tag order; empty unless optimal.
    pub tagged_duals: Vec<f64>,
    /// Derivative of the optimal value with respect to each parameter.
    pub param_sensitivities: Vec<f64>,
    pub solve_time: f64,
    pub iterations: u32,
    pub diagnostics: String,
}

impl ConicSolutionRecord {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn value(&self, block: &VarBlock, i: usize) -> f64 {
        self.x[block.at(i)]
    }

    pub fn values(&self, block: &VarBlock) -> &[f64] {
        &self.x[block.start..block.start + block.len]
    }
}

/// Solver-ready program. Immutable; every call to [`CompiledProgram::solve`]
/// uses a private solver workspace, so concurrent solves do not interfere.
#[derive(Debug, Clone)]
pub struct CompiledProgram {
    n: usize,
    m: usize,
    p: CscMatrix<f64>,
    q: Vec<f64>,
    a: CscMatrix<f64>,
    b0: Vec<f64>,
    param_entries: Vec<(usize, usize, f64)>,
    n_params: usize,
    cones: Vec<SupportedConeT<f64>>,
    row_span: Vec<(usize, usize)>,
    tagged_rows: Vec<(String, usize)>,
    objective_constant: f64,
    settings: SolverSettings,
}

impl CompiledProgram {
    pub fn with_settings(mut self, settings: SolverSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn n_rows(&self) -> usize {
        self.m
    }

    pub fn n_vars(&self) -> usize {
        self.n
    }

    /// Right-hand side for the given parameter values; only entries touched
    /// by parameters differ from the compiled constants.
    pub fn rhs(&self, params: &[f64]) -> Result<Vec<f64>, ConicError> {
        if params.len() != self.n_params {
            return Err(ConicError::Parameters {
                expected: self.n_params,
                got: params.len(),
            });
        }
        let mut b = self.b0.clone();
        for &(r, p, c) in &self.param_entries {
            b[r] += c * params[p];
        }
        Ok(b)
    }

    pub fn solve(&self, params: &[f64]) -> Result<ConicSolutionRecord, ConicError> {
        let b = self.rhs(params)?;
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .tol_feas(self.settings.tol_feas)
            .tol_gap_abs(self.settings.tol_gap_abs)
            .tol_gap_rel(self.settings.tol_gap_rel)
            .max_iter(self.settings.max_iter)
            .build()
            .map_err(|e| ConicError::Setup(e.to_string()))?;
        let start = Instant::now();
        let mut solver = DefaultSolver::new(&self.p, &self.q, &self.a, &b, &self.cones, settings)
            .map_err(|e| ConicError::Setup(e.to_string()))?;
        solver.solve();
        let elapsed = start.elapsed().as_secs_f64();
        let sol = &solver.solution;

        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
            _ => SolveStatus::NumericalFailure,
        };
        let diagnostics = format!(
            "clarabel status {:?} after {} iterations (r_prim {:.2e}, r_dual {:.2e})",
            sol.status, sol.iterations, sol.r_prim, sol.r_dual
        );
        if status != SolveStatus::Optimal {
            return Ok(ConicSolutionRecord {
                status,
                x: Vec::new(),
                objective: f64::NAN,
                dual_objective: f64::NAN,
                tagged_duals: Vec::new(),
                param_sensitivities: Vec::new(),
                solve_time: elapsed,
                iterations: sol.iterations,
                diagnostics,
            });
        }
        let tagged_duals = self.tagged_rows.iter().map(|(_, r)| sol.z[*r]).collect();
        let mut sens = vec![0.0; self.n_params];
        for &(r, p, c) in &self.param_entries {
            sens[p] -= sol.z[r] * c;
        }
        Ok(ConicSolutionRecord {
            status,
            x: sol.x.clone(),
            objective: sol.obj_val + self.objective_constant,
            dual_objective: sol.obj_val_dual + self.objective_constant,
            tagged_duals,
            param_sensitivities: sens,
            solve_time: elapsed,
            iterations: sol.iterations,
            diagnostics,
        })
    }

    /// Largest violation of the constraint rows of constraint `id` at `x`;
    /// for cones, the amount by which the norm exceeds the bound.
    pub fn violation(&self, program: &ConicProgram, id: ConstraintId, x: &[f64], params: &[f64]) -> f64 {
        let c = &program.constraints()[id.0];
        match &c.kind {
            ConstraintKind::Eq(e) => e.eval(x, params).abs(),
            ConstraintKind::Geq(e) => (-e.eval(x, params)).max(0.0),
            ConstraintKind::Soc { bound, vector } => {
                let norm = vector.iter().map(|e| e.eval(x, params).powi(2)).sum::<f64>().sqrt();
                (norm - bound.eval(x, params)).max(0.0)
            }
            ConstraintKind::RotatedSoc { x: xe, y, z } => {
                let (a, b) = (xe.eval(x, params), y.eval(x, params));
                let zz = z.iter().map(|e| e.eval(x, params).powi(2)).sum::<f64>();
                (zz - 2.0 * a * b).max(0.0).max(-a).max(-b)
            }
        }
    }

    /// Largest absolute violation over all constraints at `x`.
    pub fn max_violation(&self, program: &ConicProgram, x: &[f64], params: &[f64]) -> f64 {
        (0..program.constraints().len())
            .map(|i| self.violation(program, ConstraintId(i), x, params))
            .fold(0.0, f64::max)
    }

    pub fn row_span(&self, id: ConstraintId) -> (usize, usize) {
        self.row_span[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(kind: &'static str) -> Label {
        Label::new(kind, 0, 0)
    }

    #[test]
    fn parameter_update_without_recompile() {
        let mut prog = ConicProgram::new();
        let x = prog.add_block("x", 1);
        let p = prog.add_param("p");
        prog.geq(l("lb"), Affine::var(x.at(0)).param(p, -1.0));
        prog.minimize(x.at(0), 1.0);
        let compiled = prog.compile().unwrap();
        let s3 = compiled.solve(&[3.0]).unwrap();
        assert!((s3.value(&x, 0) - 3.0).abs() < 1e-7);
        let s7 = compiled.solve(&[7.0]).unwrap();
        assert!((s7.value(&x, 0) - 7.0).abs() < 1e-7);
        assert!((s7.param_sensitivities[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rotated_cone_epigraph() {
        // min t  s.t. 2 * t * (1/2) >= x^2, x = 2
        let mut prog = ConicProgram::new();
        let v = prog.add_block("v", 2);
        let (t, x) = (v.at(0), v.at(1));
        prog.rotated_soc(l("epi"), Affine::var(t), Affine::constant(0.5), vec![Affine::var(x)]);
        prog.eq(l("fix"), Affine::var(x).plus(-2.0));
        prog.minimize(t, 1.0);
        let s = prog.compile().unwrap().solve(&[]).unwrap();
        assert!((s.value(&v, 0) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn box_lp() {
        let mut prog = ConicProgram::new();
        let x = prog.add_block("x", 2);
        for i in 0..2 {
            prog.geq(l("lo"), Affine::var(x.at(i)));
            prog.leq(l("hi"), Affine::var(x.at(i)).plus(-1.0));
        }
        prog.minimize(x.at(0), 1.0);
        prog.minimize(x.at(1), -1.0);
        let s = prog.compile().unwrap().solve(&[]).unwrap();
        assert!(s.is_optimal());
        assert!(s.value(&x, 0).abs() < 1e-7);
        assert!((s.value(&x, 1) - 1.0).abs() < 1e-7);
        assert!((s.objective + 1.0).abs() < 1e-7);
        assert!(s.tagged_duals.is_empty());
    }

    #[test]
    fn tagged_equality_dual_is_value_gradient() {
        // min x^2 s.t. x = a, a = 2: d/da = 2a = 4
        let mut prog = ConicProgram::new();
        let x = prog.add_block("x", 1);
        let a = prog.add_param("a");
        let c = prog.eq(l("link"), Affine::var(x.at(0)).param(a, -1.0));
        prog.tag("link", c);
        prog.minimize_square(x.at(0), 1.0);
        let s = prog.compile().unwrap().solve(&[2.0]).unwrap();
        assert!((s.objective - 4.0).abs() < 1e-6);
        assert!((s.tagged_duals[0] - 4.0).abs() < 1e-6, "{}", s.tagged_duals[0]);
        assert!((s.param_sensitivities[0] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_lp_is_reported() {
        let mut prog = ConicProgram::new();
        let x = prog.add_block("x", 1);
        prog.geq(l("a"), Affine::var(x.at(0)).plus(-1.0));
        prog.leq(l("b"), Affine::var(x.at(0)));
        prog.minimize(x.at(0), 1.0);
        let s = prog.compile().unwrap().solve(&[]).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
        assert!(s.x.is_empty() && s.tagged_duals.is_empty());
    }

    #[test]
    fn unbounded_lp_is_reported() {
        let mut prog = ConicProgram::new();
        let x = prog.add_block("x", 1);
        prog.leq(l("ub"), Affine::var(x.at(0)));
        prog.minimize(x.at(0), 1.0);
        let s = prog.compile().unwrap().solve(&[]).unwrap();
        assert_eq!(s.status, SolveStatus::Unbounded);
    }

    #[test]
    fn negative_quadratic_fails_audit() {
        let mut prog = ConicProgram::new();
        let x = prog.add_block("x", 1);
        prog.minimize_square(x.at(0), -1.0);
        match prog.compile().unwrap_err() {
            ConicError::Audit { constraint, reason } => {
                assert_eq!(constraint, "objective");
                assert!(reason.contains("not convex"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn tagging_an_inequality_fails_audit() {
        let mut prog = ConicProgram::new();
        let x = prog.add_block("x", 1);
        let c = prog.geq(l("lb"), Affine::var(x.at(0)));
        prog.tag("lb", c);
        assert!(matches!(prog.compile(), Err(ConicError::Audit { .. })));
    }

    #[test]
    fn wrong_parameter_count() {
        let mut prog = ConicProgram::new();
        let x = prog.add_block("x", 1);
        let p = prog.add_param("p");
        prog.geq(l("lb"), Affine::var(x.at(0)).param(p, -1.0));
        prog.minimize(x.at(0), 1.0);
        assert!(matches!(
            prog.compile().unwrap().solve(&[]),
            Err(ConicError::Parameters { expected: 1, got: 0 })
        ));
    }

    #[test]
    fn infinite_bounds_are_dropped() {
        let mut prog = ConicProgram::new();
        let x = prog.add_block("x", 1);
        prog.geq(l("lo"), Affine::var(x.at(0)).plus(-1.0));
        prog.leq(l("hi"), Affine::var(x.at(0)).plus(-f64::INFINITY));
        prog.minimize(x.at(0), 1.0);
        let s = prog.compile().unwrap().solve(&[]).unwrap();
        assert!(s.is_optimal());
        assert!((s.value(&x, 0) - 1.0).abs() < 1e-7);
    }
}
