//! Exact and approximate solvers plus solution certification.
//!
//! * [`solve_lp`]: bounded-variable revised simplex on a lowered program.
//! * [`solve_milp`]: best-first branch-and-bound over the big-M indicators.
//! * [`solve_smoothed_multistart`]: projected gradient on a softplus
//!   smoothing of the original nonsmooth problem, from seeded random starts.
//! * [`solve_problem`]: the exact route for a [`ProblemSpec`], including the
//!   lexicographic tie-break stages and certification.

mod bnb;
mod certify;
mod simplex;
mod smooth;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydrology::{eval_efd, eval_net_benefit, DecisionVector, NetBenefitMode};
use crate::model::{lower, ColumnTag, LinearForm, LoweredProgram, ProblemKind, ProblemSpec, RowSense, Sense, WeightPair};
use crate::scenario::YearType;

pub use certify::{certify, Certificate};
pub use smooth::{smoothed_objective, solve_smoothed_multistart, softplus, MultistartConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    /// Best point found by a local method; no optimality claim.
    LocalOnly,
    /// The solver claimed optimality but the independent audit failed.
    Uncertified,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::IterationLimit => "iteration-limit",
            SolveStatus::LocalOnly => "local-only",
            SolveStatus::Uncertified => "uncertified",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverId {
    Simplex,
    BranchBound,
    SmoothedMultistart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Reduced-cost tolerance on the unit-scaled cost vector.
    pub opt_tol: f64,
    /// Primal tolerance inside the scaled simplex.
    pub feas_tol: f64,
    pub max_iter: usize,
    /// Relative MIP gap.
    pub mip_gap: f64,
    pub node_limit: usize,
    /// Record one key=value line per iteration / node.
    pub trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { opt_tol: 1e-8, feas_tol: 1e-9, max_iter: 50_000, mip_gap: 1e-6, node_limit: 200_000, trace: false }
    }
}

/// Outcome of one solve, shared by every solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub solver: SolverId,
    pub kind: Option<ProblemKind>,
    pub year: Option<YearType>,
    pub weight: Option<WeightPair>,
    /// Primary objective in natural units: net benefit (Tk) for Model 1 and
    /// subproblem 1, EFD (GL) for Model 2 and subproblem 2. For a bare
    /// program solve, the program objective.
    pub objective: Option<f64>,
    /// Value of the program's own (possibly normalized) first objective.
    pub program_objective: Option<f64>,
    pub nb: Option<f64>,
    pub efd: Option<f64>,
    pub decision: Option<DecisionVector>,
    pub auxiliaries: Vec<(ColumnTag, f64)>,
    /// Full column vector of the lowered program.
    pub columns: Vec<f64>,
    pub duals: Vec<f64>,
    /// `d objective / d x_j` per column, simplex solves only.
    pub reduced_costs: Vec<f64>,
    pub iterations: usize,
    pub nodes: usize,
    /// Best proven bound for branch-and-bound, in the program's sense.
    pub bound: Option<f64>,
    pub gap: Option<f64>,
    #[serde(with = "duration_secs")]
    pub wall_time: Duration,
    pub certificate: Option<Certificate>,
    pub infeasible_rows: Vec<String>,
    pub ray: Option<Vec<f64>>,
    pub message: Option<String>,
    #[serde(skip)]
    pub trace: Vec<String>,
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(v.max(0.0)))
    }
}

impl SolveReport {
    fn empty(status: SolveStatus, solver: SolverId) -> Self {
        Self {
            status,
            solver,
            kind: None,
            year: None,
            weight: None,
            objective: None,
            program_objective: None,
            nb: None,
            efd: None,
            decision: None,
            auxiliaries: Vec::new(),
            columns: Vec::new(),
            duals: Vec::new(),
            reduced_costs: Vec::new(),
            iterations: 0,
            nodes: 0,
            bound: None,
            gap: None,
            wall_time: Duration::ZERO,
            certificate: None,
            infeasible_rows: Vec::new(),
            ray: None,
            message: None,
            trace: Vec::new(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Copy with wall time zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> SolveReport {
        SolveReport { wall_time: Duration::ZERO, trace: Vec::new(), ..self.clone() }
    }

    pub fn aux(&self, tag: ColumnTag) -> Option<f64> {
        self.auxiliaries.iter().find(|(t, _)| *t == tag).map(|(_, v)| *v)
    }

    fn fill_columns(&mut self, lp: &LoweredProgram, x: &[f64]) {
        let n_crops = lp.count_tag(|t| matches!(t, ColumnTag::Area(_)));
        self.decision = Some(lp.decision(x, n_crops));
        self.auxiliaries = lp
            .columns
            .iter()
            .zip(x)
            .filter(|(t, _)| matches!(t, ColumnTag::Aux(..)))
            .map(|(t, v)| (*t, *v))
            .collect();
        self.columns = x.to_vec();
    }
}

fn lp_status(s: simplex::LpStatus) -> SolveStatus {
    match s {
        simplex::LpStatus::Optimal => SolveStatus::Optimal,
        simplex::LpStatus::Infeasible => SolveStatus::Infeasible,
        simplex::LpStatus::Unbounded => SolveStatus::Unbounded,
        simplex::LpStatus::IterationLimit => SolveStatus::IterationLimit,
    }
}

fn report_from_lp(lp: &LoweredProgram, r: &simplex::LpResult, started: Instant) -> SolveReport {
    let mut rep = SolveReport::empty(lp_status(r.status), SolverId::Simplex);
    rep.iterations = r.iterations;
    rep.trace = r.trace.clone();
    rep.infeasible_rows = r.infeasible_rows.iter().map(|&i| lp.row_names[i].clone()).collect();
    rep.ray = r.ray.clone();
    if r.status == simplex::LpStatus::Optimal {
        rep.objective = Some(r.objective);
        rep.program_objective = Some(r.objective);
        rep.duals = r.duals.clone();
        rep.reduced_costs = r.reduced_costs.clone();
        rep.fill_columns(lp, &r.x);
    }
    rep.wall_time = started.elapsed();
    rep
}

/// Solves a pure LP. Duals are reported per row as `d objective / d rhs`.
pub fn solve_lp(lp: &LoweredProgram, opts: &SolverOptions) -> Result<SolveReport> {
    if lp.is_milp() {
        return Err(Error::Precondition("program has integer columns, use solve_milp".into()));
    }
    let started = Instant::now();
    let r = simplex::solve(lp, opts);
    Ok(report_from_lp(lp, &r, started))
}

/// Solves a MILP by best-first branch-and-bound.
pub fn solve_milp(lp: &LoweredProgram, opts: &SolverOptions) -> Result<SolveReport> {
    if !lp.is_milp() {
        return Err(Error::Precondition("program has no integer columns, use solve_lp".into()));
    }
    let started = Instant::now();
    let r = bnb::branch_and_bound(lp, &lp.lower, &lp.upper, opts);
    Ok(report_from_milp(lp, &r, started))
}

fn report_from_milp(lp: &LoweredProgram, r: &bnb::MilpResult, started: Instant) -> SolveReport {
    let mut rep = SolveReport::empty(r.status, SolverId::BranchBound);
    rep.iterations = r.iterations;
    rep.nodes = r.nodes;
    rep.trace = r.trace.clone();
    rep.bound = r.bound;
    rep.gap = r.gap;
    if let Some(x) = &r.x {
        rep.objective = Some(lp.objective.eval(x));
        rep.program_objective = rep.objective;
        rep.fill_columns(lp, x);
    }
    rep.wall_time = started.elapsed();
    rep
}

/// The lowered program `solve_problem` works on: deficiency columns are
/// added whenever the primary objective or a tie-break reads EFD, and
/// indicators whenever the structure is reverse-convex.
pub fn program_for(p: &ProblemSpec) -> Result<LoweredProgram> {
    let with_def = p.kind != ProblemKind::Model1 || p.tie_break.contains(&crate::model::Objective::MinEfd);
    lower(p, with_def, p.structure.is_milp())
}

struct StageOutcome {
    status: SolveStatus,
    x: Option<Vec<f64>>,
    objective: Option<f64>,
    iterations: usize,
    nodes: usize,
    bound: Option<f64>,
    gap: Option<f64>,
    duals: Vec<f64>,
    pinned_cols: Vec<bool>,
    pinned_rows: Vec<bool>,
    infeasible_rows: Vec<usize>,
    trace: Vec<String>,
}

fn run_stage(prog: &LoweredProgram, lower: &[f64], upper: &[f64], opts: &SolverOptions) -> StageOutcome {
    if prog.is_milp() {
        let r = bnb::branch_and_bound(prog, lower, upper, opts);
        StageOutcome {
            status: r.status,
            objective: r.x.as_ref().map(|x| prog.objective.eval(x)),
            x: r.x,
            iterations: r.iterations,
            nodes: r.nodes,
            bound: r.bound,
            gap: r.gap,
            duals: Vec::new(),
            pinned_cols: Vec::new(),
            pinned_rows: Vec::new(),
            infeasible_rows: Vec::new(),
            trace: r.trace,
        }
    } else {
        let r = simplex::solve_with_bounds(prog, lower, upper, opts);
        let ok = r.status == simplex::LpStatus::Optimal;
        StageOutcome {
            status: lp_status(r.status),
            objective: ok.then_some(r.objective),
            x: ok.then_some(r.x),
            iterations: r.iterations,
            nodes: 0,
            bound: None,
            gap: None,
            duals: r.duals,
            pinned_cols: r.pinned_cols,
            pinned_rows: r.pinned_rows,
            infeasible_rows: r.infeasible_rows,
            trace: r.trace,
        }
    }
}

/// Exact solve of a problem: primary objective, then each tie-break
/// objective over the optimal set of the previous stages, then auxiliary
/// normalization and certification.
pub fn solve_problem(p: &ProblemSpec, opts: &SolverOptions) -> Result<SolveReport> {
    let started = Instant::now();
    let mut prog = program_for(p)?;
    let solver = if prog.is_milp() { SolverId::BranchBound } else { SolverId::Simplex };
    let primary = (prog.objective.clone(), prog.sense);
    let mut stages = vec![primary.clone()];
    for o in &p.tie_break {
        stages.push(prog.objective_form(*o)?);
    }

    let mut lower_b = prog.lower.clone();
    let mut upper_b = prog.upper.clone();
    let mut best: Option<StageOutcome> = None;
    let mut iterations = 0;
    let mut nodes = 0;
    let mut trace = Vec::new();
    let mut message = None;
    for (k, (form, sense)) in stages.iter().enumerate() {
        prog.set_objective(form.clone(), *sense);
        let out = run_stage(&prog, &lower_b, &upper_b, opts);
        iterations += out.iterations;
        nodes += out.nodes;
        if opts.trace {
            trace.push(format!("stage={k} status={} iterations={} nodes={}", out.status, out.iterations, out.nodes));
            trace.extend(out.trace.iter().cloned());
        }
        if out.x.is_none() || !(out.status == SolveStatus::Optimal || k == 0) {
            if k == 0 {
                let mut rep = SolveReport::empty(out.status, solver);
                rep.kind = Some(p.kind);
                rep.year = Some(p.year);
                rep.weight = p.weight;
                rep.iterations = iterations;
                rep.nodes = nodes;
                rep.bound = out.bound;
                rep.infeasible_rows = out.infeasible_rows.iter().map(|&i| prog.row_names[i].clone()).collect();
                rep.trace = trace;
                rep.message = Some(format!("{} {}", p.kind, out.status));
                rep.wall_time = started.elapsed();
                if let Some(x) = &out.x {
                    // Incumbent without a proof; report it uncertified.
                    rep.fill_columns(&prog, x);
                }
                return Ok(rep);
            }
            message = Some(format!("tie-break stage {k} ended {}, kept stage {} point", out.status, k - 1));
            break;
        }
        if k + 1 < stages.len() {
            restrict_to_optimal_set(&mut prog, &mut lower_b, &mut upper_b, &out, form, *sense, opts);
        }
        let stage_status = out.status;
        let (bound, gap) = (out.bound, out.gap);
        best = Some(out);
        if k == 0 && stage_status != SolveStatus::Optimal {
            // Iteration-limited incumbent: no tie-breaking on an unproven point.
            let b = best.as_mut().expect("stage result");
            b.bound = bound;
            b.gap = gap;
            break;
        }
    }
    let best = best.expect("primary stage produced a point");
    let raw_x = best.x.clone().expect("stage point");

    // Put every auxiliary on its exact max value and confirm nothing moved.
    let s = &*p.scenario;
    let hy = s.year(p.year)?;
    let n_crops = s.n_crops();
    let decision = prog.decision(&raw_x, n_crops);
    let x = prog.complete(s, hy, &decision);
    let raw_tightness = prog
        .columns
        .iter()
        .enumerate()
        .filter(|(_, t)| matches!(t, ColumnTag::Aux(..)))
        .map(|(j, _)| (raw_x[j] - x[j]).abs() / x[j].abs().max(1.0))
        .fold(0.0, f64::max);

    prog.set_objective(primary.0.clone(), primary.1);
    let mut rep = SolveReport::empty(best.status, solver);
    rep.kind = Some(p.kind);
    rep.year = Some(p.year);
    rep.weight = p.weight;
    rep.program_objective = Some(prog.objective.eval(&x));
    rep.iterations = iterations;
    rep.nodes = nodes;
    rep.bound = best.bound;
    rep.gap = best.gap;
    rep.duals = best.duals.clone();
    rep.fill_columns(&prog, &x);
    rep.trace = trace;
    rep.message = message;

    let nb = eval_net_benefit(s, p.year, &decision, NetBenefitMode::Extended)?;
    let efd = eval_efd(s, p.year, &decision)?;
    rep.nb = Some(nb);
    rep.efd = Some(efd);
    rep.objective = Some(match p.kind {
        ProblemKind::Model1 | ProblemKind::Sub1 => nb,
        ProblemKind::Model2 | ProblemKind::Sub2 => efd,
    });

    let raw_primary = primary.0.eval(&raw_x);
    let normalized_primary = primary.0.eval(&x);
    let drift = match primary.1 {
        Sense::Maximize => raw_primary - normalized_primary,
        Sense::Minimize => normalized_primary - raw_primary,
    };
    let mut cert = certify::certify_with_program(&rep, p, &prog)?;
    cert.raw_tightness_residual = Some(raw_tightness);
    let drift_tol = 1e-7 * raw_primary.abs().max(1.0);
    if drift > drift_tol {
        cert.fail(format!("normalizing auxiliaries lost objective {drift:.3e}"));
    }
    let lowered_violation = prog.max_violation(&x);
    if lowered_violation > 1e-6 {
        cert.fail(format!("normalized point violates lowered program by {lowered_violation:.3e}"));
    }
    if rep.status == SolveStatus::Optimal && !cert.passed {
        rep.status = SolveStatus::Uncertified;
        rep.message = Some(cert.failures.join("; "));
    }
    rep.certificate = Some(cert);
    rep.wall_time = started.elapsed();
    Ok(rep)
}

/// Narrows the feasible set to the optimal set of the stage just solved: for
/// an LP, columns and rows with nonzero reduced cost / dual are pinned; in
/// every case the stage objective is bounded by its optimum plus a small
/// tolerance.
fn restrict_to_optimal_set(
    prog: &mut LoweredProgram,
    lower: &mut [f64],
    upper: &mut [f64],
    out: &StageOutcome,
    form: &LinearForm,
    sense: Sense,
    opts: &SolverOptions,
) {
    let x = out.x.as_ref().expect("stage point");
    let value = out.objective.expect("stage objective");
    for (j, &pin) in out.pinned_cols.iter().enumerate() {
        if pin && !prog.integer.get(j).copied().unwrap_or(false) {
            let v = x[j].clamp(lower[j], upper[j]);
            lower[j] = v;
            upper[j] = v;
        }
    }
    for (i, &pin) in out.pinned_rows.iter().enumerate() {
        if pin {
            prog.row_sense[i] = RowSense::Eq;
        }
    }
    let tol = if prog.is_milp() {
        (opts.mip_gap * value.abs()).max(1e-9)
    } else {
        1e-9 * value.abs().max(1.0)
    };
    match sense {
        Sense::Maximize => prog.add_row(form, RowSense::Ge, value - tol, "stage_bound"),
        Sense::Minimize => prog.add_row(form, RowSense::Le, value + tol, "stage_bound"),
    }
}

#[cfg(test)]
mod tests;
