//! Bounded-variable revised simplex with a dense basis inverse.
//!
//! Every row gets a slack (`a x + s = b`, slack sign fixed by the row sense)
//! and, where the starting slack basis is infeasible, an artificial. Phase 1
//! minimizes the artificials, phase 2 the scaled objective. The basis inverse
//! is updated by elementary row operations and refactored periodically.

use nalgebra::DMatrix;

use super::SolverOptions;
use crate::model::{LoweredProgram, RowSense, Sense};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub(crate) struct LpResult {
    pub status: LpStatus,
    /// Structural column values in original units.
    pub x: Vec<f64>,
    /// Objective in the program's own sense, constant included.
    pub objective: f64,
    /// `d objective / d rhs_i`.
    pub duals: Vec<f64>,
    /// `d objective / d x_j` for structural columns.
    pub reduced_costs: Vec<f64>,
    /// Nonbasic structural columns whose reduced cost is clearly nonzero:
    /// moving them off their bound loses objective.
    pub pinned_cols: Vec<bool>,
    /// Rows whose dual is clearly nonzero: loosening them gains objective.
    pub pinned_rows: Vec<bool>,
    pub iterations: usize,
    pub infeasible_rows: Vec<usize>,
    pub ray: Option<Vec<f64>>,
    pub trace: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable resting at zero.
    Free,
}

/// Reduced costs below this (after scaling the cost vector to unit max)
/// count as zero when deciding which columns define the optimal face.
const FACE_TOL: f64 = 1e-7;
const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 64;
const DEGENERATE_STREAK: usize = 40;

struct Tableau {
    m: usize,
    n: usize,
    /// Scaled structural matrix, row-major `m x n`.
    a: Vec<f64>,
    b: Vec<f64>,
    /// Bounds, cost, value and state for `n` structurals, `m` slacks and
    /// `m` artificials.
    lb: Vec<f64>,
    ub: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    state: Vec<VarState>,
    /// Sign of each artificial column (`+-e_i`).
    art_sign: Vec<f64>,
    basis: Vec<usize>,
    binv: Vec<f64>,
    feas_tol: f64,
    opt_tol: f64,
    iterations: usize,
    max_iter: usize,
    trace: Option<Vec<String>>,
    /// Entering column and direction when unboundedness was detected.
    unbounded_col: Option<(usize, f64)>,
}

impl Tableau {
    fn total(&self) -> usize {
        self.n + 2 * self.m
    }

    /// `B^-1 a_j`.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; m];
        if j < self.n {
            for i in 0..m {
                let aij = self.a[i * self.n + j];
                if aij != 0.0 {
                    for k in 0..m {
                        out[k] += self.binv[k * m + i] * aij;
                    }
                }
            }
        } else {
            let (i, sign) = if j < self.n + m { (j - self.n, 1.0) } else { (j - self.n - m, self.art_sign[j - self.n - m]) };
            for k in 0..m {
                out[k] = sign * self.binv[k * m + i];
            }
        }
        out
    }

    fn column_dot(&self, y: &[f64], j: usize) -> f64 {
        if j < self.n {
            (0..self.m).map(|i| y[i] * self.a[i * self.n + j]).sum()
        } else if j < self.n + self.m {
            y[j - self.n]
        } else {
            let i = j - self.n - self.m;
            self.art_sign[i] * y[i]
        }
    }

    fn duals(&self) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (p, &bj) in self.basis.iter().enumerate() {
            let c = self.cost[bj];
            if c != 0.0 {
                for k in 0..m {
                    y[k] += c * self.binv[p * m + k];
                }
            }
        }
        y
    }

    /// Rebuilds `B^-1` from scratch and recomputes basic values.
    fn refactor(&mut self) -> bool {
        let m = self.m;
        let mut bmat = DMatrix::<f64>::zeros(m, m);
        for (p, &j) in self.basis.iter().enumerate() {
            if j < self.n {
                for i in 0..m {
                    bmat[(i, p)] = self.a[i * self.n + j];
                }
            } else if j < self.n + m {
                bmat[(j - self.n, p)] = 1.0;
            } else {
                let i = j - self.n - m;
                bmat[(i, p)] = self.art_sign[i];
            }
        }
        let Some(inv) = bmat.lu().try_inverse() else {
            return false;
        };
        for p in 0..m {
            for k in 0..m {
                self.binv[p * m + k] = inv[(p, k)];
            }
        }
        self.recompute_basics();
        true
    }

    fn recompute_basics(&mut self) {
        let m = self.m;
        let mut r = self.b.clone();
        for j in 0..self.total() {
            if self.state[j] == VarState::Basic || self.x[j] == 0.0 {
                continue;
            }
            let xj = self.x[j];
            if j < self.n {
                for i in 0..m {
                    r[i] -= self.a[i * self.n + j] * xj;
                }
            } else if j < self.n + m {
                r[j - self.n] -= xj;
            } else {
                let i = j - self.n - m;
                r[i] -= self.art_sign[i] * xj;
            }
        }
        for p in 0..m {
            let v: f64 = (0..m).map(|k| self.binv[p * m + k] * r[k]).sum();
            self.x[self.basis[p]] = v;
        }
    }

    fn log(&mut self, line: impl FnOnce() -> String) {
        if let Some(t) = self.trace.as_mut() {
            t.push(line());
        }
    }

    fn objective(&self) -> f64 {
        (0..self.total()).map(|j| self.cost[j] * self.x[j]).sum()
    }

    /// Runs simplex iterations on the current cost vector.
    fn run(&mut self, phase: u8) -> LpStatus {
        let mut degenerate = 0usize;
        let mut bland = false;
        let mut since_refactor = 0usize;
        loop {
            if self.iterations >= self.max_iter {
                return LpStatus::IterationLimit;
            }
            if since_refactor >= REFACTOR_EVERY {
                if !self.refactor() {
                    return LpStatus::IterationLimit;
                }
                since_refactor = 0;
            }
            let y = self.duals();

            // Pricing.
            let mut enter: Option<(usize, f64, f64)> = None; // (j, dir, |d|)
            for j in 0..self.total() {
                let st = self.state[j];
                if st == VarState::Basic || self.lb[j] == self.ub[j] {
                    continue;
                }
                let d = self.cost[j] - self.column_dot(&y, j);
                let dir = match st {
                    VarState::AtLower if d < -self.opt_tol => 1.0,
                    VarState::AtUpper if d > self.opt_tol => -1.0,
                    VarState::Free if d.abs() > self.opt_tol => -d.signum(),
                    _ => continue,
                };
                let better = match enter {
                    None => true,
                    Some((_, _, best)) => !bland && d.abs() > best,
                };
                if better {
                    enter = Some((j, dir, d.abs()));
                }
            }
            let Some((j, dir, dj)) = enter else {
                // Confirm on a fresh factorization before declaring optimal.
                if since_refactor > 0 {
                    if !self.refactor() {
                        return LpStatus::IterationLimit;
                    }
                    since_refactor = 0;
                    continue;
                }
                return LpStatus::Optimal;
            };

            let alpha = self.ftran(j);
            // Rate of change of each basic variable per unit step.
            let delta: Vec<f64> = alpha.iter().map(|a| -dir * a).collect();

            let dist = |p: usize, tableau: &Tableau| -> Option<f64> {
                let bj = tableau.basis[p];
                let xb = tableau.x[bj];
                if delta[p] < -PIVOT_TOL && tableau.lb[bj].is_finite() {
                    Some((xb - tableau.lb[bj]).max(0.0) / -delta[p])
                } else if delta[p] > PIVOT_TOL && tableau.ub[bj].is_finite() {
                    Some((tableau.ub[bj] - xb).max(0.0) / delta[p])
                } else {
                    None
                }
            };

            let mut leave: Option<usize> = None;
            let mut theta = f64::INFINITY;
            if bland {
                for p in 0..self.m {
                    if let Some(t) = dist(p, self) {
                        let tie = (t - theta).abs() <= 1e-12 * theta.max(1.0);
                        if t < theta && !tie || tie && leave.is_some_and(|q| self.basis[p] < self.basis[q]) {
                            theta = t;
                            leave = Some(p);
                        }
                    }
                }
            } else {
                // Harris two-pass: relax bounds by the feasibility tolerance,
                // then take the largest pivot among admissible rows.
                let mut theta_max = f64::INFINITY;
                for p in 0..self.m {
                    if let Some(t) = dist(p, self) {
                        theta_max = theta_max.min(t + self.feas_tol / delta[p].abs());
                    }
                }
                let mut best_pivot = 0.0;
                for p in 0..self.m {
                    if let Some(t) = dist(p, self) {
                        if t <= theta_max && delta[p].abs() > best_pivot {
                            best_pivot = delta[p].abs();
                            theta = t;
                            leave = Some(p);
                        }
                    }
                }
            }

            let range = self.ub[j] - self.lb[j];
            let flip = range.is_finite() && range <= theta;
            if flip {
                theta = range;
                leave = None;
            }
            if leave.is_none() && !flip {
                let it = self.iterations;
                self.log(|| format!("phase={phase} iter={it} status=unbounded enter={j}"));
                self.unbounded_col = Some((j, dir));
                return LpStatus::Unbounded;
            }

            for p in 0..self.m {
                let bj = self.basis[p];
                self.x[bj] += delta[p] * theta;
            }
            self.x[j] += dir * theta;
            self.iterations += 1;
            since_refactor += 1;

            if flip {
                self.state[j] = if dir > 0.0 { VarState::AtUpper } else { VarState::AtLower };
                self.x[j] = if dir > 0.0 { self.ub[j] } else { self.lb[j] };
            } else {
                let r = leave.expect("pivot row");
                let out = self.basis[r];
                if delta[r] < 0.0 {
                    self.x[out] = self.lb[out];
                    self.state[out] = VarState::AtLower;
                } else {
                    self.x[out] = self.ub[out];
                    self.state[out] = VarState::AtUpper;
                }
                self.state[j] = VarState::Basic;
                self.basis[r] = j;
                self.pivot(r, &alpha);
            }

            if theta <= 1e-12 {
                degenerate += 1;
                if degenerate > DEGENERATE_STREAK {
                    bland = true;
                }
            } else {
                degenerate = 0;
                bland = false;
            }
            if self.trace.is_some() {
                let obj = self.objective();
                let it = self.iterations;
                self.log(|| {
                    format!(
                        "phase={phase} iter={it} obj={obj:.12e} enter={j} dj={dj:.3e} theta={theta:.6e} bland={}",
                        bland as u8
                    )
                });
            }
        }
    }

    fn pivot(&mut self, r: usize, alpha: &[f64]) {
        let m = self.m;
        let piv = alpha[r];
        for k in 0..m {
            self.binv[r * m + k] /= piv;
        }
        for p in 0..m {
            if p == r || alpha[p] == 0.0 {
                continue;
            }
            let f = alpha[p];
            for k in 0..m {
                self.binv[p * m + k] -= f * self.binv[r * m + k];
            }
        }
    }
}

/// Power-of-two row and column scale factors from geometric-mean
/// equilibration of the structural matrix.
fn equilibrate(m: usize, n: usize, a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut r = vec![1.0; m];
    let mut c = vec![1.0; n];
    let pow2 = |v: f64| if v.is_finite() && v > 0.0 { 2f64.powi(v.log2().round() as i32) } else { 1.0 };
    for _ in 0..6 {
        for i in 0..m {
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for j in 0..n {
                let v = (a[i * n + j] * r[i] * c[j]).abs();
                if v > 0.0 {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            if hi > 0.0 {
                r[i] *= pow2(1.0 / (lo * hi).sqrt());
            }
        }
        for j in 0..n {
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for i in 0..m {
                let v = (a[i * n + j] * r[i] * c[j]).abs();
                if v > 0.0 {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            if hi > 0.0 {
                c[j] *= pow2(1.0 / (lo * hi).sqrt());
            }
        }
    }
    (r, c)
}

/// Solves the LP relaxation of `lp` with the column bounds overridden by
/// `lower` / `upper`.
pub(crate) fn solve_with_bounds(lp: &LoweredProgram, lower: &[f64], upper: &[f64], opts: &SolverOptions) -> LpResult {
    let m = lp.n_rows();
    let n = lp.n_cols();
    let mut dense = vec![0.0; m * n];
    for &(i, j, v) in &lp.entries {
        dense[i * n + j] += v;
    }
    let (rs, cs) = equilibrate(m, n, &dense);
    for i in 0..m {
        for j in 0..n {
            dense[i * n + j] *= rs[i] * cs[j];
        }
    }
    let sigma = if lp.sense == Sense::Maximize { -1.0 } else { 1.0 };
    let mut raw_cost = vec![0.0; n];
    for &(j, v) in &lp.objective.terms {
        raw_cost[j] += sigma * v * cs[j];
    }
    let kappa = raw_cost.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let kappa = if kappa > 0.0 { 1.0 / kappa } else { 1.0 };

    let total = n + 2 * m;
    let mut t = Tableau {
        m,
        n,
        a: dense,
        b: (0..m).map(|i| lp.rhs[i] * rs[i]).collect(),
        lb: vec![0.0; total],
        ub: vec![0.0; total],
        cost: vec![0.0; total],
        x: vec![0.0; total],
        state: vec![VarState::AtLower; total],
        art_sign: vec![1.0; m],
        basis: vec![0; m],
        binv: vec![0.0; m * m],
        feas_tol: opts.feas_tol,
        opt_tol: opts.opt_tol,
        iterations: 0,
        max_iter: opts.max_iter,
        trace: opts.trace.then(Vec::new),
        unbounded_col: None,
    };

    let mut infeasible_bounds = false;
    for j in 0..n {
        t.lb[j] = lower[j] / cs[j];
        t.ub[j] = upper[j] / cs[j];
        if t.lb[j] > t.ub[j] + opts.feas_tol * t.lb[j].abs().max(1.0) {
            infeasible_bounds = true;
        }
        let (st, v) = if t.lb[j].is_finite() {
            (VarState::AtLower, t.lb[j])
        } else if t.ub[j].is_finite() {
            (VarState::AtUpper, t.ub[j])
        } else {
            (VarState::Free, 0.0)
        };
        t.state[j] = st;
        t.x[j] = v;
    }
    for i in 0..m {
        let s = n + i;
        let (lo, hi) = match lp.row_sense[i] {
            RowSense::Le => (0.0, f64::INFINITY),
            RowSense::Ge => (f64::NEG_INFINITY, 0.0),
            RowSense::Eq => (0.0, 0.0),
        };
        t.lb[s] = lo;
        t.ub[s] = hi;
        // Artificials start fixed at zero and are opened only where needed.
        t.lb[n + m + i] = 0.0;
        t.ub[n + m + i] = 0.0;
    }
    if infeasible_bounds {
        return finish(lp, &t, LpStatus::Infeasible, &rs, &cs, sigma, kappa, Vec::new());
    }

    let mut resid = t.b.clone();
    for i in 0..m {
        for j in 0..n {
            resid[i] -= t.a[i * n + j] * t.x[j];
        }
    }
    let mut need_phase1 = false;
    for i in 0..m {
        let s = n + i;
        let art = n + m + i;
        let r = resid[i];
        if r >= t.lb[s] - opts.feas_tol && r <= t.ub[s] + opts.feas_tol {
            t.basis[i] = s;
            t.state[s] = VarState::Basic;
            t.x[s] = r;
            t.binv[i * m + i] = 1.0;
            t.state[art] = VarState::AtLower;
        } else {
            let sval = r.clamp(t.lb[s], t.ub[s]);
            t.x[s] = sval;
            t.state[s] = if sval == t.lb[s] { VarState::AtLower } else { VarState::AtUpper };
            let sign = if r - sval >= 0.0 { 1.0 } else { -1.0 };
            t.art_sign[i] = sign;
            t.basis[i] = art;
            t.state[art] = VarState::Basic;
            t.x[art] = (r - sval).abs();
            t.ub[art] = f64::INFINITY;
            t.cost[art] = 1.0;
            t.binv[i * m + i] = sign;
            need_phase1 = true;
        }
    }

    if need_phase1 {
        let status = t.run(1);
        if status != LpStatus::Optimal {
            let status = if status == LpStatus::Unbounded { LpStatus::IterationLimit } else { status };
            return finish(lp, &t, status, &rs, &cs, sigma, kappa, Vec::new());
        }
        let art_total: f64 = (0..m).map(|i| t.x[n + m + i]).sum();
        let b_scale = t.b.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        if art_total > opts.feas_tol * b_scale.max(1.0) * 10.0 {
            let rows: Vec<usize> = (0..m).filter(|&i| t.x[n + m + i] > opts.feas_tol).collect();
            t.log(|| format!("phase=1 status=infeasible residual={art_total:.6e}"));
            return finish(lp, &t, LpStatus::Infeasible, &rs, &cs, sigma, kappa, rows);
        }
        for i in 0..m {
            let art = n + m + i;
            t.cost[art] = 0.0;
            t.ub[art] = 0.0;
            if t.state[art] != VarState::Basic {
                t.x[art] = 0.0;
                t.state[art] = VarState::AtLower;
            }
        }
    }

    for j in 0..n {
        t.cost[j] = raw_cost[j] * kappa;
    }
    let status = t.run(2);
    finish(lp, &t, status, &rs, &cs, sigma, kappa, Vec::new())
}

#[allow(clippy::too_many_arguments)]
fn finish(
    lp: &LoweredProgram,
    t: &Tableau,
    status: LpStatus,
    rs: &[f64],
    cs: &[f64],
    sigma: f64,
    kappa: f64,
    infeasible_rows: Vec<usize>,
) -> LpResult {
    let (m, n) = (t.m, t.n);
    let x: Vec<f64> = (0..n).map(|j| t.x[j] * cs[j]).collect();
    let y = t.duals();
    let mut duals = vec![0.0; m];
    let mut pinned_rows = vec![false; m];
    for i in 0..m {
        duals[i] = sigma * y[i] * rs[i] / kappa;
        let s = n + i;
        // The slack's reduced cost is -y_i.
        if t.state[s] != VarState::Basic && y[i].abs() > FACE_TOL {
            pinned_rows[i] = true;
        }
    }
    let mut reduced_costs = vec![0.0; n];
    let mut pinned_cols = vec![false; n];
    for j in 0..n {
        let d = t.cost[j] - t.column_dot(&y, j);
        reduced_costs[j] = sigma * d / (cs[j] * kappa);
        if t.state[j] != VarState::Basic && (d.abs() > FACE_TOL || t.lb[j] == t.ub[j]) {
            pinned_cols[j] = true;
        }
    }
    let ray = if status == LpStatus::Unbounded {
        t.unbounded_col.map(|(j, dir)| {
            let alpha = t.ftran(j);
            let mut ray = vec![0.0; n];
            ray[j] = dir * cs[j];
            for (p, &bj) in t.basis.iter().enumerate() {
                if bj < n {
                    ray[bj] = -dir * alpha[p] * cs[bj];
                }
            }
            ray
        })
    } else {
        None
    };
    LpResult {
        status,
        objective: lp.objective.eval(&x),
        x,
        duals,
        reduced_costs,
        pinned_cols,
        pinned_rows,
        iterations: t.iterations,
        infeasible_rows,
        ray,
        trace: t.trace.clone().unwrap_or_default(),
    }
}

/// Solves `lp` as a pure LP with its own bounds.
pub(crate) fn solve(lp: &LoweredProgram, opts: &SolverOptions) -> LpResult {
    solve_with_bounds(lp, &lp.lower, &lp.upper, opts)
}
