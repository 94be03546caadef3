//! Softplus smoothing of the nonsmooth problem, solved by projected gradient
//! from several seeded starts.
//!
//! Every `max(x, 0)` term is replaced by `mu * ln(1 + exp(x / mu))`, which
//! overestimates it by at most `mu ln 2`. The smoothing parameter is cut by
//! a constant factor between stages. The pumping cap and the scalarization
//! constraint are handled by a quadratic penalty; the box, minimum-area and
//! total-area constraints by exact projection. Results carry
//! [`SolveStatus::LocalOnly`]: this is a cross-check, not a proof.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{certify, program_for, SolveReport, SolveStatus, SolverId};
use crate::error::{Error, Result};
use crate::hydrology::{check_feasible, eval_efd, eval_net_benefit, DecisionVector, NetBenefitMode};
use crate::model::{ProblemKind, ProblemSpec};
use crate::scenario::{HydroYear, RequirementClamp, Scenario};
use crate::MONTHS;

/// `mu * ln(1 + exp(x / mu))`, evaluated without overflow.
pub fn softplus(x: f64, mu: f64) -> f64 {
    let t = x / mu;
    mu * (t.max(0.0) + (-t.abs()).exp().ln_1p())
}

fn sigmoid(x: f64, mu: f64) -> f64 {
    let t = x / mu;
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultistartConfig {
    pub n_starts: usize,
    pub seed: u64,
    pub stages: usize,
    /// First-stage smoothing parameter as a fraction of the mean monthly
    /// inflow.
    pub mu0_factor: f64,
    pub mu_decay: f64,
    pub max_iter_per_stage: usize,
    /// Extra starting points tried before the random ones.
    pub initial: Option<Vec<DecisionVector>>,
}

impl Default for MultistartConfig {
    fn default() -> Self {
        Self {
            n_starts: 20,
            seed: 1,
            stages: 3,
            mu0_factor: 1e-2,
            mu_decay: 10.0,
            max_iter_per_stage: 500,
            initial: None,
        }
    }
}

/// Smoothed objectives and their gradients at one point.
struct Smoothed {
    f1: f64,
    f2: f64,
    pump: f64,
    /// Gradients with respect to `(X, E)` in natural units.
    g1: Vec<f64>,
    g2: Vec<f64>,
    gp: Vec<f64>,
}

/// Problem data flattened for the descent loop.
struct Instance<'a> {
    s: &'a Scenario,
    hy: &'a HydroYear,
    n: usize,
    demand: Vec<[f64; MONTHS]>,
    gm: Vec<f64>,
    tef: [f64; MONTHS],
    e_lo: [f64; MONTHS],
    min_area: Vec<f64>,
    /// Scaling of areas and flows into unit-order coordinates.
    ax: f64,
    ae: f64,
    /// `J = a1 f1 + a2 f2 + a0`, minimized.
    obj: [f64; 3],
    /// Scalarization constraint `b1 f1 + b2 f2 + b0 <= 0`, if any.
    con: Option<[f64; 3]>,
}

impl<'a> Instance<'a> {
    fn new(p: &'a ProblemSpec) -> Result<Self> {
        let s = &*p.scenario;
        let hy = s.year(p.year)?;
        let n = s.n_crops();
        let demand = (0..n).map(|c| std::array::from_fn(|m| s.unit_demand(hy, c, m))).collect();
        let e_lo = std::array::from_fn(|m| (hy.inflow[m] - s.limits.canal_cap).max(0.0));
        let w = p.weight_or_default();
        let nm = p.normalization;
        let (k1, k2) = (w.w1 * nm.scale[0], w.w2 * nm.scale[1]);
        let (c1, c2) = (-k1 * nm.offset[0], -k2 * nm.offset[1]);
        let (obj, con) = match p.kind {
            ProblemKind::Model1 => ([-1.0, 0.0, 0.0], None),
            ProblemKind::Model2 => ([0.0, 1.0, 0.0], None),
            ProblemKind::Sub1 => ([-k1, 0.0, -c1], Some([-k1, k2, c2 - c1])),
            ProblemKind::Sub2 => ([0.0, k2, c2], Some([k1, -k2, c1 - c2])),
        };
        Ok(Self {
            s,
            hy,
            n,
            demand,
            gm: s.crops.iter().map(|c| c.gross_margin()).collect(),
            tef: hy.tef(),
            e_lo,
            min_area: s.crops.iter().map(|c| c.min_area).collect(),
            ax: s.limits.t_area.max(1.0),
            ae: hy.inflow.iter().cloned().fold(1.0, f64::max),
            obj,
            con,
        })
    }

    fn dim(&self) -> usize {
        self.n + MONTHS
    }

    fn to_natural(&self, v: &[f64]) -> DecisionVector {
        DecisionVector {
            areas: v[..self.n].iter().map(|x| x * self.ax).collect(),
            env_flow: std::array::from_fn(|m| v[self.n + m] * self.ae),
        }
    }

    fn to_scaled(&self, d: &DecisionVector) -> Vec<f64> {
        d.areas.iter().map(|x| x / self.ax).chain(d.env_flow.iter().map(|e| e / self.ae)).collect()
    }

    fn smoothed(&self, d: &DecisionVector, mu: f64) -> Smoothed {
        let n = self.n;
        let (cw, cp) = (self.s.economics.cw, self.s.economics.cp);
        let mut out = Smoothed {
            f1: self.gm.iter().zip(&d.areas).map(|(g, x)| g * x).sum(),
            f2: 0.0,
            pump: 0.0,
            g1: vec![0.0; self.dim()],
            g2: vec![0.0; self.dim()],
            gp: vec![0.0; self.dim()],
        };
        out.g1[..n].copy_from_slice(&self.gm);
        let mut dreq = vec![0.0; n];
        for m in 0..MONTHS {
            let w: f64 = (0..n).map(|c| self.demand[c][m] * d.areas[c]).sum();
            let req = match self.s.options.requirement_clamp {
                RequirementClamp::None => {
                    (0..n).for_each(|c| dreq[c] = self.demand[c][m]);
                    w
                }
                RequirementClamp::Monthly => {
                    let sl = sigmoid(w, mu);
                    (0..n).for_each(|c| dreq[c] = sl * self.demand[c][m]);
                    softplus(w, mu)
                }
                RequirementClamp::PerCrop => {
                    (0..n).for_each(|c| dreq[c] = self.demand[c][m].max(0.0));
                    (0..n).map(|c| dreq[c] * d.areas[c]).sum()
                }
            };
            let e = d.env_flow[m];
            let pm = req - self.hy.inflow[m] + e;
            let pump = softplus(pm, mu);
            let sp = sigmoid(pm, mu);
            out.f1 -= cw * req + (cp - cw) * pump;
            out.pump += pump;
            for c in 0..n {
                out.g1[c] -= (cw + (cp - cw) * sp) * dreq[c];
                out.gp[c] += sp * dreq[c];
            }
            out.g1[n + m] -= (cp - cw) * sp;
            out.gp[n + m] += sp;
            let dm = self.tef[m] - e;
            out.f2 += softplus(dm, mu);
            out.g2[n + m] -= sigmoid(dm, mu);
        }
        out
    }

    /// Euclidean projection of scaled coordinates onto the box, minimum
    /// areas and total area.
    fn project(&self, v: &mut [f64]) {
        let n = self.n;
        let lo: Vec<f64> = self.min_area.iter().map(|a| a / self.ax).collect();
        let cap = self.s.limits.t_area / self.ax;
        for c in 0..n {
            v[c] = v[c].max(lo[c]);
        }
        let total: f64 = v[..n].iter().sum();
        if total > cap {
            // Find tau with sum max(v - tau, lo) = cap; the sum is piecewise
            // linear and decreasing in tau with breakpoints at v - lo.
            let mut bp: Vec<f64> = (0..n).map(|c| v[c] - lo[c]).collect();
            bp.sort_by(|a, b| a.total_cmp(b));
            let sum_at = |tau: f64| -> f64 { (0..n).map(|c| (v[c] - tau).max(lo[c])).sum() };
            let mut left = 0.0;
            let mut tau = 0.0;
            for &b in &bp {
                if b <= left {
                    continue;
                }
                if sum_at(b) <= cap {
                    // Linear on [left, b]: active count is constant there.
                    let f_left = sum_at(left);
                    let f_b = sum_at(b);
                    tau = left + (f_left - cap) * (b - left) / (f_left - f_b).max(f64::MIN_POSITIVE);
                    break;
                }
                left = b;
                tau = b;
            }
            for c in 0..n {
                v[c] = (v[c] - tau).max(lo[c]);
            }
        }
        for m in 0..MONTHS {
            v[n + m] = v[n + m].clamp(self.e_lo[m] / self.ae, self.hy.inflow[m] / self.ae);
        }
    }

    fn exact(&self, d: &DecisionVector) -> (f64, f64) {
        let year = self.hy.label;
        let f1 = eval_net_benefit(self.s, year, d, NetBenefitMode::Extended).expect("dimensions checked");
        let f2 = eval_efd(self.s, year, d).expect("dimensions checked");
        (f1, f2)
    }
}

struct Penalized<'a> {
    inst: &'a Instance<'a>,
    mu: f64,
    rho: f64,
    fscale: f64,
    cscale: f64,
}

impl Penalized<'_> {
    /// Value and gradient in scaled coordinates.
    fn eval(&self, v: &[f64]) -> (f64, Vec<f64>) {
        let inst = self.inst;
        let d = inst.to_natural(v);
        let sm = inst.smoothed(&d, self.mu);
        let [a1, a2, a0] = inst.obj;
        let mut f = (a1 * sm.f1 + a2 * sm.f2 + a0) / self.fscale;
        let mut g: Vec<f64> = (0..inst.dim()).map(|j| (a1 * sm.g1[j] + a2 * sm.g2[j]) / self.fscale).collect();
        let tp = inst.s.limits.t_pump.max(1e-9);
        let over = (sm.pump - tp).max(0.0) / tp;
        if over > 0.0 {
            f += self.rho * over * over;
            for j in 0..g.len() {
                g[j] += 2.0 * self.rho * over * sm.gp[j] / tp;
            }
        }
        if let Some([b1, b2, b0]) = inst.con {
            let c = (b1 * sm.f1 + b2 * sm.f2 + b0).max(0.0) / self.cscale;
            if c > 0.0 {
                f += self.rho * c * c;
                for j in 0..g.len() {
                    g[j] += 2.0 * self.rho * c * (b1 * sm.g1[j] + b2 * sm.g2[j]) / self.cscale;
                }
            }
        }
        for j in 0..inst.n {
            g[j] *= inst.ax;
        }
        for m in 0..MONTHS {
            g[inst.n + m] *= inst.ae;
        }
        (f, g)
    }

    /// Projected gradient with Armijo backtracking. Returns iterations used.
    fn descend(&self, v: &mut Vec<f64>, max_iter: usize) -> usize {
        let (mut f, mut g) = self.eval(v);
        let mut alpha: f64 = 1e-2;
        for it in 0..max_iter {
            let mut step = alpha * 2.0;
            let mut accepted = None;
            while step > 1e-18 {
                let mut trial: Vec<f64> = v.iter().zip(&g).map(|(x, gx)| x - step * gx).collect();
                self.inst.project(&mut trial);
                let dec: f64 = trial.iter().zip(v.iter()).zip(&g).map(|((t, x), gx)| gx * (t - x)).sum();
                let (ft, gt) = self.eval(&trial);
                if ft <= f + 1e-4 * dec {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                step *= 0.5;
            }
            let Some((trial, ft, gt)) = accepted else {
                return it;
            };
            let moved = trial.iter().zip(v.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            *v = trial;
            f = ft;
            g = gt;
            alpha = step;
            if moved < 1e-13 {
                return it + 1;
            }
        }
        max_iter
    }
}

/// Smoothed value of the problem's own objective (net benefit, EFD, or the
/// weighted normalized objective of a subproblem) with smoothing `mu` in GL.
pub fn smoothed_objective(p: &ProblemSpec, d: &DecisionVector, mu: f64) -> Result<f64> {
    if mu.is_nan() || mu <= 0.0 {
        return Err(Error::Invalid(format!("smoothing parameter must be positive, got {mu}")));
    }
    let inst = Instance::new(p)?;
    if d.areas.len() != inst.n {
        return Err(Error::Dimension(format!("decision has {} areas, scenario has {} crops", d.areas.len(), inst.n)));
    }
    let sm = inst.smoothed(d, mu);
    let w = p.weight_or_default();
    Ok(match p.kind {
        ProblemKind::Model1 => sm.f1,
        ProblemKind::Model2 => sm.f2,
        ProblemKind::Sub1 => w.w1 * p.normalization.g1(sm.f1),
        ProblemKind::Sub2 => w.w2 * p.normalization.g2(sm.f2),
    })
}

struct StartResult {
    decision: DecisionVector,
    feasible: bool,
    /// Exact objective, minimization sense.
    score: f64,
    iterations: usize,
}

fn run_start(p: &ProblemSpec, inst: &Instance, cfg: &MultistartConfig, start: Vec<f64>) -> StartResult {
    let water = inst.hy.inflow.iter().sum::<f64>() / MONTHS as f64;
    let mut v = start;
    inst.project(&mut v);
    let d0 = inst.to_natural(&v);
    let sm0 = inst.smoothed(&d0, cfg.mu0_factor * water.max(1.0));
    let [a1, a2, a0] = inst.obj;
    let fscale = (a1 * sm0.f1 + a2 * sm0.f2 + a0).abs().max(1e-9 * (a1.abs() + a2.abs())).max(1e-12);
    let cscale = p.scalarization_scale(sm0.f1, sm0.f2);
    let mut pen = Penalized { inst, mu: 1.0, rho: 10.0, fscale, cscale };
    let mut iterations = 0;
    let mut mu = cfg.mu0_factor * water.max(1.0);
    for _ in 0..cfg.stages.max(1) {
        pen.mu = mu;
        for _ in 0..24 {
            iterations += pen.descend(&mut v, cfg.max_iter_per_stage);
            let d = inst.to_natural(&v);
            let sm = inst.smoothed(&d, mu);
            let pump_ok = sm.pump <= inst.s.limits.t_pump * (1.0 + 1e-9);
            let con_ok = inst.con.is_none_or(|[b1, b2, b0]| b1 * sm.f1 + b2 * sm.f2 + b0 <= 1e-9 * cscale);
            if pump_ok && con_ok {
                break;
            }
            pen.rho *= 2.0;
        }
        mu /= cfg.mu_decay;
    }

    let mut d = inst.to_natural(&v);
    repair_pumping(inst, &mut d);
    let (f1, f2) = inst.exact(&d);
    let feasible = check_feasible(inst.s, inst.hy.label, &d, 1e-6).map(|r| r.feasible).unwrap_or(false)
        && p.scalarization_residual(f1, f2) <= 1e-7 * p.scalarization_scale(f1, f2);
    StartResult { decision: d, feasible, score: a1 * f1 + a2 * f2 + a0, iterations }
}

/// Pulls a point that exceeds the pumping cap toward the minimum-area,
/// maximum-allocation point until the cap holds. Pumping is convex in the
/// decision, so the feasible part of the segment is an interval.
fn repair_pumping(inst: &Instance, d: &mut DecisionVector) {
    let cap = inst.s.limits.t_pump;
    let pumping = |d: &DecisionVector| crate::hydrology::flows_for(inst.s, inst.hy, d).total_pumping();
    if pumping(d) <= cap {
        return;
    }
    let safe = DecisionVector { areas: inst.min_area.clone(), env_flow: inst.e_lo };
    if pumping(&safe) > cap {
        return;
    }
    let mix = |t: f64| DecisionVector {
        areas: safe.areas.iter().zip(&d.areas).map(|(a, b)| a + t * (b - a)).collect(),
        env_flow: std::array::from_fn(|m| safe.env_flow[m] + t * (d.env_flow[m] - safe.env_flow[m])),
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if pumping(&mix(mid)) <= cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    *d = mix(lo);
}

/// Approximate solve of `p` by smoothed projected gradient from
/// `cfg.n_starts` seeded random starts (plus any explicit ones). The best
/// point by exact objective is reported, feasible points first, ties to the
/// lowest start index.
pub fn solve_smoothed_multistart(p: &ProblemSpec, cfg: &MultistartConfig) -> Result<SolveReport> {
    let started = Instant::now();
    if !(cfg.mu0_factor > 0.0 && cfg.mu_decay >= 1.0) {
        return Err(Error::Invalid("smoothing schedule needs mu0_factor > 0 and mu_decay >= 1".into()));
    }
    let inst = Instance::new(p)?;
    let s = inst.s;
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for d in cfg.initial.iter().flatten() {
        if d.areas.len() != inst.n {
            return Err(Error::Dimension(format!("initial point has {} areas, scenario has {} crops", d.areas.len(), inst.n)));
        }
        starts.push(inst.to_scaled(d));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spread = (s.limits.t_area - s.total_min_area()).max(0.0) / inst.n.max(1) as f64;
    for _ in 0..cfg.n_starts {
        let areas = inst.min_area.iter().map(|&a| a + rng.gen::<f64>() * spread).collect();
        let env_flow = std::array::from_fn(|m| {
            let (lo, hi) = (inst.e_lo[m], inst.hy.inflow[m]);
            lo + rng.gen::<f64>() * (hi - lo)
        });
        starts.push(inst.to_scaled(&DecisionVector { areas, env_flow }));
    }
    if starts.is_empty() {
        return Err(Error::Invalid("multistart needs at least one start".into()));
    }

    let results: Vec<StartResult> = starts.into_par_iter().map(|v| run_start(p, &inst, cfg, v)).collect();
    let iterations = results.iter().map(|r| r.iterations).sum();
    let n_feasible = results.iter().filter(|r| r.feasible).count();
    let (best_idx, best) = results
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| {
            (!a.feasible, a.score).partial_cmp(&(!b.feasible, b.score)).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(j))
        })
        .expect("at least one start");

    let prog = program_for(p)?;
    let d = best.decision.clone();
    let (nb, efd) = inst.exact(&d);
    let w = p.weight_or_default();
    let mut rep = SolveReport::empty(SolveStatus::LocalOnly, SolverId::SmoothedMultistart);
    rep.kind = Some(p.kind);
    rep.year = Some(p.year);
    rep.weight = p.weight;
    rep.nb = Some(nb);
    rep.efd = Some(efd);
    rep.objective = Some(match p.kind {
        ProblemKind::Model1 | ProblemKind::Sub1 => nb,
        ProblemKind::Model2 | ProblemKind::Sub2 => efd,
    });
    rep.program_objective = Some(match p.kind {
        ProblemKind::Model1 => nb,
        ProblemKind::Model2 => efd,
        ProblemKind::Sub1 => w.w1 * p.normalization.g1(nb),
        ProblemKind::Sub2 => w.w2 * p.normalization.g2(efd),
    });
    let x = prog.complete(s, inst.hy, &d);
    rep.fill_columns(&prog, &x);
    rep.iterations = iterations;
    rep.message = Some(format!("best of {} starts: index {best_idx}, {n_feasible} feasible", results.len()));
    rep.certificate = Some(certify::certify_with_program(&rep, p, &prog)?);
    rep.wall_time = started.elapsed();
    Ok(rep)
}
