//! Best-first branch-and-bound over the integer columns of a lowered program.
//!
//! Node relaxations are solved from scratch by the simplex. Internally every
//! program is a minimization (`sigma * objective`); bounds and gaps are
//! converted back to the program's sense on the way out.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::simplex::{self, LpStatus};
use super::{SolveStatus, SolverOptions};
use crate::model::{LoweredProgram, Sense};

const INT_TOL: f64 = 1e-6;
/// Run the fix-and-resolve heuristic at every node up to this count, then
/// at every tenth node.
const HEURISTIC_EVERY_NODE: usize = 200;
const HEURISTIC_STRIDE: usize = 10;

#[derive(Debug, Clone)]
pub(crate) struct MilpResult {
    pub status: SolveStatus,
    pub x: Option<Vec<f64>>,
    /// Best proven bound in the program's sense.
    pub bound: Option<f64>,
    pub gap: Option<f64>,
    pub nodes: usize,
    pub iterations: usize,
    pub trace: Vec<String>,
}

struct Node {
    /// Relaxation value, minimization sense.
    bound: f64,
    id: usize,
    depth: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    x: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // BinaryHeap is a max-heap: the smallest bound, then the oldest node,
    // must compare greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then_with(|| other.id.cmp(&self.id))
    }
}

struct Search<'a> {
    lp: &'a LoweredProgram,
    opts: &'a SolverOptions,
    sigma: f64,
    iterations: usize,
    incumbent: Option<(f64, Vec<f64>)>,
    trace: Vec<String>,
}

impl Search<'_> {
    fn relax(&mut self, lower: &[f64], upper: &[f64]) -> simplex::LpResult {
        let r = simplex::solve_with_bounds(self.lp, lower, upper, self.opts);
        self.iterations += r.iterations;
        r
    }

    fn prune_tol(&self, inc: f64) -> f64 {
        (self.opts.mip_gap * inc.abs()).max(1e-9)
    }

    fn offer(&mut self, x: Vec<f64>) {
        if self.lp.max_violation(&x) > 1e-6 {
            return;
        }
        let v = self.sigma * self.lp.objective.eval(&x);
        if self.incumbent.as_ref().is_none_or(|(best, _)| v < *best) {
            if self.opts.trace {
                self.trace.push(format!("incumbent={:.12e}", self.sigma * v));
            }
            self.incumbent = Some((v, x));
        }
    }

    /// Fixes every integer column to an integral value and re-solves the
    /// continuous part. Indicators follow the sign of their expression at
    /// `x`; other integers are rounded.
    fn fix_and_resolve(&mut self, x: &[f64], lower: &[f64], upper: &[f64]) {
        let mut lo = lower.to_vec();
        let mut up = upper.to_vec();
        for (j, &is_int) in self.lp.integer.iter().enumerate() {
            if is_int {
                let v = x[j].round().clamp(lower[j], upper[j]);
                lo[j] = v;
                up[j] = v;
            }
        }
        for b in &self.lp.big_m {
            let z: f64 = if b.expr.eval(x) > 0.0 { 1.0 } else { 0.0 };
            let z = z.clamp(lower[b.indicator], upper[b.indicator]);
            lo[b.indicator] = z;
            up[b.indicator] = z;
        }
        let r = self.relax(&lo, &up);
        if r.status == LpStatus::Optimal {
            let mut xs = r.x;
            for (j, &is_int) in self.lp.integer.iter().enumerate() {
                if is_int {
                    xs[j] = lo[j];
                }
            }
            self.offer(xs);
        }
    }

    fn most_fractional(&self, x: &[f64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (j, &is_int) in self.lp.integer.iter().enumerate() {
            if !is_int {
                continue;
            }
            let frac = (x[j] - x[j].floor()).min(x[j].ceil() - x[j]);
            if frac > INT_TOL && best.is_none_or(|(_, f)| frac > f + 1e-12) {
                best = Some((j, frac));
            }
        }
        best.map(|(j, _)| j)
    }
}

pub(crate) fn branch_and_bound(lp: &LoweredProgram, lower: &[f64], upper: &[f64], opts: &SolverOptions) -> MilpResult {
    let sigma = if lp.sense == Sense::Maximize { -1.0 } else { 1.0 };
    let mut search = Search { lp, opts, sigma, iterations: 0, incumbent: None, trace: Vec::new() };
    let done = |search: Search, status: SolveStatus, open_bound: Option<f64>, nodes: usize| {
        let inc = search.incumbent.as_ref().map(|(v, _)| *v);
        let bound = match (open_bound, inc) {
            (Some(b), Some(i)) => Some(b.min(i)),
            (Some(b), None) => Some(b),
            (None, i) => i,
        };
        let gap = match (inc, bound) {
            (Some(i), Some(b)) => Some(((i - b) / i.abs().max(1.0)).max(0.0)),
            _ => None,
        };
        MilpResult {
            status,
            x: search.incumbent.map(|(_, x)| x),
            bound: bound.map(|b| sigma * b),
            gap,
            nodes,
            iterations: search.iterations,
            trace: search.trace,
        }
    };

    let root = search.relax(lower, upper);
    match root.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return done(search, SolveStatus::Infeasible, None, 1),
        LpStatus::Unbounded => return done(search, SolveStatus::Unbounded, None, 1),
        LpStatus::IterationLimit => return done(search, SolveStatus::IterationLimit, None, 1),
    }

    let mut heap = BinaryHeap::new();
    let mut next_id = 0usize;
    heap.push(Node {
        bound: sigma * root.objective,
        id: next_id,
        depth: 0,
        lower: lower.to_vec(),
        upper: upper.to_vec(),
        x: root.x,
    });
    next_id += 1;

    let mut nodes = 0usize;
    let mut incomplete = false;
    // Smallest relaxation value among nodes pruned within the gap tolerance.
    let mut pruned = f64::INFINITY;
    while let Some(node) = heap.pop() {
        if let Some((inc, _)) = &search.incumbent {
            if node.bound >= inc - search.prune_tol(*inc) {
                pruned = pruned.min(node.bound);
                continue;
            }
        }
        if nodes >= opts.node_limit {
            let open = heap.iter().map(|n| n.bound).fold(node.bound, f64::min);
            return done(search, SolveStatus::IterationLimit, Some(open), nodes);
        }
        nodes += 1;
        if opts.trace {
            let inc = search.incumbent.as_ref().map_or(f64::NAN, |(v, _)| sigma * v);
            search.trace.push(format!(
                "node={nodes} depth={} bound={:.12e} incumbent={inc:.12e} open={}",
                node.depth,
                sigma * node.bound,
                heap.len()
            ));
        }

        let Some(j) = search.most_fractional(&node.x) else {
            search.fix_and_resolve(&node.x, &node.lower, &node.upper);
            continue;
        };
        if nodes <= HEURISTIC_EVERY_NODE || nodes.is_multiple_of(HEURISTIC_STRIDE) {
            search.fix_and_resolve(&node.x, &node.lower, &node.upper);
        }

        let v = node.x[j];
        for (lo, up) in [(node.lower[j], v.floor()), (v.ceil(), node.upper[j])] {
            if lo > up {
                continue;
            }
            let mut cl = node.lower.clone();
            let mut cu = node.upper.clone();
            cl[j] = lo;
            cu[j] = up;
            let r = search.relax(&cl, &cu);
            match r.status {
                LpStatus::Optimal => {
                    let bound = sigma * r.objective;
                    if search.incumbent.as_ref().is_some_and(|(inc, _)| bound >= inc - search.prune_tol(*inc)) {
                        pruned = pruned.min(bound);
                        continue;
                    }
                    heap.push(Node { bound, id: next_id, depth: node.depth + 1, lower: cl, upper: cu, x: r.x });
                    next_id += 1;
                }
                LpStatus::Infeasible => {}
                LpStatus::Unbounded | LpStatus::IterationLimit => incomplete = true,
            }
        }
    }

    let status = match (&search.incumbent, incomplete) {
        (_, true) => SolveStatus::IterationLimit,
        (Some(_), false) => SolveStatus::Optimal,
        (None, false) => SolveStatus::Infeasible,
    };
    done(search, status, pruned.is_finite().then_some(pruned), nodes)
}
