//! Pareto front of net benefit against EFD by the weighted-constraint
//! method: two anchor solves, a grid of weight pairs, a pair of subproblem
//! solves per weight, and a dominance filter over everything found.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydrology::DecisionVector;
use crate::model::{build_problem_shared, Normalization, Objective, ProblemKind, WeightPair};
use crate::scenario::{Scenario, YearType};
use crate::solver::{solve_problem, SolveReport, SolveStatus, SolverOptions};
use crate::MONTH_LABELS;

pub const FRONT_SCHEMA_VERSION: u32 = 1;
/// Two subproblem decisions are the same point when no component differs
/// by more than this, relatively.
pub const COINCIDENCE_TOL: f64 = 1e-6;
/// Points equal in both objectives within this relative tolerance merge.
pub const MERGE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    AnchorF1,
    AnchorF2,
    Sub1,
    Sub2,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::AnchorF1 => "anchor-f1",
            Provenance::AnchorF2 => "anchor-f2",
            Provenance::Sub1 => "sub1",
            Provenance::Sub2 => "sub2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    /// Net benefit, Tk.
    pub nb: f64,
    /// Environmental flow deficiency, GL.
    pub efd: f64,
    pub decision: DecisionVector,
    /// Absent for anchors.
    pub weight: Option<WeightPair>,
    /// Position of the weight in the generated sequence.
    pub weight_index: Option<usize>,
    pub provenance: Provenance,
}

impl ParetoPoint {
    fn from_report(r: &SolveReport, provenance: Provenance, weight: Option<(usize, WeightPair)>) -> Result<Self> {
        let missing = || Error::Solver(format!("{} report carries no decision", provenance.as_str()));
        Ok(Self {
            nb: r.nb.ok_or_else(missing)?,
            efd: r.efd.ok_or_else(missing)?,
            decision: r.decision.clone().ok_or_else(missing)?,
            weight: weight.map(|w| w.1),
            weight_index: weight.map(|w| w.0),
            provenance,
        })
    }

    /// `self` is at least as good in both objectives and better in one,
    /// beyond the merge tolerance.
    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        let tn = MERGE_TOL * self.nb.abs().max(other.nb.abs()).max(1.0);
        let te = MERGE_TOL * self.efd.abs().max(other.efd.abs()).max(1.0);
        let no_worse = self.nb >= other.nb - tn && self.efd <= other.efd + te;
        let better = self.nb > other.nb + tn || self.efd < other.efd - te;
        no_worse && better
    }

    pub fn same_outcome(&self, other: &ParetoPoint) -> bool {
        let tn = MERGE_TOL * self.nb.abs().max(other.nb.abs()).max(1.0);
        let te = MERGE_TOL * self.efd.abs().max(other.efd.abs()).max(1.0);
        (self.nb - other.nb).abs() <= tn && (self.efd - other.efd).abs() <= te
    }

    fn canonical_key(&self) -> (usize, Provenance) {
        let idx = match self.provenance {
            Provenance::AnchorF1 | Provenance::AnchorF2 => 0,
            _ => 1 + self.weight_index.unwrap_or(usize::MAX - 1),
        };
        (idx, self.provenance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    pub schema_version: u32,
    pub scenario: String,
    pub year: YearType,
    pub seed: u64,
    pub crops: Vec<String>,
    pub normalization: Normalization,
    /// Sorted by net benefit ascending.
    pub points: Vec<ParetoPoint>,
    /// Weights whose subproblems produced no certified point, and why.
    pub diagnostics: Vec<String>,
}

impl ParetoFront {
    /// Pairs `(i, j)` where point `i` dominates point `j`.
    pub fn dominated_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, a) in self.points.iter().enumerate() {
            for (j, b) in self.points.iter().enumerate() {
                if i != j && a.dominates(b) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// CSV with one row per point: objectives, weight, provenance, then the
    /// decision (areas by crop name, then monthly flows).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = ["nb", "efd", "w1", "provenance"].iter().map(|s| s.to_string()).collect();
        header.extend(self.crops.iter().map(|c| format!("X_{c}")));
        header.extend(MONTH_LABELS.iter().map(|m| format!("E_{m}")));
        let csv_err = |e: csv::Error| Error::Invalid(format!("csv export: {e}"));
        w.write_record(&header).map_err(csv_err)?;
        for p in &self.points {
            let mut row = vec![
                p.nb.to_string(),
                p.efd.to_string(),
                p.weight.map(|w| w.w1.to_string()).unwrap_or_default(),
                p.provenance.as_str().to_string(),
            ];
            row.extend(p.decision.areas.iter().map(|v| v.to_string()));
            row.extend(p.decision.env_flow.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv export: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(format!("json export: {e}")))
    }
}

/// Solves Model 1 (tie-break: least EFD) and Model 2 (tie-break: most net
/// benefit) exactly. Both anchors are then nondominated.
pub fn anchors(s: &Arc<Scenario>, year: YearType, opts: &SolverOptions) -> Result<(ParetoPoint, ParetoPoint)> {
    let p1 = build_problem_shared(s.clone(), year, ProblemKind::Model1, None)?.with_tie_break(vec![Objective::MinEfd]);
    let p2 =
        build_problem_shared(s.clone(), year, ProblemKind::Model2, None)?.with_tie_break(vec![Objective::MaxNetBenefit]);
    let solve = |p| -> Result<SolveReport> {
        let r = solve_problem(p, opts)?;
        if r.status != SolveStatus::Optimal {
            return Err(Error::Solver(format!(
                "{} anchor ended {}: {}",
                p.kind,
                r.status,
                r.message.clone().unwrap_or_default()
            )));
        }
        Ok(r)
    };
    let (r1, r2) = (solve(&p1)?, solve(&p2)?);
    Ok((ParetoPoint::from_report(&r1, Provenance::AnchorF1, None)?, ParetoPoint::from_report(&r2, Provenance::AnchorF2, None)?))
}

/// `n` interior weight pairs on the grid `w1 = k / (n + 1)`, optionally
/// jittered by up to a quarter of the grid spacing.
pub fn generate_weights(n: usize, jitter_seed: Option<u64>) -> Result<Vec<WeightPair>> {
    if n < 2 {
        return Err(Error::Invalid(format!("need at least 2 weights, got {n}")));
    }
    let h = 1.0 / (n + 1) as f64;
    let mut rng = jitter_seed.map(ChaCha8Rng::seed_from_u64);
    (1..=n)
        .map(|k| {
            let mut w1 = k as f64 * h;
            if let Some(rng) = rng.as_mut() {
                w1 += (rng.gen::<f64>() * 2.0 - 1.0) * h / 4.0;
            }
            let w1 = w1.clamp(h / 4.0, 1.0 - h / 4.0);
            Ok(WeightPair { w1, w2: 1.0 - w1 })
        })
        .collect()
}

/// Candidates produced by one weight pair.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightOutcome {
    pub points: Vec<ParetoPoint>,
    pub diagnostics: Vec<String>,
}

/// Solves both subproblems for one weight and keeps what survives the
/// pairwise comparison: one point if the decisions coincide, otherwise the
/// nondominated ones. Only certified optima are kept.
pub fn solve_weight_pair(
    s: &Arc<Scenario>,
    year: YearType,
    index: usize,
    w: WeightPair,
    normalization: Normalization,
    opts: &SolverOptions,
) -> Result<WeightOutcome> {
    let mut found = Vec::new();
    let mut diagnostics = Vec::new();
    for (kind, prov) in [(ProblemKind::Sub1, Provenance::Sub1), (ProblemKind::Sub2, Provenance::Sub2)] {
        let p = build_problem_shared(s.clone(), year, kind, Some(w))?.with_normalization(normalization);
        let r = solve_problem(&p, opts)?;
        if r.status == SolveStatus::Optimal {
            found.push(ParetoPoint::from_report(&r, prov, Some((index, w)))?);
        } else {
            diagnostics.push(format!(
                "w1={} {kind}: {}{}",
                w.w1,
                r.status,
                r.message.map(|m| format!(" ({m})")).unwrap_or_default()
            ));
        }
    }
    if let [a, b] = found.as_slice() {
        if a.decision.max_rel_diff(&b.decision) <= COINCIDENCE_TOL || a.dominates(b) {
            found.truncate(1);
        } else if b.dominates(a) {
            found.remove(0);
        }
    }
    Ok(WeightOutcome { points: found, diagnostics })
}

/// Merges tolerance-equal points (keeping anchors, then the lowest weight
/// index), removes dominated ones, and sorts by net benefit.
pub fn assemble_front(
    mut candidates: Vec<ParetoPoint>,
    scenario: &Scenario,
    year: YearType,
    seed: u64,
    normalization: Normalization,
) -> ParetoFront {
    candidates.sort_by_key(|p| p.canonical_key());
    let mut kept: Vec<ParetoPoint> = Vec::new();
    for c in candidates {
        if !kept.iter().any(|k| k.same_outcome(&c)) {
            kept.push(c);
        }
    }
    let survivors: Vec<ParetoPoint> =
        kept.iter().filter(|p| !kept.iter().any(|q| q.dominates(p))).cloned().collect();
    let mut points = survivors;
    points.sort_by(|a, b| a.nb.total_cmp(&b.nb).then(a.efd.total_cmp(&b.efd)));
    ParetoFront {
        schema_version: FRONT_SCHEMA_VERSION,
        scenario: scenario.name.clone(),
        year,
        seed,
        crops: scenario.crops.iter().map(|c| c.name.clone()).collect(),
        normalization,
        points,
        diagnostics: Vec::new(),
    }
}

/// How the subproblems rescale the two objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    /// Anchor box mapped to the unit square.
    #[default]
    Anchors,
    /// Fixed scales, net benefit by 1e-8 and EFD by 1e-2.
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontConfig {
    pub n_weights: usize,
    pub seed: u64,
    pub jitter: bool,
    pub normalization: NormalizationMode,
    pub solver: SolverOptions,
}

impl Default for FrontConfig {
    fn default() -> Self {
        Self { n_weights: 20, seed: 0, jitter: false, normalization: NormalizationMode::Anchors, solver: SolverOptions::default() }
    }
}

/// Anchors, weights, subproblem pairs (in parallel) and assembly.
pub fn run_front(s: &Arc<Scenario>, year: YearType, cfg: &FrontConfig) -> Result<ParetoFront> {
    let (a1, a2) = anchors(s, year, &cfg.solver)?;
    let normalization = match cfg.normalization {
        NormalizationMode::Anchors => Normalization::from_anchors(a2.nb, a2.efd, a1.nb, a1.efd),
        NormalizationMode::Fixed => Normalization::FIXED,
    };
    let weights = generate_weights(cfg.n_weights, cfg.jitter.then_some(cfg.seed))?;
    let outcomes: Vec<Result<WeightOutcome>> = weights
        .par_iter()
        .enumerate()
        .map(|(i, &w)| solve_weight_pair(s, year, i, w, normalization, &cfg.solver))
        .collect();
    let mut candidates = vec![a1, a2];
    let mut diagnostics = Vec::new();
    for o in outcomes {
        let o = o?;
        candidates.extend(o.points);
        diagnostics.extend(o.diagnostics);
    }
    let mut front = assemble_front(candidates, s, year, cfg.seed, normalization);
    front.diagnostics = diagnostics;
    Ok(front)
}
