//! Optimization problems over the feasible set and their exact linear /
//! mixed-integer lowerings.
//!
//! Five problem kinds are constructible: Model 1 (max net benefit), Model 2
//! (min EFD), and the two weighted-constraint subproblems used to trace the
//! bi-objective front. Every `max(0, .)` term is replaced by an auxiliary
//! column. Where objective pressure keeps the auxiliary on its lower envelope
//! the plain epigraph is exact; where it does not (the reverse-convex
//! constraint of subproblem 2, or `cp < cw`) a big-M indicator pins the
//! auxiliary to the exact max value.

mod lowering;
mod mps;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{Scenario, YearType};

pub use lowering::{
    lower, lower_to_lp, lower_to_milp, AuxKind, BigM, ColumnTag, LinearForm, LoweredProgram, RowSense, Sense, BIG_M_SAFETY,
};
pub(crate) use lowering::exact_aux;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    /// Maximize net benefit.
    Model1,
    /// Minimize environmental flow deficiency.
    Model2,
    /// Maximize `w1 g1` subject to `w2 g2 <= w1 g1`.
    Sub1,
    /// Minimize `w2 g2` subject to `w1 g1 <= w2 g2`.
    Sub2,
}

impl ProblemKind {
    pub fn needs_weight(self) -> bool {
        matches!(self, ProblemKind::Sub1 | ProblemKind::Sub2)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Model1 => "model1",
            ProblemKind::Model2 => "model2",
            ProblemKind::Sub1 => "sub1",
            ProblemKind::Sub2 => "sub2",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model1" | "1" => Ok(ProblemKind::Model1),
            "model2" | "2" => Ok(ProblemKind::Model2),
            "sub1" => Ok(ProblemKind::Sub1),
            "sub2" => Ok(ProblemKind::Sub2),
            other => Err(Error::Parse { location: "model".into(), message: format!("unknown problem kind {other:?}") }),
        }
    }
}

/// Scalarization weights, strictly positive and summing to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightPair {
    pub w1: f64,
    pub w2: f64,
}

impl WeightPair {
    pub fn new(w1: f64, w2: f64) -> Result<Self> {
        if !(w1.is_finite() && w2.is_finite()) || w1 <= 0.0 || w2 <= 0.0 {
            return Err(Error::Weight(format!("weights must be positive, got ({w1}, {w2})")));
        }
        if (w1 + w2 - 1.0).abs() > 1e-9 {
            return Err(Error::Weight(format!("weights must sum to 1, got {}", w1 + w2)));
        }
        let sum = w1 + w2;
        Ok(Self { w1: w1 / sum, w2: 1.0 - w1 / sum })
    }

    pub fn from_w1(w1: f64) -> Result<Self> {
        Self::new(w1, 1.0 - w1)
    }
}

/// Affine normalization `g_i = (f_i - offset_i) * scale_i` applied to both
/// objectives inside the subproblems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: [f64; 2],
    pub scale: [f64; 2],
}

impl Normalization {
    /// Pure rescaling: net benefit by 1e-8, EFD by 1e-2.
    pub const FIXED: Normalization = Normalization { offset: [0.0, 0.0], scale: [1e-8, 1e-2] };

    /// Maps the anchor box to the unit square: the min-EFD anchor goes to the
    /// origin and the max-NB anchor to `(1, 1)`. Falls back to [`Self::FIXED`]
    /// when either objective has a degenerate range.
    pub fn from_anchors(nb_min_efd: f64, efd_min: f64, nb_max: f64, efd_at_nb_max: f64) -> Self {
        let r1 = nb_max - nb_min_efd;
        let r2 = efd_at_nb_max - efd_min;
        if r1 <= 1e-9 * nb_max.abs().max(1.0) || r2 <= 1e-9 * efd_at_nb_max.abs().max(1.0) {
            return Self::FIXED;
        }
        Normalization { offset: [nb_min_efd, efd_min], scale: [1.0 / r1, 1.0 / r2] }
    }

    pub fn g1(&self, f1: f64) -> f64 {
        (f1 - self.offset[0]) * self.scale[0]
    }

    pub fn g2(&self, f2: f64) -> f64 {
        (f2 - self.offset[1]) * self.scale[1]
    }
}

impl Default for Normalization {
    fn default() -> Self {
        Self::FIXED
    }
}

/// Convexity class of a problem, which decides the lowering route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    ConcaveMaxLp,
    ConvexMinLp,
    ConvexConstrainedLp,
    ReverseConvexMilp,
}

impl Structure {
    pub fn is_milp(self) -> bool {
        self == Structure::ReverseConvexMilp
    }
}

/// Secondary objectives used to pick one point from a set of optima.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MaxNetBenefit,
    MinEfd,
    MinTotalArea,
    MinTotalPumping,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    #[serde(skip)]
    pub scenario: Arc<Scenario>,
    pub year: YearType,
    pub weight: Option<WeightPair>,
    pub normalization: Normalization,
    pub structure: Structure,
    /// Applied in order after the primary objective.
    pub tie_break: Vec<Objective>,
}

pub fn build_problem(s: &Scenario, year: YearType, kind: ProblemKind, weight: Option<WeightPair>) -> Result<ProblemSpec> {
    build_problem_shared(Arc::new(s.clone()), year, kind, weight)
}

/// As [`build_problem`] but reuses an already shared scenario.
pub fn build_problem_shared(
    s: Arc<Scenario>,
    year: YearType,
    kind: ProblemKind,
    weight: Option<WeightPair>,
) -> Result<ProblemSpec> {
    s.year(year)?;
    match (kind.needs_weight(), weight) {
        (true, None) => return Err(Error::Weight(format!("{kind} requires a weight pair"))),
        (false, Some(_)) => return Err(Error::Weight(format!("{kind} takes no weight pair"))),
        (true, Some(w)) => {
            WeightPair::new(w.w1, w.w2)?;
        }
        _ => {}
    }
    let pumping_concave = s.economics.cp >= s.economics.cw;
    let structure = match kind {
        ProblemKind::Model1 if pumping_concave => Structure::ConcaveMaxLp,
        ProblemKind::Model2 => Structure::ConvexMinLp,
        ProblemKind::Sub1 if pumping_concave => Structure::ConvexConstrainedLp,
        _ => Structure::ReverseConvexMilp,
    };
    let tie_break = match kind {
        ProblemKind::Model1 | ProblemKind::Sub1 => vec![Objective::MinEfd],
        ProblemKind::Model2 => vec![Objective::MinTotalArea, Objective::MinTotalPumping],
        ProblemKind::Sub2 => vec![Objective::MaxNetBenefit],
    };
    Ok(ProblemSpec { kind, scenario: s, year, weight, normalization: Normalization::FIXED, structure, tie_break })
}

impl ProblemSpec {
    pub fn with_normalization(mut self, n: Normalization) -> Self {
        self.normalization = n;
        self
    }

    pub fn with_tie_break(mut self, t: Vec<Objective>) -> Self {
        self.tie_break = t;
        self
    }

    pub fn sense(&self) -> Sense {
        match self.kind {
            ProblemKind::Model1 | ProblemKind::Sub1 => Sense::Maximize,
            ProblemKind::Model2 | ProblemKind::Sub2 => Sense::Minimize,
        }
    }

    pub fn weight_or_default(&self) -> WeightPair {
        self.weight.unwrap_or(WeightPair { w1: 0.5, w2: 0.5 })
    }

    /// Left side minus right side of the scalarization constraint (must be
    /// `<= 0`), in normalized units. Zero for Models 1 and 2.
    pub fn scalarization_residual(&self, f1: f64, f2: f64) -> f64 {
        let w = self.weight_or_default();
        let (g1, g2) = (w.w1 * self.normalization.g1(f1), w.w2 * self.normalization.g2(f2));
        match self.kind {
            ProblemKind::Sub1 => g2 - g1,
            ProblemKind::Sub2 => g1 - g2,
            _ => 0.0,
        }
    }

    /// Scale against which the scalarization residual is judged.
    pub fn scalarization_scale(&self, f1: f64, f2: f64) -> f64 {
        let w = self.weight_or_default();
        (w.w1 * self.normalization.g1(f1)).abs().max((w.w2 * self.normalization.g2(f2)).abs()).max(1.0)
    }
}
