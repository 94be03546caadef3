//! Irrigation water allocation between crop production and environmental
//! flows.
//!
//! The crate covers the whole pipeline for one hydrological year at a time:
//!
//! * [`scenario`]: problem instances (crops, climate, inflow, limits), file
//!   loading and validation, plus the bundled Rajshahi dataset.
//! * [`hydrology`]: derived monthly flows and the two objectives, net benefit
//!   and environmental flow deficiency (EFD), for any decision vector.
//! * [`model`]: the single-objective models, the weighted-constraint
//!   subproblems, and their exact LP / MILP lowerings.
//! * [`solver`]: bounded revised simplex, branch-and-bound, a smoothed
//!   multi-start descent used as an independent cross-check, and solution
//!   certification.
//! * [`pareto`]: anchor solves, weight generation, paired subproblem solves
//!   and front assembly.
//! * [`sweep`]: one-parameter sensitivity re-solves.
//! * [`report`]: text tables and machine-readable exports shared by the CLI.

pub mod error;
pub mod hydrology;
pub mod model;
pub mod pareto;
pub mod report;
pub mod scenario;
pub mod solver;
pub mod sweep;

pub use error::{Error, Result};
pub use hydrology::{DecisionVector, DerivedFlows, NetBenefitMode};
pub use model::{ProblemKind, ProblemSpec, WeightPair};
pub use scenario::{Scenario, YearType};

/// Twelve calendar months, January first.
pub const MONTHS: usize = 12;

/// One value per calendar month, January at index 0.
pub type Monthly = [f64; MONTHS];

/// Three-letter month labels in calendar order.
pub const MONTH_LABELS: [&str; MONTHS] = [
    "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
];
