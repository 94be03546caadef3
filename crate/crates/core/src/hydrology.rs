//! Decision-dependent monthly flows and the two objectives.
//!
//! For a decision vector `(X, E)` (crop areas, monthly environmental flows):
//!
//! ```text
//! W_m          = sum_c (Kc_cm * ET_m - R_m) * X_c        signed requirement
//! Allocation_m = max(Inflow_m - E_m, 0)
//! P_m          = max(req_m - Allocation_m, 0)            pumping
//! NB           = sum_c P_c Y_c X_c - Cw sum_m (req_m - P_m) - Cp sum_m P_m - sum_c Vcost_c X_c
//! EFD          = sum_m max(TEF_m - E_m, 0)
//! ```
//!
//! where `req_m` is `W_m` floored according to [`RequirementClamp`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{HydroYear, RequirementClamp, Scenario, YearType};
use crate::{Monthly, MONTHS, MONTH_LABELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionVector {
    /// Crop areas in ha, aligned with `Scenario::crops`.
    pub areas: Vec<f64>,
    /// Environmental flow per month, GL.
    pub env_flow: Monthly,
}

impl DecisionVector {
    pub fn new(areas: Vec<f64>, env_flow: Monthly) -> Self {
        Self { areas, env_flow }
    }

    pub fn zeros(n_crops: usize) -> Self {
        Self { areas: vec![0.0; n_crops], env_flow: [0.0; MONTHS] }
    }

    /// Every crop at its minimum area, no environmental flow.
    pub fn min_areas(s: &Scenario) -> Self {
        Self { areas: s.crops.iter().map(|c| c.min_area).collect(), env_flow: [0.0; MONTHS] }
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Largest componentwise difference relative to `max(1, |a|, |b|)`.
    pub fn max_rel_diff(&self, other: &DecisionVector) -> f64 {
        self.areas
            .iter()
            .zip(&other.areas)
            .chain(self.env_flow.iter().zip(&other.env_flow))
            .map(|(a, b)| (a - b).abs() / 1f64.max(a.abs()).max(b.abs()))
            .fold(0.0, f64::max)
    }

    fn check_dims(&self, s: &Scenario) -> Result<()> {
        if self.areas.len() != s.n_crops() {
            return Err(Error::Dimension(format!(
                "decision has {} areas, scenario has {} crops",
                self.areas.len(),
                s.n_crops()
            )));
        }
        Ok(())
    }
}

/// Monthly quantities implied by a decision vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedFlows {
    /// Signed aggregate requirement `W_m`, GL.
    pub requirement: Monthly,
    /// Requirement after the scenario's clamp rule; drives both pumping and
    /// the surface-water cost.
    pub effective_requirement: Monthly,
    pub allocation: Monthly,
    pub pumping: Monthly,
    /// Target environmental flow.
    pub tef: Monthly,
}

impl DerivedFlows {
    pub fn total_pumping(&self) -> f64 {
        self.pumping.iter().sum()
    }
}

/// Which net-benefit formula to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetBenefitMode {
    /// Original formula with signed pumping `W_m - Allocation_m`. Can book
    /// negative pumping as revenue; kept only to demonstrate that defect.
    Legacy,
    /// Pumping floored at zero, requirement clamped per scenario options.
    #[default]
    Extended,
}

/// Requirement after the clamp rule, for one month.
pub(crate) fn effective_requirement(s: &Scenario, year: &HydroYear, areas: &[f64], m: usize) -> f64 {
    match s.options.requirement_clamp {
        RequirementClamp::None => signed_requirement(s, year, areas, m),
        RequirementClamp::Monthly => signed_requirement(s, year, areas, m).max(0.0),
        RequirementClamp::PerCrop => (0..s.n_crops()).map(|c| s.unit_demand(year, c, m).max(0.0) * areas[c]).sum(),
    }
}

pub(crate) fn signed_requirement(s: &Scenario, year: &HydroYear, areas: &[f64], m: usize) -> f64 {
    (0..s.n_crops()).map(|c| s.unit_demand(year, c, m) * areas[c]).sum()
}

pub(crate) fn flows_for(s: &Scenario, year: &HydroYear, d: &DecisionVector) -> DerivedFlows {
    let mut out = DerivedFlows {
        requirement: [0.0; MONTHS],
        effective_requirement: [0.0; MONTHS],
        allocation: [0.0; MONTHS],
        pumping: [0.0; MONTHS],
        tef: year.tef(),
    };
    for m in 0..MONTHS {
        out.requirement[m] = signed_requirement(s, year, &d.areas, m);
        out.effective_requirement[m] = effective_requirement(s, year, &d.areas, m);
        out.allocation[m] = (year.inflow[m] - d.env_flow[m]).max(0.0);
        out.pumping[m] = (out.effective_requirement[m] - out.allocation[m]).max(0.0);
    }
    out
}

pub fn derive_flows(s: &Scenario, year: YearType, d: &DecisionVector) -> Result<DerivedFlows> {
    d.check_dims(s)?;
    Ok(flows_for(s, s.year(year)?, d))
}

/// Net benefit split into its four terms (Tk). `total` is revenue minus the
/// three costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetBenefitBreakdown {
    pub revenue: f64,
    pub surface_cost: f64,
    pub pumping_cost: f64,
    pub variable_cost: f64,
    pub total: f64,
}

pub fn net_benefit_breakdown(
    s: &Scenario,
    year: YearType,
    d: &DecisionVector,
    mode: NetBenefitMode,
) -> Result<NetBenefitBreakdown> {
    d.check_dims(s)?;
    let hy = s.year(year)?;
    let flows = flows_for(s, hy, d);
    let (surface, pumped): (f64, f64) = match mode {
        NetBenefitMode::Legacy => (0..MONTHS)
            .map(|m| {
                let signed_pump = flows.requirement[m] - flows.allocation[m];
                (flows.requirement[m] - signed_pump, signed_pump)
            })
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y)),
        NetBenefitMode::Extended => (0..MONTHS)
            .map(|m| (flows.effective_requirement[m] - flows.pumping[m], flows.pumping[m]))
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y)),
    };
    let revenue: f64 = s.crops.iter().zip(&d.areas).map(|(c, x)| c.price * c.crop_yield * x).sum();
    let variable_cost: f64 = s.crops.iter().zip(&d.areas).map(|(c, x)| c.var_cost * x).sum();
    let surface_cost = s.economics.cw * surface;
    let pumping_cost = s.economics.cp * pumped;
    Ok(NetBenefitBreakdown {
        revenue,
        surface_cost,
        pumping_cost,
        variable_cost,
        total: revenue - surface_cost - pumping_cost - variable_cost,
    })
}

/// Net benefit `f1` in Tk.
pub fn eval_net_benefit(s: &Scenario, year: YearType, d: &DecisionVector, mode: NetBenefitMode) -> Result<f64> {
    Ok(net_benefit_breakdown(s, year, d, mode)?.total)
}

/// Environmental flow deficiency `f2` in GL.
pub fn eval_efd(s: &Scenario, year: YearType, d: &DecisionVector) -> Result<f64> {
    d.check_dims(s)?;
    let hy = s.year(year)?;
    Ok(efd_for(hy, &d.env_flow))
}

pub(crate) fn efd_for(year: &HydroYear, env_flow: &Monthly) -> f64 {
    let tef = year.tef();
    (0..MONTHS).map(|m| (tef[m] - env_flow[m]).max(0.0)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintFamily {
    PumpingCap,
    MinimumArea,
    TotalArea,
    EnvFlowWithinInflow,
    CanalCapacity,
    Nonnegativity,
}

impl fmt::Display for ConstraintFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintFamily::PumpingCap => "pumping cap",
            ConstraintFamily::MinimumArea => "minimum area",
            ConstraintFamily::TotalArea => "total area",
            ConstraintFamily::EnvFlowWithinInflow => "env_flow <= inflow",
            ConstraintFamily::CanalCapacity => "canal capacity",
            ConstraintFamily::Nonnegativity => "nonnegativity",
        })
    }
}

/// One constraint's slack; negative means violated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slack {
    pub family: ConstraintFamily,
    /// Crop or month index where the family is indexed.
    pub index: Option<usize>,
    pub slack: f64,
    /// Magnitude the relative tolerance is measured against.
    pub scale: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub slacks: Vec<Slack>,
}

impl FeasibilityReport {
    pub fn violations(&self) -> impl Iterator<Item = &Slack> {
        self.slacks.iter().filter(|s| !s.satisfied)
    }

    pub fn violated_families(&self) -> Vec<ConstraintFamily> {
        let mut v: Vec<_> = self.violations().map(|s| s.family).collect();
        v.dedup();
        v
    }

    /// Worst violation relative to its scale (0 when feasible).
    pub fn max_relative_violation(&self) -> f64 {
        self.slacks.iter().map(|s| (-s.slack / s.scale).max(0.0)).fold(0.0, f64::max)
    }

    pub fn describe(&self) -> String {
        self.violations()
            .map(|s| match s.index {
                Some(i) => format!("{}[{}] slack {:.6e}", s.family, i, s.slack),
                None => format!("{} slack {:.6e}", s.family, s.slack),
            })
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Checks every constraint of the feasible set, each slack measured against
/// its own scale with relative tolerance `tol`.
pub fn check_feasible(s: &Scenario, year: YearType, d: &DecisionVector, tol: f64) -> Result<FeasibilityReport> {
    d.check_dims(s)?;
    let hy = s.year(year)?;
    let flows = flows_for(s, hy, d);
    let mut slacks = Vec::new();
    let mut push = |family, index, slack: f64, scale: f64| {
        let scale = scale.max(1.0);
        slacks.push(Slack { family, index, slack, scale, satisfied: slack >= -tol * scale });
    };

    push(ConstraintFamily::PumpingCap, None, s.limits.t_pump - flows.total_pumping(), s.limits.t_pump);
    for (c, crop) in s.crops.iter().enumerate() {
        push(ConstraintFamily::MinimumArea, Some(c), d.areas[c] - crop.min_area, crop.min_area);
    }
    push(ConstraintFamily::TotalArea, None, s.limits.t_area - d.total_area(), s.limits.t_area);
    for m in 0..MONTHS {
        push(ConstraintFamily::EnvFlowWithinInflow, Some(m), hy.inflow[m] - d.env_flow[m], hy.inflow[m]);
    }
    for m in 0..MONTHS {
        push(ConstraintFamily::CanalCapacity, Some(m), s.limits.canal_cap - (hy.inflow[m] - d.env_flow[m]), s.limits.canal_cap);
    }
    for (c, &x) in d.areas.iter().enumerate() {
        push(ConstraintFamily::Nonnegativity, Some(c), x, s.limits.t_area);
    }
    for m in 0..MONTHS {
        push(ConstraintFamily::Nonnegativity, Some(s.n_crops() + m), d.env_flow[m], hy.inflow[m]);
    }
    let feasible = slacks.iter().all(|x| x.satisfied);
    Ok(FeasibilityReport { feasible, slacks })
}

/// Month label for diagnostics.
pub fn month_name(m: usize) -> &'static str {
    MONTH_LABELS[m]
}
