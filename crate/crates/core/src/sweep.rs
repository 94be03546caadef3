//! One-parameter sensitivity sweeps: re-solve a model for each value of a
//! scenario parameter.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydrology::derive_flows;
use crate::model::{build_problem_shared, ProblemKind};
use crate::scenario::{validate, Scenario, YearType, LOW_FLOW_MONTHS};
use crate::solver::{solve_problem, SolveStatus, SolverOptions};
use crate::MONTHS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Annual pumping cap, GL.
    TPump,
    /// Canal capacity, GL per month.
    CanalCap,
    /// TEF share of inflow in the high-flow months (May-October).
    TefFractionHigh,
    /// Multiplier on every crop's minimum area.
    MinAreaScale,
}

impl SweepParameter {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParameter::TPump => "t_pump",
            SweepParameter::CanalCap => "canal_cap",
            SweepParameter::TefFractionHigh => "tef_fraction_high",
            SweepParameter::MinAreaScale => "min_area_scale",
        }
    }

    /// Copy of `s` with the parameter set to `value`; the result must pass
    /// validation.
    pub fn apply(self, s: &Scenario, value: f64) -> Result<Scenario> {
        if !value.is_finite() {
            return Err(Error::Invalid(format!("{self} value must be finite, got {value}")));
        }
        let mut out = s.clone();
        match self {
            SweepParameter::TPump => out.limits.t_pump = value,
            SweepParameter::CanalCap => out.limits.canal_cap = value,
            SweepParameter::TefFractionHigh => {
                for year in out.years.values_mut() {
                    for m in (0..MONTHS).filter(|m| !LOW_FLOW_MONTHS.contains(m)) {
                        year.tef_fraction[m] = value;
                    }
                }
            }
            SweepParameter::MinAreaScale => {
                for c in &mut out.crops {
                    c.min_area *= value;
                }
            }
        }
        let report = validate(&out);
        if !report.ok {
            return Err(Error::Invalid(format!("{self} = {value}: {}", report.error_summary())));
        }
        Ok(out)
    }
}

impl fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "t_pump" => Ok(SweepParameter::TPump),
            "canal_cap" => Ok(SweepParameter::CanalCap),
            "tef_fraction_high" => Ok(SweepParameter::TefFractionHigh),
            "min_area_scale" => Ok(SweepParameter::MinAreaScale),
            other => Err(Error::Parse { location: "sweep parameter".into(), message: format!("unknown parameter {other:?}") }),
        }
    }
}

/// One re-solve. Objective fields are absent unless the solve is optimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: SweepParameter,
    pub value: f64,
    pub status: SolveStatus,
    pub nb: Option<f64>,
    pub efd: Option<f64>,
    pub total_pumping: Option<f64>,
}

/// Solves `kind` (Model 1 or 2) once per value, in parallel, rows in input
/// order.
pub fn run_sweep(
    s: &Scenario,
    year: YearType,
    kind: ProblemKind,
    parameter: SweepParameter,
    values: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<SweepRow>> {
    if kind.needs_weight() {
        return Err(Error::Invalid(format!("sweeps run model1 or model2, not {kind}")));
    }
    let scenarios: Vec<Arc<Scenario>> =
        values.iter().map(|&v| parameter.apply(s, v).map(Arc::new)).collect::<Result<_>>()?;
    scenarios
        .par_iter()
        .zip(values.par_iter())
        .map(|(sc, &value)| {
            let p = build_problem_shared(sc.clone(), year, kind, None)?;
            let r = solve_problem(&p, opts)?;
            let ok = r.status == SolveStatus::Optimal;
            let pumping = match (&r.decision, ok) {
                (Some(d), true) => Some(derive_flows(sc, year, d)?.total_pumping()),
                _ => None,
            };
            Ok(SweepRow {
                parameter,
                value,
                status: r.status,
                nb: r.nb.filter(|_| ok),
                efd: r.efd.filter(|_| ok),
                total_pumping: pumping,
            })
        })
        .collect()
}

/// Long-format CSV: parameter, value, status, nb, efd, total pumping.
pub fn sweep_to_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Invalid(format!("csv export: {e}"));
    w.write_record(["parameter", "value", "status", "nb", "efd", "total_pumping"]).map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.parameter.as_str().to_string(),
            r.value.to_string(),
            r.status.as_str().to_string(),
            opt(r.nb),
            opt(r.efd),
            opt(r.total_pumping),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv export: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// True when the optimal objective never drops as the swept value rises.
/// Rows that are not optimal count as minus infinity, so a later infeasible
/// row breaks the order but an earlier one does not.
pub fn nondecreasing(rows: &[SweepRow], pick: impl Fn(&SweepRow) -> Option<f64>, rel_tol: f64) -> bool {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.value.total_cmp(&b.value));
    sorted.windows(2).all(|w| {
        let a = pick(w[0]).unwrap_or(f64::NEG_INFINITY);
        let b = pick(w[1]).unwrap_or(f64::NEG_INFINITY);
        b >= a - rel_tol * a.abs().max(1.0) || a == f64::NEG_INFINITY
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin_rajshahi;

    #[test]
    fn parameters_parse_and_apply() {
        let s = builtin_rajshahi();
        assert_eq!("canal-cap".parse::<SweepParameter>().unwrap(), SweepParameter::CanalCap);
        assert!("nope".parse::<SweepParameter>().is_err());
        let t = SweepParameter::TefFractionHigh.apply(&s, 0.6).unwrap();
        let y = t.year(YearType::Dry).unwrap();
        assert_eq!(y.tef_fraction[5], 0.6);
        assert_eq!(y.tef_fraction[0], s.year(YearType::Dry).unwrap().tef_fraction[0]);
        assert!(SweepParameter::TefFractionHigh.apply(&s, 1.3).is_err());
        assert!(SweepParameter::MinAreaScale.apply(&s, 2.0).is_err(), "min areas would exceed total area");
    }

    #[test]
    fn pump_cap_sweep_is_monotone() {
        let s = builtin_rajshahi();
        let rows =
            run_sweep(&s, YearType::Dry, ProblemKind::Model1, SweepParameter::TPump, &[100.0, 300.0, 500.0], &SolverOptions::default())
                .unwrap();
        assert_eq!(rows.len(), 3);
        assert!(nondecreasing(&rows, |r| r.nb, 1e-9));
        let csv = sweep_to_csv(&rows).unwrap();
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn nondecreasing_treats_failures_as_minus_infinity() {
        let row = |value: f64, nb: Option<f64>| SweepRow {
            parameter: SweepParameter::TPump,
            value,
            status: if nb.is_some() { SolveStatus::Optimal } else { SolveStatus::Infeasible },
            nb,
            efd: None,
            total_pumping: None,
        };
        assert!(nondecreasing(&[row(1.0, None), row(2.0, Some(3.0))], |r| r.nb, 0.0));
        assert!(!nondecreasing(&[row(1.0, Some(3.0)), row(2.0, None)], |r| r.nb, 0.0));
        assert!(!nondecreasing(&[row(1.0, Some(3.0)), row(2.0, Some(2.0))], |r| r.nb, 0.0));
    }
}
