//! Independent audit of a solve report against the hydrology evaluator.

use serde::{Deserialize, Serialize};

use super::{program_for, SolveReport};
use crate::error::{Error, Result};
use crate::hydrology::{check_feasible, eval_efd, eval_net_benefit, NetBenefitMode};
use crate::model::{exact_aux, ColumnTag, LoweredProgram, ProblemKind, ProblemSpec};

const FEAS_TOL: f64 = 1e-6;
const OBJECTIVE_TOL: f64 = 1e-8;
const TIGHTNESS_TOL: f64 = 1e-8;
const SCALARIZATION_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub passed: bool,
    pub feasible: bool,
    pub max_feasibility_violation: f64,
    /// Recomputed net benefit (Tk) and EFD (GL).
    pub nb: f64,
    pub efd: f64,
    /// Relative difference between the reported and recomputed program
    /// objective.
    pub objective_residual: f64,
    /// Largest relative gap between a reported auxiliary and its exact max
    /// value.
    pub max_tightness_residual: f64,
    /// Same, measured on the raw solver point before normalization.
    pub raw_tightness_residual: Option<f64>,
    /// Left side of the scalarization constraint in normalized units.
    pub scalarization_residual: Option<f64>,
    /// Largest `|expr| / M` over the big-M encodings.
    pub big_m_max_ratio: Option<f64>,
    pub failures: Vec<String>,
}

impl Certificate {
    pub(crate) fn fail(&mut self, msg: String) {
        self.passed = false;
        self.failures.push(msg);
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Audits `report` for problem `p`: feasibility of the decision, objective
/// values recomputed from the decision alone, exactness of every reported
/// auxiliary, the scalarization constraint, and the big-M constants.
pub fn certify(report: &SolveReport, p: &ProblemSpec) -> Result<Certificate> {
    let prog = program_for(p)?;
    certify_with_program(report, p, &prog)
}

pub(crate) fn certify_with_program(report: &SolveReport, p: &ProblemSpec, prog: &LoweredProgram) -> Result<Certificate> {
    let d = report.decision.as_ref().ok_or_else(|| Error::Precondition("report carries no decision".into()))?;
    let s = &*p.scenario;
    let hy = s.year(p.year)?;
    let feas = check_feasible(s, p.year, d, FEAS_TOL)?;
    let nb = eval_net_benefit(s, p.year, d, NetBenefitMode::Extended)?;
    let efd = eval_efd(s, p.year, d)?;

    let mut cert = Certificate {
        passed: true,
        feasible: feas.feasible,
        max_feasibility_violation: feas.max_relative_violation(),
        nb,
        efd,
        objective_residual: 0.0,
        max_tightness_residual: 0.0,
        raw_tightness_residual: None,
        scalarization_residual: None,
        big_m_max_ratio: None,
        failures: Vec::new(),
    };
    if !feas.feasible {
        cert.fail(format!("decision infeasible: {}", feas.describe()));
    }

    let w = p.weight_or_default();
    let expected = match p.kind {
        ProblemKind::Model1 => nb,
        ProblemKind::Model2 => efd,
        ProblemKind::Sub1 => w.w1 * p.normalization.g1(nb),
        ProblemKind::Sub2 => w.w2 * p.normalization.g2(efd),
    };
    match report.program_objective {
        Some(v) => {
            cert.objective_residual = rel(v, expected);
            if cert.objective_residual > OBJECTIVE_TOL {
                cert.fail(format!("program objective {v:.10e} differs from recomputed {expected:.10e}"));
            }
        }
        None => cert.fail("report carries no objective".into()),
    }
    for (label, reported, exact) in [("net benefit", report.nb, nb), ("EFD", report.efd, efd)] {
        if let Some(v) = reported {
            if rel(v, exact) > OBJECTIVE_TOL {
                cert.fail(format!("reported {label} {v:.10e} differs from recomputed {exact:.10e}"));
            }
        }
    }

    let aux = exact_aux(s, hy, d);
    for &(tag, v) in &report.auxiliaries {
        if let ColumnTag::Aux(k, m) = tag {
            let e = aux.get(k, m);
            let r = (v - e).abs() / e.abs().max(1.0);
            cert.max_tightness_residual = cert.max_tightness_residual.max(r);
        }
    }
    if cert.max_tightness_residual > TIGHTNESS_TOL {
        cert.fail(format!("auxiliary not tight (residual {:.3e})", cert.max_tightness_residual));
    }

    if p.kind.needs_weight() {
        let r = p.scalarization_residual(nb, efd);
        cert.scalarization_residual = Some(r);
        if r > SCALARIZATION_TOL * p.scalarization_scale(nb, efd) {
            cert.fail(format!("scalarization constraint violated by {r:.3e}"));
        }
    }

    if !prog.big_m.is_empty() {
        let x = prog.complete(s, hy, d);
        let ratio = prog.big_m.iter().map(|b| b.expr.eval(&x).abs() / b.m).fold(0.0, f64::max);
        cert.big_m_max_ratio = Some(ratio);
        if ratio >= 1.0 {
            cert.fail(format!("big-M constant too small (|expr| / M = {ratio:.3})"));
        }
    }
    Ok(cert)
}
