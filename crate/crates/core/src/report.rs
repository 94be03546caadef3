//! Text tables and machine-readable exports.
//!
//! Every format is rendered from one [`SolveOutput`] (or a
//! [`ParetoFront`] / sweep rows), so the table and the JSON cannot drift.
//! Text tables follow the case-study convention: Tk as a multiple of 1e10,
//! GL with four decimals. Machine formats keep full precision.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydrology::{derive_flows, DecisionVector, DerivedFlows};
use crate::model::{ProblemKind, WeightPair};
use crate::pareto::ParetoFront;
use crate::scenario::{RequirementClamp, Scenario, YearType};
use crate::solver::{Certificate, SolveReport, SolveStatus, SolverId};
use crate::sweep::SweepRow;
use crate::MONTH_LABELS;

pub const SOLVE_SCHEMA_VERSION: u32 = 1;

/// Writes `bytes` to a sibling temp file and renames it over `path`, so a
/// reader never sees a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let file_name = path.file_name().ok_or_else(|| Error::Invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Result of one model solve, as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutput {
    pub schema_version: u32,
    pub scenario: String,
    pub year: YearType,
    pub model: ProblemKind,
    pub requirement_clamp: RequirementClamp,
    pub weight: Option<WeightPair>,
    pub status: SolveStatus,
    pub solver: SolverId,
    /// Net benefit, Tk.
    pub nb: Option<f64>,
    /// Environmental flow deficiency, GL.
    pub efd: Option<f64>,
    pub crops: Vec<String>,
    pub decision: Option<DecisionVector>,
    pub flows: Option<DerivedFlows>,
    pub iterations: usize,
    pub nodes: usize,
    pub certificate: Option<Certificate>,
    pub message: Option<String>,
}

impl SolveOutput {
    pub fn new(s: &Scenario, year: YearType, model: ProblemKind, r: &SolveReport) -> Result<Self> {
        let flows = r.decision.as_ref().map(|d| derive_flows(s, year, d)).transpose()?;
        Ok(Self {
            schema_version: SOLVE_SCHEMA_VERSION,
            scenario: s.name.clone(),
            year,
            model,
            requirement_clamp: s.options.requirement_clamp,
            weight: r.weight,
            status: r.status,
            solver: r.solver,
            nb: r.nb,
            efd: r.efd,
            crops: s.crops.iter().map(|c| c.name.clone()).collect(),
            decision: r.decision.clone(),
            flows,
            iterations: r.iterations,
            nodes: r.nodes,
            certificate: r.certificate.clone(),
            message: r.message.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(format!("json export: {e}")))
    }

    /// Long-format CSV: `quantity,label,value`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Invalid(format!("csv export: {e}"));
        w.write_record(["quantity", "label", "value"]).map_err(csv_err)?;
        let mut row = |q: &str, l: &str, v: f64| w.write_record([q, l, &v.to_string()]).map_err(csv_err);
        if let Some(v) = self.nb {
            row("nb", "", v)?;
        }
        if let Some(v) = self.efd {
            row("efd", "", v)?;
        }
        if let Some(d) = &self.decision {
            for (c, a) in self.crops.iter().zip(&d.areas) {
                row("area", c, *a)?;
            }
            for (m, e) in d.env_flow.iter().enumerate() {
                row("env_flow", MONTH_LABELS[m], *e)?;
            }
        }
        if let Some(f) = &self.flows {
            for (m, p) in f.pumping.iter().enumerate() {
                row("pumping", MONTH_LABELS[m], *p)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv export: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Whitespace-separated monthly series for plotting.
    pub fn to_plot_data(&self) -> String {
        let mut out = String::from("# month env_flow_gl pumping_gl tef_gl\n");
        if let (Some(d), Some(f)) = (&self.decision, &self.flows) {
            for m in 0..MONTH_LABELS.len() {
                let _ = writeln!(out, "{} {} {} {}", m + 1, d.env_flow[m], f.pumping[m], f.tef[m]);
            }
        }
        out
    }

    /// Allocation table: crop areas, then environmental flow and pumped
    /// water per month, then both objectives.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let title = match self.model {
            ProblemKind::Model1 => "Model 1 (max net benefit)".to_string(),
            ProblemKind::Model2 => "Model 2 (min EFD)".to_string(),
            k => format!("{k} w1={}", self.weight.map(|w| w.w1).unwrap_or(f64::NAN)),
        };
        let _ = writeln!(out, "{title}, {} year, {} (clamp {})", self.year, self.scenario, self.requirement_clamp);
        let _ = writeln!(out, "status: {} ({}, {} iterations, {} nodes)", self.status, solver_name(self.solver), self.iterations, self.nodes);
        if let Some(m) = &self.message {
            let _ = writeln!(out, "note: {m}");
        }
        let (Some(d), Some(f)) = (&self.decision, &self.flows) else {
            return out;
        };
        out.push('\n');
        let width = self.crops.iter().map(|c| c.len()).max().unwrap_or(4).max(10);
        let _ = writeln!(out, "{:<width$} {:>12}", "Crop", "X_c (ha)");
        for (c, a) in self.crops.iter().zip(&d.areas) {
            let _ = writeln!(out, "{c:<width$} {a:>12.0}");
        }
        out.push('\n');
        let _ = write!(out, "{:<18}", "Month");
        for m in MONTH_LABELS {
            let _ = write!(out, " {m:>10}");
        }
        out.push('\n');
        for (label, series) in [("Env. flow (GL)", &d.env_flow), ("Pumped water (GL)", &f.pumping)] {
            let _ = write!(out, "{label:<18}");
            for v in series.iter() {
                let _ = write!(out, " {v:>10.4}");
            }
            out.push('\n');
        }
        out.push('\n');
        if let Some(nb) = self.nb {
            let _ = writeln!(out, "f1 (net benefit) = {} Tk", tk_1e10(nb));
        }
        if let Some(efd) = self.efd {
            let _ = writeln!(out, "f2 (EFD)         = {efd:.4} GL");
        }
        if let Some(c) = &self.certificate {
            let verdict = if c.passed { "passed".to_string() } else { format!("FAILED: {}", c.failures.join("; ")) };
            let _ = writeln!(out, "certificate: {verdict}");
        }
        out
    }
}

fn solver_name(s: SolverId) -> &'static str {
    match s {
        SolverId::Simplex => "simplex",
        SolverId::BranchBound => "branch-and-bound",
        SolverId::SmoothedMultistart => "smoothed multistart",
    }
}

/// `2.4580 x 10^10`.
pub fn tk_1e10(v: f64) -> String {
    format!("{:.4} x 10^10", v / 1e10)
}

/// Net benefit and EFD per front point, as text.
pub fn front_table(f: &ParetoFront) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Pareto front, {} year, {} ({} points, seed {})", f.year, f.scenario, f.points.len(), f.seed);
    let _ = writeln!(out, "{:>4} {:>20} {:>12} {:>8} {:>10}", "#", "NB (Tk)", "EFD (GL)", "w1", "source");
    for (i, p) in f.points.iter().enumerate() {
        let w1 = p.weight.map(|w| format!("{:.4}", w.w1)).unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "{:>4} {:>20} {:>12.4} {:>8} {:>10}", i + 1, tk_1e10(p.nb), p.efd, w1, p.provenance.as_str());
    }
    for d in &f.diagnostics {
        let _ = writeln!(out, "skipped: {d}");
    }
    out
}

/// Two columns, net benefit and EFD, one point per line.
pub fn front_plot_data(f: &ParetoFront) -> String {
    let mut out = String::from("# nb_tk efd_gl\n");
    for p in &f.points {
        let _ = writeln!(out, "{} {}", p.nb, p.efd);
    }
    out
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>14} {:>16} {:>20} {:>12} {:>14}", "value", "status", "NB (Tk)", "EFD (GL)", "pumping (GL)");
    for r in rows {
        let nb = r.nb.map(tk_1e10).unwrap_or_else(|| "-".into());
        let gl = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "{:>14} {:>16} {:>20} {:>12} {:>14}", r.value, r.status.as_str(), nb, gl(r.efd), gl(r.total_pumping));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_problem;
    use crate::scenario::builtin_rajshahi;
    use crate::solver::{solve_problem, SolverOptions};

    #[test]
    fn table_layout_has_areas_flows_and_objectives() {
        let s = builtin_rajshahi();
        let p = build_problem(&s, YearType::Dry, ProblemKind::Model1, None).unwrap();
        let r = solve_problem(&p, &SolverOptions::default()).unwrap();
        let out = SolveOutput::new(&s, YearType::Dry, ProblemKind::Model1, &r).unwrap();
        let t = out.to_table();
        assert!(t.contains("Potato") && t.contains("55271"));
        assert!(t.contains("Env. flow (GL)") && t.contains("Pumped water (GL)"));
        assert!(t.contains("x 10^10 Tk"));
        let csv = out.to_csv().unwrap();
        // header, nb, efd, 9 areas, 12 flows, 12 pumping
        assert_eq!(csv.lines().count(), 1 + 2 + 9 + 24);
        let back: SolveOutput = serde_json::from_str(&out.to_json().unwrap()).unwrap();
        assert_eq!(back, out);
        assert_eq!(out.to_plot_data().lines().count(), 13);
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        write_atomic(&path, b"{}").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"{}");
        let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
        assert!(write_atomic(&dir.path().join("missing/out.json"), b"x").is_err());
    }

    #[test]
    fn tk_formatting() {
        assert_eq!(tk_1e10(2.6746e10), "2.6746 x 10^10");
    }
}
