//! Problem instances: crops, hydrological years, economics and system limits.
//!
//! Internally every quantity is in GL, ha or Tk. Climate series may be
//! written in the files in `1e-4 GL/ha` (the scale the source tables use),
//! `GL/ha` or `mm`; they are normalized once, when the file is read.

mod bundle;
mod file;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Monthly, MONTHS};

pub use bundle::{load_bundle, save_bundle};
pub use file::{parse_scenario_toml, save_scenario, to_toml_string};

const BUILTIN_RAJSHAHI: &str = include_str!("../data/rajshahi.toml");

/// Months (0-based) that belong to the low-flow season, November to April.
pub const LOW_FLOW_MONTHS: [usize; 6] = [10, 11, 0, 1, 2, 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub name: String,
    /// Tk per ton.
    pub price: f64,
    /// Ton per ha.
    pub crop_yield: f64,
    /// Tk per ha.
    pub var_cost: f64,
    /// Monthly crop coefficients, dimensionless.
    pub kc: Monthly,
    /// Lower bound on the cultivated area, ha.
    pub min_area: f64,
}

impl CropSpec {
    /// Revenue minus variable cost per hectare, ignoring water.
    pub fn gross_margin(&self) -> f64 {
        self.price * self.crop_yield - self.var_cost
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YearType {
    Dry,
    Avg,
    Wet,
}

impl YearType {
    pub const ALL: [YearType; 3] = [YearType::Dry, YearType::Avg, YearType::Wet];

    pub fn as_str(self) -> &'static str {
        match self {
            YearType::Dry => "dry",
            YearType::Avg => "avg",
            YearType::Wet => "wet",
        }
    }
}

impl fmt::Display for YearType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for YearType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dry" => Ok(YearType::Dry),
            "avg" | "average" => Ok(YearType::Avg),
            "wet" => Ok(YearType::Wet),
            other => Err(Error::UnknownYear(other.to_string())),
        }
    }
}

/// Climate and river series for one representative year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydroYear {
    pub label: YearType,
    /// GL per ha.
    pub rainfall: Monthly,
    /// Reference evapotranspiration, GL per ha.
    pub et0: Monthly,
    /// River inflow, GL.
    pub inflow: Monthly,
    /// Share of inflow reserved as target environmental flow.
    pub tef_fraction: Monthly,
    /// Free-text provenance of the inflow series.
    pub inflow_source: Option<String>,
}

impl HydroYear {
    /// Target environmental flow per month, GL.
    pub fn tef(&self) -> Monthly {
        std::array::from_fn(|m| self.tef_fraction[m] * self.inflow[m])
    }
}

/// Tessmann-style target fractions: `low` in November-April, `high` otherwise.
pub fn tessmann_fractions(low: f64, high: f64) -> Monthly {
    let mut f = [high; MONTHS];
    for m in LOW_FLOW_MONTHS {
        f[m] = low;
    }
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconomicParams {
    /// Surface water conveyance cost, Tk per GL.
    pub cw: f64,
    /// Groundwater pumping cost, Tk per GL.
    pub cp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemLimits {
    /// Annual pumping cap, GL.
    pub t_pump: f64,
    /// Total cultivable area, ha.
    pub t_area: f64,
    /// Canal carrying capacity, GL per month.
    pub canal_cap: f64,
}

/// How the aggregate monthly crop water requirement is floored at zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequirementClamp {
    /// Signed aggregate `sum_c (Kc*ET - R) * X_c`, used verbatim.
    None,
    /// `max(0, sum_c (Kc*ET - R) * X_c)` per month.
    #[default]
    Monthly,
    /// `sum_c max(0, Kc*ET - R) * X_c`: surplus rain on one field does not
    /// irrigate another.
    PerCrop,
}

impl RequirementClamp {
    pub const ALL: [RequirementClamp; 3] =
        [RequirementClamp::None, RequirementClamp::Monthly, RequirementClamp::PerCrop];

    pub fn as_str(self) -> &'static str {
        match self {
            RequirementClamp::None => "none",
            RequirementClamp::Monthly => "monthly",
            RequirementClamp::PerCrop => "per_crop",
        }
    }
}

impl fmt::Display for RequirementClamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RequirementClamp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => Ok(RequirementClamp::None),
            "monthly" => Ok(RequirementClamp::Monthly),
            "per_crop" | "percrop" => Ok(RequirementClamp::PerCrop),
            other => Err(Error::Parse {
                location: "options.requirement_clamp".into(),
                message: format!("unknown clamp mode {other:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelOptions {
    pub requirement_clamp: RequirementClamp,
}

/// A complete, immutable problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub crops: Vec<CropSpec>,
    pub years: BTreeMap<YearType, HydroYear>,
    pub economics: EconomicParams,
    pub limits: SystemLimits,
    pub options: ModelOptions,
}

impl Scenario {
    pub fn n_crops(&self) -> usize {
        self.crops.len()
    }

    pub fn crop(&self, name: &str) -> Option<&CropSpec> {
        self.crops.iter().find(|c| c.name == name)
    }

    pub fn crop_index(&self, name: &str) -> Option<usize> {
        self.crops.iter().position(|c| c.name == name)
    }

    pub fn year(&self, label: YearType) -> Result<&HydroYear> {
        self.years
            .get(&label)
            .ok_or_else(|| Error::UnknownYear(label.to_string()))
    }

    pub fn total_min_area(&self) -> f64 {
        self.crops.iter().map(|c| c.min_area).sum()
    }

    /// Per-hectare net water demand `Kc*ET - R` of crop `c` in month `m`, GL/ha.
    pub fn unit_demand(&self, year: &HydroYear, c: usize, m: usize) -> f64 {
        self.crops[c].kc[m] * year.et0[m] - year.rainfall[m]
    }

    pub fn with_clamp(&self, clamp: RequirementClamp) -> Scenario {
        let mut s = self.clone();
        s.options.requirement_clamp = clamp;
        s
    }
}

/// On-disk representation of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioFormat {
    /// Single sectioned text file (TOML).
    Toml,
    /// Directory of CSV files laid out like the source tables.
    CsvBundle,
}

/// Loads a scenario and checks it with [`validate`].
pub fn load_scenario(path: &Path, format: ScenarioFormat) -> Result<Scenario> {
    let scenario = match format {
        ScenarioFormat::Toml => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_scenario_toml(&text, &path.display().to_string())?
        }
        ScenarioFormat::CsvBundle => load_bundle(path)?,
    };
    let report = validate(&scenario);
    if !report.ok {
        return Err(Error::Invalid(report.error_summary()));
    }
    Ok(scenario)
}

/// Picks the format from the path: directories are CSV bundles.
pub fn load_scenario_auto(path: &Path) -> Result<Scenario> {
    if !path.exists() {
        return Err(Error::NotFound { path: path.to_path_buf() });
    }
    let format = if path.is_dir() { ScenarioFormat::CsvBundle } else { ScenarioFormat::Toml };
    load_scenario(path, format)
}

/// The Rajshahi Barind Tract dataset shipped with the crate.
///
/// Parsed from the same file that lives in `data/rajshahi.toml`, so the
/// built-in and the file can never drift apart.
pub fn builtin_rajshahi() -> Scenario {
    parse_scenario_toml(BUILTIN_RAJSHAHI, "builtin:rajshahi")
        .expect("bundled rajshahi scenario must parse")
}

/// Raw text of the bundled scenario file.
pub fn builtin_rajshahi_source() -> &'static str {
    BUILTIN_RAJSHAHI
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn error_summary(&self) -> String {
        self.errors()
            .map(|f| format!("{}: {}", f.path, f.message))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "validation: {}", if self.ok { "ok" } else { "FAILED" })?;
        for finding in &self.findings {
            let tag = match finding.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            writeln!(f, "  {tag}: {}: {}", finding.path, finding.message)?;
        }
        Ok(())
    }
}

struct Findings(Vec<Finding>);

impl Findings {
    fn error(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(Finding { severity: Severity::Error, path: path.into(), message: message.into() });
    }

    fn warn(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(Finding { severity: Severity::Warning, path: path.into(), message: message.into() });
    }

    fn nonneg(&mut self, path: String, v: f64) {
        if !v.is_finite() || v < 0.0 {
            self.error(path, format!("must be finite and >= 0, got {v}"));
        }
    }

    fn positive(&mut self, path: String, v: f64) {
        if !v.is_finite() || v <= 0.0 {
            self.error(path, format!("must be finite and > 0, got {v}"));
        }
    }
}

/// Checks every type invariant and the cross-field consistency rules.
pub fn validate(s: &Scenario) -> ValidationReport {
    let mut f = Findings(Vec::new());

    if s.crops.is_empty() {
        f.error("crops", "at least one crop is required");
    }
    let mut seen = HashSet::new();
    for (i, crop) in s.crops.iter().enumerate() {
        let p = format!("crops[{i}]");
        if !seen.insert(crop.name.as_str()) {
            f.error(format!("{p}.name"), format!("duplicate crop name {:?}", crop.name));
        }
        f.nonneg(format!("{p}.price"), crop.price);
        f.nonneg(format!("{p}.crop_yield"), crop.crop_yield);
        f.nonneg(format!("{p}.var_cost"), crop.var_cost);
        f.nonneg(format!("{p}.min_area"), crop.min_area);
        for (m, &k) in crop.kc.iter().enumerate() {
            if !(0.0..=2.0).contains(&k) {
                f.error(format!("{p}.kc[{m}]"), format!("crop coefficient {k} outside [0, 2]"));
            }
        }
        if crop.gross_margin() < 0.0 {
            f.warn(
                p.clone(),
                format!("{} has negative gross margin {:.0} Tk/ha", crop.name, crop.gross_margin()),
            );
        }
    }

    if s.years.is_empty() {
        f.error("years", "at least one hydrological year is required");
    }
    for (label, year) in &s.years {
        let p = format!("year.{label}");
        if year.label != *label {
            f.error(format!("{p}.label"), format!("label {} filed under {label}", year.label));
        }
        for m in 0..MONTHS {
            f.nonneg(format!("{p}.rainfall[{m}]"), year.rainfall[m]);
            f.nonneg(format!("{p}.et0[{m}]"), year.et0[m]);
            f.nonneg(format!("{p}.inflow[{m}]"), year.inflow[m]);
            let frac = year.tef_fraction[m];
            if !(0.0..=1.0).contains(&frac) {
                f.error(format!("{p}.tef_fraction[{m}]"), format!("fraction out of range: {frac}"));
            }
        }
        if let Some(src) = &year.inflow_source {
            if src.to_ascii_lowercase().contains("reconstructed") {
                f.warn(format!("{p}.inflow"), "inflow series is reconstructed, not measured");
            }
        }
    }

    f.nonneg("economics.cw".into(), s.economics.cw);
    f.nonneg("economics.cp".into(), s.economics.cp);
    if s.economics.cp < s.economics.cw {
        f.warn(
            "economics",
            "pumping cheaper than surface water: net benefit is no longer concave, models fall back to MILP",
        );
    }
    f.positive("limits.t_pump".into(), s.limits.t_pump);
    f.positive("limits.t_area".into(), s.limits.t_area);
    f.positive("limits.canal_cap".into(), s.limits.canal_cap);

    let total_min = s.total_min_area();
    if total_min > s.limits.t_area {
        f.error(
            "crops.min_area",
            format!("min areas exceed total area: {total_min} > {}", s.limits.t_area),
        );
    }

    let ok = !f.0.iter().any(|x| x.severity == Severity::Error);
    ValidationReport { ok, findings: f.0 }
}
