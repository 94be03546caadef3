//! Sectioned text (TOML) scenario files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;
use toml::Spanned;

use super::{
    tessmann_fractions, CropSpec, EconomicParams, HydroYear, ModelOptions, RequirementClamp,
    Scenario, SystemLimits, YearType,
};
use crate::error::{Error, Result};
use crate::{Monthly, MONTHS};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    meta: RawMeta,
    units: Option<RawUnits>,
    economics: EconomicParams,
    limits: SystemLimits,
    #[serde(default)]
    options: RawOptions,
    crops: Vec<RawCrop>,
    year: BTreeMap<String, RawYear>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeta {
    name: Option<String>,
    #[allow(dead_code)]
    description: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUnits {
    rainfall: Option<String>,
    et0: Option<String>,
    inflow: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptions {
    #[serde(default)]
    requirement_clamp: Option<String>,
    #[serde(default = "default_tef_low")]
    tef_low_flow: f64,
    #[serde(default = "default_tef_high")]
    tef_high_flow: f64,
}

impl Default for RawOptions {
    fn default() -> Self {
        Self { requirement_clamp: None, tef_low_flow: default_tef_low(), tef_high_flow: default_tef_high() }
    }
}

fn default_tef_low() -> f64 {
    1.0
}

fn default_tef_high() -> f64 {
    0.4
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCrop {
    name: String,
    price: f64,
    crop_yield: f64,
    var_cost: f64,
    min_area: f64,
    kc: Spanned<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawYear {
    inflow_source: Option<String>,
    rainfall: Spanned<Vec<f64>>,
    et0: Spanned<Vec<f64>>,
    inflow: Spanned<Vec<f64>>,
    tef_fraction: Option<Spanned<Vec<f64>>>,
}

/// Scale factor that converts a declared climate unit to GL/ha.
pub(crate) fn climate_unit_divisor(field: &str, unit: Option<&str>) -> Result<f64> {
    let unit = unit.ok_or_else(|| Error::MissingUnit { field: field.to_string() })?;
    let norm: String = unit.split_whitespace().collect::<Vec<_>>().join(" ").to_ascii_lowercase();
    match norm.as_str() {
        "gl/ha" => Ok(1.0),
        "1e-4 gl/ha" | "10^-4 gl/ha" => Ok(1e4),
        // 1 mm over one hectare is 10 m^3 = 1e-5 GL
        "mm" => Ok(1e5),
        _ => Err(Error::UnsupportedUnit { field: field.to_string(), unit: unit.to_string() }),
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
    (line, col)
}

struct Ctx<'a> {
    text: &'a str,
    origin: &'a str,
}

impl Ctx<'_> {
    fn at(&self, span: std::ops::Range<usize>, field: &str) -> String {
        let (line, col) = line_col(self.text, span.start);
        format!("{}:{line}:{col} ({field})", self.origin)
    }

    fn series(&self, raw: &Spanned<Vec<f64>>, field: &str, divisor: f64) -> Result<Monthly> {
        let values = raw.get_ref();
        if values.len() != MONTHS {
            return Err(Error::SeriesLength { location: self.at(raw.span(), field), found: values.len() });
        }
        Ok(std::array::from_fn(|m| values[m] / divisor))
    }
}

/// Parses scenario text. `origin` is used in error locations.
pub fn parse_scenario_toml(text: &str, origin: &str) -> Result<Scenario> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| {
        let location = match e.span() {
            Some(span) => {
                let (line, col) = line_col(text, span.start);
                format!("{origin}:{line}:{col}")
            }
            None => origin.to_string(),
        };
        Error::Parse { location, message: e.message().trim().to_string() }
    })?;
    let ctx = Ctx { text, origin };

    let units = raw.units.as_ref();
    let rain_div = climate_unit_divisor("units.rainfall", units.and_then(|u| u.rainfall.as_deref()))?;
    let et_div = climate_unit_divisor("units.et0", units.and_then(|u| u.et0.as_deref()))?;
    if let Some(unit) = units.and_then(|u| u.inflow.as_deref()) {
        if !unit.trim().eq_ignore_ascii_case("GL") {
            return Err(Error::UnsupportedUnit { field: "units.inflow".into(), unit: unit.into() });
        }
    }

    let requirement_clamp = match raw.options.requirement_clamp.as_deref() {
        Some(s) => s.parse()?,
        None => RequirementClamp::default(),
    };
    let default_tef = tessmann_fractions(raw.options.tef_low_flow, raw.options.tef_high_flow);

    let crops = raw
        .crops
        .iter()
        .enumerate()
        .map(|(i, c)| {
            Ok(CropSpec {
                name: c.name.clone(),
                price: c.price,
                crop_yield: c.crop_yield,
                var_cost: c.var_cost,
                kc: ctx.series(&c.kc, &format!("crops[{i}].kc"), 1.0)?,
                min_area: c.min_area,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut years = BTreeMap::new();
    for (key, y) in &raw.year {
        let label: YearType = key.parse()?;
        let p = format!("year.{key}");
        let tef_fraction = match &y.tef_fraction {
            Some(f) => ctx.series(f, &format!("{p}.tef_fraction"), 1.0)?,
            None => default_tef,
        };
        let year = HydroYear {
            label,
            rainfall: ctx.series(&y.rainfall, &format!("{p}.rainfall"), rain_div)?,
            et0: ctx.series(&y.et0, &format!("{p}.et0"), et_div)?,
            inflow: ctx.series(&y.inflow, &format!("{p}.inflow"), 1.0)?,
            tef_fraction,
            inflow_source: y.inflow_source.clone(),
        };
        if years.insert(label, year).is_some() {
            return Err(Error::Parse { location: format!("{origin} ({p})"), message: "duplicate year".into() });
        }
    }

    Ok(Scenario {
        name: raw.meta.name.unwrap_or_else(|| "unnamed".to_string()),
        crops,
        years,
        economics: raw.economics,
        limits: raw.limits,
        options: ModelOptions { requirement_clamp },
    })
}

fn fmt_f64(v: f64) -> String {
    // Debug always keeps a decimal point or exponent, and round-trips exactly.
    format!("{v:?}")
}

fn fmt_series(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|&v| fmt_f64(v)).collect();
    format!("[{}]", parts.join(", "))
}

fn quote(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// Serializes a scenario at full precision, climate in GL/ha.
pub fn to_toml_string(s: &Scenario) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[meta]\nname = {}\n", quote(&s.name));
    let _ = writeln!(out, "[units]\nrainfall = \"GL/ha\"\net0 = \"GL/ha\"\ninflow = \"GL\"\n");
    let _ = writeln!(
        out,
        "[economics]\ncw = {}\ncp = {}\n",
        fmt_f64(s.economics.cw),
        fmt_f64(s.economics.cp)
    );
    let _ = writeln!(
        out,
        "[limits]\nt_pump = {}\nt_area = {}\ncanal_cap = {}\n",
        fmt_f64(s.limits.t_pump),
        fmt_f64(s.limits.t_area),
        fmt_f64(s.limits.canal_cap)
    );
    let _ = writeln!(out, "[options]\nrequirement_clamp = {}\n", quote(s.options.requirement_clamp.as_str()));
    for c in &s.crops {
        let _ = writeln!(
            out,
            "[[crops]]\nname = {}\nprice = {}\ncrop_yield = {}\nvar_cost = {}\nmin_area = {}\nkc = {}\n",
            quote(&c.name),
            fmt_f64(c.price),
            fmt_f64(c.crop_yield),
            fmt_f64(c.var_cost),
            fmt_f64(c.min_area),
            fmt_series(&c.kc)
        );
    }
    for (label, y) in &s.years {
        let _ = writeln!(out, "[year.{label}]");
        if let Some(src) = &y.inflow_source {
            let _ = writeln!(out, "inflow_source = {}", quote(src));
        }
        let _ = writeln!(
            out,
            "rainfall = {}\net0 = {}\ninflow = {}\ntef_fraction = {}\n",
            fmt_series(&y.rainfall),
            fmt_series(&y.et0),
            fmt_series(&y.inflow),
            fmt_series(&y.tef_fraction)
        );
    }
    out
}

/// Writes [`to_toml_string`] to `path` via a temporary file and rename.
pub fn save_scenario(s: &Scenario, path: &Path) -> Result<()> {
    crate::report::write_atomic(path, to_toml_string(s).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin_rajshahi;

    const MINIMAL: &str = r#"
[units]
rainfall = "1e-4 GL/ha"
et0 = "1e-4 GL/ha"

[economics]
cw = 1.0
cp = 2.0

[limits]
t_pump = 10.0
t_area = 100.0
canal_cap = 50.0

[[crops]]
name = "a"
price = 1.0
crop_yield = 1.0
var_cost = 0.0
min_area = 1.0
kc = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]

[year.dry]
rainfall = [0.6, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]
et0 = [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1]
inflow = [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1]
"#;

    #[test]
    fn declared_scale_is_applied_once() {
        let s = parse_scenario_toml(MINIMAL, "t").unwrap();
        let dry = &s.years[&YearType::Dry];
        assert!((dry.rainfall[0] - 0.6e-4).abs() < 1e-18);
        assert_eq!(dry.et0[0], 1e-4);
    }

    #[test]
    fn short_series_reports_location() {
        let text = MINIMAL.replace("[0.6, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]", "[0.6, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]");
        let err = parse_scenario_toml(&text, "t.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("series length"), "{msg}");
        assert!(msg.contains("year.dry.rainfall"), "{msg}");
        assert!(msg.contains("t.toml:"), "{msg}");
    }

    #[test]
    fn missing_unit_declaration() {
        let text = MINIMAL.replace("rainfall = \"1e-4 GL/ha\"\n", "");
        let err = parse_scenario_toml(&text, "t").unwrap_err();
        assert!(matches!(err, Error::MissingUnit { .. }), "{err}");
        assert!(err.to_string().contains("unit declaration missing"));
    }

    #[test]
    fn syntax_error_has_line() {
        let text = MINIMAL.replace("cp = 2.0", "cp = = 2.0");
        let err = parse_scenario_toml(&text, "t").unwrap_err();
        match err {
            Error::Parse { location, .. } => assert!(location.starts_with("t:8:"), "{location}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_field_rejected() {
        let text = MINIMAL.replace("cp = 2.0", "cp = 2.0\ncq = 3.0");
        assert!(matches!(parse_scenario_toml(&text, "t"), Err(Error::Parse { .. })));
    }

    #[test]
    fn builtin_round_trips_exactly() {
        let s = builtin_rajshahi();
        let back = parse_scenario_toml(&to_toml_string(&s), "rt").unwrap();
        assert_eq!(s, back);
    }
}
