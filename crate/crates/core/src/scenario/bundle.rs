//! CSV bundle: one file per source table.
//!
//! | file                    | layout                                              |
//! |-------------------------|-----------------------------------------------------|
//! | `min_area.csv`          | header `crops,<crop>...`, one row `min_area`        |
//! | `economics.csv`         | header `crops,<crop>...`, rows `price`, `crop_yield`, `var_cost` |
//! | `crop_coefficients.csv` | header `crop,Jan..Dec`, one row per crop            |
//! | `climate.csv`           | header `series (<unit>),Jan..Dec`, rows `rain_<year>`, `et_<year>` |
//! | `inflow.csv`            | header `series (GL),Jan..Dec`, rows `inflow_<year>`, optional `tef_fraction_<year>` |
//! | `parameters.csv`        | `key,value` rows for economics, limits and options  |

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::file::climate_unit_divisor;
use super::{
    tessmann_fractions, CropSpec, EconomicParams, HydroYear, ModelOptions, RequirementClamp,
    Scenario, SystemLimits, YearType,
};
use crate::error::{Error, Result};
use crate::{Monthly, MONTHS, MONTH_LABELS};

const MIN_AREA: &str = "min_area.csv";
const ECONOMICS: &str = "economics.csv";
const KC: &str = "crop_coefficients.csv";
const CLIMATE: &str = "climate.csv";
const INFLOW: &str = "inflow.csv";
const PARAMETERS: &str = "parameters.csv";

struct Table {
    file: String,
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn read(dir: &Path, name: &str) -> Result<Table> {
        let path = dir.join(name);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| Error::Parse { location: format!("{}:1", path.display()), message: e.to_string() })?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Parse { location: path.display().to_string(), message: e.to_string() })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            if rec.iter().all(str::is_empty) {
                continue;
            }
            rows.push((line, rec.iter().map(str::to_string).collect()));
        }
        Ok(Table { file: path.display().to_string(), header, rows })
    }

    fn loc(&self, line: usize, field: &str) -> String {
        format!("{}:{line} ({field})", self.file)
    }

    fn num(&self, line: usize, field: &str, s: &str) -> Result<f64> {
        s.parse::<f64>().map_err(|_| Error::Parse {
            location: self.loc(line, field),
            message: format!("expected a number, got {s:?}"),
        })
    }

    fn monthly(&self, line: usize, field: &str, cells: &[String], divisor: f64) -> Result<Monthly> {
        let values = &cells[1..];
        if values.len() != MONTHS {
            return Err(Error::SeriesLength { location: self.loc(line, field), found: values.len() });
        }
        let mut out = [0.0; MONTHS];
        for (m, v) in values.iter().enumerate() {
            out[m] = self.num(line, field, v)? / divisor;
        }
        Ok(out)
    }

    /// Crop-per-column tables (Tables 1 and 9): map row key -> values by crop.
    fn by_crop_columns(&self) -> Result<(Vec<String>, HashMap<String, (usize, Vec<f64>)>)> {
        let crops: Vec<String> = self.header[1..].to_vec();
        let mut rows = HashMap::new();
        for (line, cells) in &self.rows {
            let key = cells[0].clone();
            if cells.len() != crops.len() + 1 {
                return Err(Error::Parse {
                    location: self.loc(*line, &key),
                    message: format!("expected {} values, found {}", crops.len(), cells.len() - 1),
                });
            }
            let vals = cells[1..].iter().map(|v| self.num(*line, &key, v)).collect::<Result<Vec<_>>>()?;
            rows.insert(key, (*line, vals));
        }
        Ok((crops, rows))
    }

    fn require<'a>(&self, rows: &'a HashMap<String, (usize, Vec<f64>)>, key: &str) -> Result<&'a Vec<f64>> {
        rows.get(key).map(|(_, v)| v).ok_or_else(|| Error::Parse {
            location: self.file.clone(),
            message: format!("missing row {key:?}"),
        })
    }
}

fn header_unit(header: &str) -> Option<String> {
    let open = header.find('(')?;
    let close = header.rfind(')')?;
    (close > open).then(|| header[open + 1..close].trim().to_string())
}

/// Loads a CSV bundle directory. Does not validate.
pub fn load_bundle(dir: &Path) -> Result<Scenario> {
    if !dir.is_dir() {
        return Err(Error::NotFound { path: dir.to_path_buf() });
    }

    let params = Table::read(dir, PARAMETERS)?;
    let mut kv: HashMap<String, (usize, String)> = HashMap::new();
    for (line, cells) in &params.rows {
        if cells.len() < 2 {
            return Err(Error::Parse { location: params.loc(*line, &cells[0]), message: "expected key,value".into() });
        }
        kv.insert(cells[0].clone(), (*line, cells[1].clone()));
    }
    let param = |key: &str| -> Result<f64> {
        let (line, v) = kv.get(key).ok_or_else(|| Error::Parse {
            location: params.file.clone(),
            message: format!("missing parameter {key:?}"),
        })?;
        params.num(*line, key, v)
    };
    let economics = EconomicParams { cw: param("cw")?, cp: param("cp")? };
    let limits = SystemLimits { t_pump: param("t_pump")?, t_area: param("t_area")?, canal_cap: param("canal_cap")? };
    let requirement_clamp = match kv.get("requirement_clamp") {
        Some((_, v)) => v.parse()?,
        None => RequirementClamp::default(),
    };
    let tef_low = if kv.contains_key("tef_low_flow") { param("tef_low_flow")? } else { 1.0 };
    let tef_high = if kv.contains_key("tef_high_flow") { param("tef_high_flow")? } else { 0.4 };

    let econ = Table::read(dir, ECONOMICS)?;
    let (names, econ_rows) = econ.by_crop_columns()?;
    let price = econ.require(&econ_rows, "price")?;
    let crop_yield = econ.require(&econ_rows, "crop_yield")?;
    let var_cost = econ.require(&econ_rows, "var_cost")?;

    let mins = Table::read(dir, MIN_AREA)?;
    let (min_names, min_rows) = mins.by_crop_columns()?;
    if min_names != names {
        return Err(Error::Parse { location: mins.file.clone(), message: "crop columns differ from the economics file".into() });
    }
    let min_area = mins.require(&min_rows, "min_area")?;

    let kc_table = Table::read(dir, KC)?;
    let mut kc_by_name = HashMap::new();
    for (line, cells) in &kc_table.rows {
        let kc = kc_table.monthly(*line, &format!("{}.kc", cells[0]), cells, 1.0)?;
        kc_by_name.insert(cells[0].clone(), kc);
    }

    let crops = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let kc = *kc_by_name.get(name).ok_or_else(|| Error::Parse {
                location: kc_table.file.clone(),
                message: format!("no crop coefficient row for {name:?}"),
            })?;
            Ok(CropSpec {
                name: name.clone(),
                price: price[i],
                crop_yield: crop_yield[i],
                var_cost: var_cost[i],
                kc,
                min_area: min_area[i],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let climate = Table::read(dir, CLIMATE)?;
    let unit = header_unit(&climate.header[0]);
    let div = climate_unit_divisor(&format!("{CLIMATE} header"), unit.as_deref())?;
    let mut series: BTreeMap<String, Monthly> = BTreeMap::new();
    for (line, cells) in &climate.rows {
        series.insert(cells[0].clone(), climate.monthly(*line, &cells[0], cells, div)?);
    }

    let inflow_table = Table::read(dir, INFLOW)?;
    if let Some(u) = header_unit(&inflow_table.header[0]) {
        if !u.eq_ignore_ascii_case("GL") {
            return Err(Error::UnsupportedUnit { field: format!("{INFLOW} header"), unit: u });
        }
    }
    for (line, cells) in &inflow_table.rows {
        series.insert(cells[0].clone(), inflow_table.monthly(*line, &cells[0], cells, 1.0)?);
    }

    let mut years = BTreeMap::new();
    for label in YearType::ALL {
        let key = |p: &str| format!("{p}_{label}");
        let (Some(rain), Some(et), Some(inflow)) =
            (series.get(&key("rain")), series.get(&key("et")), series.get(&key("inflow")))
        else {
            continue;
        };
        let tef_fraction = series.get(&key("tef_fraction")).copied().unwrap_or_else(|| tessmann_fractions(tef_low, tef_high));
        years.insert(
            label,
            HydroYear {
                label,
                rainfall: *rain,
                et0: *et,
                inflow: *inflow,
                tef_fraction,
                inflow_source: kv.get(&key("inflow_source")).map(|(_, v)| v.clone()),
            },
        );
    }

    Ok(Scenario {
        name: kv.get("name").map(|(_, v)| v.clone()).unwrap_or_else(|| "unnamed".into()),
        crops,
        years,
        economics,
        limits,
        options: ModelOptions { requirement_clamp },
    })
}

fn write_csv(dir: &Path, name: &str, rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).map_err(|e| Error::Io { path: dir.join(name), source: e.into() })?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io { path: dir.join(name), source: e.into_error() })?;
    crate::report::write_atomic(&dir.join(name), &bytes)
}

fn month_header(first: &str) -> Vec<String> {
    std::iter::once(first.to_string()).chain(MONTH_LABELS.iter().map(|m| m.to_string())).collect()
}

fn row(key: String, values: &[f64]) -> Vec<String> {
    std::iter::once(key).chain(values.iter().map(|v| format!("{v:?}"))).collect()
}

/// Writes a CSV bundle (climate in GL/ha, full precision).
pub fn save_bundle(s: &Scenario, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names: Vec<String> = s.crops.iter().map(|c| c.name.clone()).collect();
    let crop_header = || std::iter::once("crops".to_string()).chain(names.iter().cloned()).collect::<Vec<_>>();
    let per_crop = |key: &str, f: &dyn Fn(&CropSpec) -> f64| row(key.into(), &s.crops.iter().map(f).collect::<Vec<_>>());

    write_csv(dir, MIN_AREA, vec![crop_header(), per_crop("min_area", &|c| c.min_area)])?;
    write_csv(
        dir,
        ECONOMICS,
        vec![
            crop_header(),
            per_crop("price", &|c| c.price),
            per_crop("crop_yield", &|c| c.crop_yield),
            per_crop("var_cost", &|c| c.var_cost),
        ],
    )?;
    let mut kc = vec![month_header("crop")];
    kc.extend(s.crops.iter().map(|c| row(c.name.clone(), &c.kc)));
    write_csv(dir, KC, kc)?;

    let mut climate = vec![month_header("series (GL/ha)")];
    let mut inflow = vec![month_header("series (GL)")];
    for (label, y) in &s.years {
        climate.push(row(format!("rain_{label}"), &y.rainfall));
        climate.push(row(format!("et_{label}"), &y.et0));
        inflow.push(row(format!("inflow_{label}"), &y.inflow));
        inflow.push(row(format!("tef_fraction_{label}"), &y.tef_fraction));
    }
    write_csv(dir, CLIMATE, climate)?;
    write_csv(dir, INFLOW, inflow)?;

    let mut params = vec![
        vec!["key".to_string(), "value".to_string()],
        vec!["name".into(), s.name.clone()],
        vec!["cw".into(), format!("{:?}", s.economics.cw)],
        vec!["cp".into(), format!("{:?}", s.economics.cp)],
        vec!["t_pump".into(), format!("{:?}", s.limits.t_pump)],
        vec!["t_area".into(), format!("{:?}", s.limits.t_area)],
        vec!["canal_cap".into(), format!("{:?}", s.limits.canal_cap)],
        vec!["requirement_clamp".into(), s.options.requirement_clamp.as_str().into()],
    ];
    for (label, y) in &s.years {
        if let Some(src) = &y.inflow_source {
            params.push(vec![format!("inflow_source_{label}"), src.clone()]);
        }
    }
    write_csv(dir, PARAMETERS, params)
}
