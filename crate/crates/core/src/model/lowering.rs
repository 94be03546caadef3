use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Objective, ProblemKind, ProblemSpec, Structure};
use crate::error::{Error, Result};
use crate::hydrology::DecisionVector;
use crate::scenario::{HydroYear, RequirementClamp, Scenario};
use crate::MONTHS;

/// Safety factor applied to the box bound of every big-M expression.
pub const BIG_M_SAFETY: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowSense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxKind {
    /// `u_m = max(W_m, 0)`, only under the monthly clamp.
    Requirement,
    /// `t_m = max(req_m - Inflow_m + E_m, 0)`.
    Pumping,
    /// `s_m = max(TEF_m - E_m, 0)`.
    Deficiency,
}

impl AuxKind {
    fn letter(self) -> char {
        match self {
            AuxKind::Requirement => 'U',
            AuxKind::Pumping => 'T',
            AuxKind::Deficiency => 'S',
        }
    }
}

/// What a column of a lowered program stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnTag {
    Area(usize),
    EnvFlow(usize),
    Aux(AuxKind, usize),
    Indicator(AuxKind, usize),
}

impl ColumnTag {
    pub fn name(&self) -> String {
        match *self {
            ColumnTag::Area(c) => format!("X{:02}", c + 1),
            ColumnTag::EnvFlow(m) => format!("E{:02}", m + 1),
            ColumnTag::Aux(k, m) => format!("{}{:02}", k.letter(), m + 1),
            ColumnTag::Indicator(k, m) => format!("Z{}{:02}", k.letter(), m + 1),
        }
    }
}

impl fmt::Display for ColumnTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// `sum terms + constant` over program columns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearForm {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinearForm {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, a)| a * x[j]).sum::<f64>()
    }

    pub fn scaled(&self, k: f64) -> LinearForm {
        LinearForm { terms: self.terms.iter().map(|&(j, a)| (j, a * k)).collect(), constant: self.constant * k }
    }

    fn add(&mut self, other: &LinearForm, k: f64) {
        self.terms.extend(other.terms.iter().map(|&(j, a)| (j, a * k)));
        self.constant += other.constant * k;
    }

    fn push(&mut self, j: usize, a: f64) {
        self.terms.push((j, a));
    }

    /// Merges repeated columns and drops zeros.
    fn compact(mut self) -> LinearForm {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for (j, a) in self.terms {
            match out.last_mut() {
                Some(last) if last.0 == j => last.1 += a,
                _ => out.push((j, a)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        LinearForm { terms: out, constant: self.constant }
    }
}

/// Exact-value encoding of one auxiliary: `aux = max(expr, 0)` enforced with
/// indicator `z` and constant `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigM {
    pub aux: usize,
    pub indicator: usize,
    pub m: f64,
    pub expr: LinearForm,
}

/// Linear or mixed-integer program in row form with column provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoweredProgram {
    pub name: String,
    pub structure: Structure,
    pub sense: Sense,
    pub objective: LinearForm,
    /// `(row, column, value)` triplets.
    pub entries: Vec<(usize, usize, f64)>,
    pub row_sense: Vec<RowSense>,
    pub rhs: Vec<f64>,
    pub row_names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Empty for a pure LP, otherwise one flag per column.
    pub integer: Vec<bool>,
    pub columns: Vec<ColumnTag>,
    pub big_m: Vec<BigM>,
    /// Net benefit in Tk as a function of the columns.
    pub net_benefit: LinearForm,
    /// EFD in GL; present when deficiency columns exist.
    pub efd: Option<LinearForm>,
    pub total_area: LinearForm,
    pub total_pumping: LinearForm,
}

impl LoweredProgram {
    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_milp(&self) -> bool {
        self.integer.iter().any(|&b| b)
    }

    pub fn n_integer(&self) -> usize {
        self.integer.iter().filter(|&&b| b).count()
    }

    pub fn column(&self, tag: ColumnTag) -> Option<usize> {
        self.columns.iter().position(|&t| t == tag)
    }

    pub fn count_tag(&self, pred: impl Fn(&ColumnTag) -> bool) -> usize {
        self.columns.iter().filter(|t| pred(t)).count()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }

    pub fn row_activity(&self, x: &[f64]) -> Vec<f64> {
        let mut act = vec![0.0; self.n_rows()];
        for &(i, j, a) in &self.entries {
            act[i] += a * x[j];
        }
        act
    }

    /// Largest violation over rows and bounds, each relative to
    /// `max(1, |rhs|)` or `max(1, |bound|)`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let act = self.row_activity(x);
        let mut worst: f64 = 0.0;
        for i in 0..self.n_rows() {
            let scale = self.rhs[i].abs().max(1.0);
            let v = match self.row_sense[i] {
                RowSense::Le => act[i] - self.rhs[i],
                RowSense::Ge => self.rhs[i] - act[i],
                RowSense::Eq => (act[i] - self.rhs[i]).abs(),
            };
            worst = worst.max(v / scale);
        }
        for j in 0..self.n_cols() {
            worst = worst.max((self.lower[j] - x[j]) / self.lower[j].abs().max(1.0));
            if self.upper[j].is_finite() {
                worst = worst.max((x[j] - self.upper[j]) / self.upper[j].abs().max(1.0));
            }
        }
        worst
    }

    pub fn add_row(&mut self, form: &LinearForm, sense: RowSense, rhs: f64, name: &str) {
        let i = self.n_rows();
        for &(j, a) in &form.clone().compact().terms {
            self.entries.push((i, j, a));
        }
        self.row_sense.push(sense);
        self.rhs.push(rhs - form.constant);
        self.row_names.push(name.to_string());
    }

    pub fn set_objective(&mut self, form: LinearForm, sense: Sense) {
        self.objective = form.compact();
        self.sense = sense;
    }

    /// Linear form and sense for a tie-break objective.
    pub fn objective_form(&self, o: Objective) -> Result<(LinearForm, Sense)> {
        Ok(match o {
            Objective::MaxNetBenefit => (self.net_benefit.clone(), Sense::Maximize),
            Objective::MinEfd => (
                self.efd.clone().ok_or_else(|| Error::Precondition("program has no deficiency columns".into()))?,
                Sense::Minimize,
            ),
            Objective::MinTotalArea => (self.total_area.clone(), Sense::Minimize),
            Objective::MinTotalPumping => (self.total_pumping.clone(), Sense::Minimize),
        })
    }

    /// Decision vector read back through column provenance.
    pub fn decision(&self, x: &[f64], n_crops: usize) -> DecisionVector {
        let mut d = DecisionVector::zeros(n_crops);
        for (j, tag) in self.columns.iter().enumerate() {
            match *tag {
                ColumnTag::Area(c) => d.areas[c] = x[j],
                ColumnTag::EnvFlow(m) => d.env_flow[m] = x[j],
                _ => {}
            }
        }
        d
    }

    /// Column vector for a decision with every auxiliary at its exact max
    /// value and every indicator at `1[expr > 0]`.
    pub fn complete(&self, s: &Scenario, year: &HydroYear, d: &DecisionVector) -> Vec<f64> {
        let mut x = vec![0.0; self.n_cols()];
        for (j, tag) in self.columns.iter().enumerate() {
            match *tag {
                ColumnTag::Area(c) => x[j] = d.areas[c],
                ColumnTag::EnvFlow(m) => x[j] = d.env_flow[m],
                _ => {}
            }
        }
        let values = exact_aux(s, year, d);
        for (j, tag) in self.columns.iter().enumerate() {
            if let ColumnTag::Aux(k, m) = *tag {
                x[j] = values.get(k, m);
            }
        }
        for b in &self.big_m {
            let z: f64 = if b.expr.eval(&x) > 0.0 { 1.0 } else { 0.0 };
            x[b.indicator] = z.clamp(self.lower[b.indicator], self.upper[b.indicator]);
        }
        x
    }
}

/// Exact values of every max term for one decision.
pub(crate) struct AuxValues {
    pub requirement: [f64; MONTHS],
    pub pumping: [f64; MONTHS],
    pub deficiency: [f64; MONTHS],
}

impl AuxValues {
    pub fn get(&self, k: AuxKind, m: usize) -> f64 {
        match k {
            AuxKind::Requirement => self.requirement[m],
            AuxKind::Pumping => self.pumping[m],
            AuxKind::Deficiency => self.deficiency[m],
        }
    }
}

pub(crate) fn exact_aux(s: &Scenario, year: &HydroYear, d: &DecisionVector) -> AuxValues {
    let f = crate::hydrology::flows_for(s, year, d);
    AuxValues {
        requirement: f.effective_requirement,
        pumping: f.pumping,
        deficiency: std::array::from_fn(|m| (f.tef[m] - d.env_flow[m]).max(0.0)),
    }
}

/// Range of `sum_c a_c X_c` over `{X >= min_area, sum X <= t_area}`.
fn area_form_range(s: &Scenario, a: &[f64]) -> (f64, f64) {
    let base: f64 = a.iter().zip(&s.crops).map(|(a, c)| a * c.min_area).sum();
    let free = (s.limits.t_area - s.total_min_area()).max(0.0);
    let hi = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = a.iter().cloned().fold(f64::INFINITY, f64::min);
    (base + free * lo.min(0.0), base + free * hi.max(0.0))
}

/// Lowers with the column set of the primary problem. Pure LP structures
/// only.
pub fn lower_to_lp(p: &ProblemSpec) -> Result<LoweredProgram> {
    if p.structure.is_milp() {
        return Err(Error::Precondition(format!("{} has reverse-convex structure, use lower_to_milp", p.kind)));
    }
    lower(p, p.kind != ProblemKind::Model1, false)
}

/// Lowers with big-M exact encodings. Reverse-convex structures only.
pub fn lower_to_milp(p: &ProblemSpec) -> Result<LoweredProgram> {
    if !p.structure.is_milp() {
        return Err(Error::Precondition(format!("{} is a pure LP, use lower_to_lp", p.kind)));
    }
    lower(p, p.kind != ProblemKind::Model1, true)
}

/// General lowering. `with_deficiency` adds the `s_m` columns (needed by any
/// objective or constraint that reads EFD); `exact` adds a big-M indicator
/// for every auxiliary.
pub fn lower(p: &ProblemSpec, with_deficiency: bool, exact: bool) -> Result<LoweredProgram> {
    let s = &*p.scenario;
    let year = s.year(p.year)?;
    if p.kind != ProblemKind::Model1 && !with_deficiency {
        return Err(Error::Precondition(format!("{} reads EFD and needs deficiency columns", p.kind)));
    }
    let n = s.n_crops();
    let clamp = s.options.requirement_clamp;
    let tef = year.tef();
    let demand: Vec<Vec<f64>> = (0..MONTHS).map(|m| (0..n).map(|c| s.unit_demand(year, c, m)).collect()).collect();

    let mut columns = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut col = |tag: ColumnTag, lo: f64, hi: f64, columns: &mut Vec<ColumnTag>| {
        columns.push(tag);
        lower.push(lo);
        upper.push(hi);
        columns.len() - 1
    };

    let x_col: Vec<usize> = (0..n).map(|c| col(ColumnTag::Area(c), s.crops[c].min_area, f64::INFINITY, &mut columns)).collect();
    let e_lo: Vec<f64> = (0..MONTHS).map(|m| (year.inflow[m] - s.limits.canal_cap).max(0.0)).collect();
    let e_col: Vec<usize> =
        (0..MONTHS).map(|m| col(ColumnTag::EnvFlow(m), e_lo[m], year.inflow[m], &mut columns)).collect();

    // Requirement per month as a form over X (or over u), with its range.
    let mut req_form = Vec::with_capacity(MONTHS);
    let mut req_range = Vec::with_capacity(MONTHS);
    let mut u_cols = Vec::new();
    let mut exact_terms: Vec<(usize, LinearForm, f64, f64)> = Vec::new();
    let mut rows: Vec<(LinearForm, RowSense, f64, String)> = Vec::new();
    for m in 0..MONTHS {
        let w = LinearForm { terms: x_col.iter().zip(&demand[m]).map(|(&j, &a)| (j, a)).collect(), constant: 0.0 };
        let (wlo, whi) = area_form_range(s, &demand[m]);
        match clamp {
            RequirementClamp::None => {
                req_form.push(w);
                req_range.push((wlo, whi));
            }
            RequirementClamp::PerCrop => {
                let pos: Vec<f64> = demand[m].iter().map(|a| a.max(0.0)).collect();
                req_range.push(area_form_range(s, &pos));
                req_form.push(LinearForm { terms: x_col.iter().zip(&pos).map(|(&j, &a)| (j, a)).collect(), constant: 0.0 });
            }
            RequirementClamp::Monthly => {
                let u = col(ColumnTag::Aux(AuxKind::Requirement, m), 0.0, whi.max(0.0), &mut columns);
                u_cols.push(u);
                let mut row = LinearForm::default();
                row.push(u, 1.0);
                row.add(&w, -1.0);
                rows.push((row, RowSense::Ge, 0.0, format!("req_{:02}", m + 1)));
                exact_terms.push((u, w, wlo, whi));
                req_form.push(LinearForm { terms: vec![(u, 1.0)], constant: 0.0 });
                req_range.push((wlo.max(0.0), whi.max(0.0)));
            }
        }
    }

    let mut t_cols = Vec::with_capacity(MONTHS);
    for m in 0..MONTHS {
        let mut expr = req_form[m].clone();
        expr.push(e_col[m], 1.0);
        expr.constant = -year.inflow[m];
        let lo = req_range[m].0 - year.inflow[m] + e_lo[m];
        let hi = req_range[m].1;
        let t = col(ColumnTag::Aux(AuxKind::Pumping, m), 0.0, hi.max(0.0), &mut columns);
        t_cols.push(t);
        let mut row = LinearForm::default();
        row.push(t, 1.0);
        row.add(&expr, -1.0);
        rows.push((row, RowSense::Ge, 0.0, format!("pump_{:02}", m + 1)));
        exact_terms.push((t, expr, lo, hi));
    }

    let mut s_cols = Vec::new();
    if with_deficiency {
        for m in 0..MONTHS {
            let expr = LinearForm { terms: vec![(e_col[m], -1.0)], constant: tef[m] };
            let (lo, hi) = (tef[m] - year.inflow[m], tef[m] - e_lo[m]);
            let sc = col(ColumnTag::Aux(AuxKind::Deficiency, m), 0.0, hi.max(0.0), &mut columns);
            s_cols.push(sc);
            let mut row = LinearForm::default();
            row.push(sc, 1.0);
            row.add(&expr, -1.0);
            rows.push((row, RowSense::Ge, 0.0, format!("def_{:02}", m + 1)));
            exact_terms.push((sc, expr, lo, hi));
        }
    }

    let mut big_m = Vec::new();
    if exact {
        for (aux, expr, lo, hi) in &exact_terms {
            let kind = match columns[*aux] {
                ColumnTag::Aux(k, _) => k,
                _ => unreachable!("exact terms are auxiliaries"),
            };
            let month = match columns[*aux] {
                ColumnTag::Aux(_, m) => m,
                _ => unreachable!(),
            };
            // Sign known over the whole box: the indicator is fixed.
            let (zlo, zhi) = if *lo >= 0.0 {
                (1.0, 1.0)
            } else if *hi <= 0.0 {
                (0.0, 0.0)
            } else {
                (0.0, 1.0)
            };
            let z = col(ColumnTag::Indicator(kind, month), zlo, zhi, &mut columns);
            let m_val = (BIG_M_SAFETY * lo.abs().max(hi.abs())).max(1e-9);
            // aux <= expr + M (1 - z)
            let mut a = LinearForm::default();
            a.push(*aux, 1.0);
            a.add(expr, -1.0);
            a.push(z, m_val);
            rows.push((a, RowSense::Le, m_val, format!("bigm_hi_{}", columns[*aux].name())));
            // aux <= M z
            let b = LinearForm { terms: vec![(*aux, 1.0), (z, -m_val)], constant: 0.0 };
            rows.push((b, RowSense::Le, 0.0, format!("bigm_on_{}", columns[*aux].name())));
            big_m.push(BigM { aux: *aux, indicator: z, m: m_val, expr: expr.clone() });
        }
    }

    let total_pumping = LinearForm { terms: t_cols.iter().map(|&j| (j, 1.0)).collect(), constant: 0.0 };
    rows.push((total_pumping.clone(), RowSense::Le, s.limits.t_pump, "pump_cap".into()));
    let total_area = LinearForm { terms: x_col.iter().map(|&j| (j, 1.0)).collect(), constant: 0.0 };
    rows.push((total_area.clone(), RowSense::Le, s.limits.t_area, "area_cap".into()));

    // f1 = sum gm X - cw sum req - (cp - cw) sum t
    let (cw, cp) = (s.economics.cw, s.economics.cp);
    let mut net_benefit = LinearForm::default();
    for (c, &j) in x_col.iter().enumerate() {
        net_benefit.push(j, s.crops[c].gross_margin());
    }
    for f in &req_form {
        net_benefit.add(f, -cw);
    }
    for &t in &t_cols {
        net_benefit.push(t, -(cp - cw));
    }
    let net_benefit = net_benefit.compact();
    let efd = with_deficiency
        .then(|| LinearForm { terms: s_cols.iter().map(|&j| (j, 1.0)).collect(), constant: 0.0 });

    let w = p.weight_or_default();
    let norm = p.normalization;
    let g1 = || {
        let mut g = net_benefit.scaled(w.w1 * norm.scale[0]);
        g.constant -= w.w1 * norm.scale[0] * norm.offset[0];
        g
    };
    let g2 = |efd: &LinearForm| {
        let mut g = efd.scaled(w.w2 * norm.scale[1]);
        g.constant -= w.w2 * norm.scale[1] * norm.offset[1];
        g
    };
    let (objective, sense) = match p.kind {
        ProblemKind::Model1 => (net_benefit.clone(), Sense::Maximize),
        ProblemKind::Model2 => (efd.clone().expect("deficiency columns present"), Sense::Minimize),
        ProblemKind::Sub1 => {
            let mut row = g2(efd.as_ref().expect("deficiency columns present"));
            row.add(&g1(), -1.0);
            rows.push((row, RowSense::Le, 0.0, "scalarization".into()));
            (g1(), Sense::Maximize)
        }
        ProblemKind::Sub2 => {
            let e = efd.as_ref().expect("deficiency columns present");
            let mut row = g1();
            row.add(&g2(e), -1.0);
            rows.push((row, RowSense::Le, 0.0, "scalarization".into()));
            (g2(e), Sense::Minimize)
        }
    };

    let integer = if exact {
        columns.iter().map(|t| matches!(t, ColumnTag::Indicator(..))).collect()
    } else {
        Vec::new()
    };

    let mut prog = LoweredProgram {
        name: format!("{}_{}_{}", s.name, p.year.as_str(), p.kind),
        structure: p.structure,
        sense,
        objective: LinearForm::default(),
        entries: Vec::new(),
        row_sense: Vec::new(),
        rhs: Vec::new(),
        row_names: Vec::new(),
        lower,
        upper,
        integer,
        columns,
        big_m,
        net_benefit,
        efd,
        total_area,
        total_pumping,
    };
    prog.set_objective(objective, sense);
    for (form, sense, rhs, name) in rows {
        prog.add_row(&form, sense, rhs, &name);
    }
    Ok(prog)
}
