//! Free-format MPS export for third-party cross-checks.

use std::fmt::Write;

use super::lowering::{LoweredProgram, RowSense, Sense};

impl LoweredProgram {
    /// Free MPS text. Maximization is declared through an `OBJSENSE`
    /// section; the objective constant is written as the negated RHS of the
    /// objective row, which is the common convention.
    pub fn to_mps(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "NAME {}", self.name);
        let _ = writeln!(out, "OBJSENSE");
        let _ = writeln!(out, "    {}", if self.sense == Sense::Maximize { "MAX" } else { "MIN" });
        let _ = writeln!(out, "ROWS");
        let _ = writeln!(out, " N  OBJ");
        for (i, name) in self.row_names.iter().enumerate() {
            let code = match self.row_sense[i] {
                RowSense::Le => 'L',
                RowSense::Ge => 'G',
                RowSense::Eq => 'E',
            };
            let _ = writeln!(out, " {code}  {name}");
        }

        let mut by_col: Vec<Vec<(String, f64)>> = vec![Vec::new(); self.n_cols()];
        for &(j, a) in &self.objective.terms {
            by_col[j].push(("OBJ".into(), a));
        }
        for &(i, j, a) in &self.entries {
            by_col[j].push((self.row_names[i].clone(), a));
        }

        let _ = writeln!(out, "COLUMNS");
        let mut in_int = false;
        for (j, tag) in self.columns.iter().enumerate() {
            let is_int = self.integer.get(j).copied().unwrap_or(false);
            if is_int != in_int {
                let marker = if is_int { "INTORG" } else { "INTEND" };
                let _ = writeln!(out, "    MARKER  'MARKER'  '{marker}'");
                in_int = is_int;
            }
            let name = tag.name();
            if by_col[j].is_empty() {
                let _ = writeln!(out, "    {name}  OBJ  0");
            }
            for (row, a) in &by_col[j] {
                let _ = writeln!(out, "    {name}  {row}  {a:e}");
            }
        }
        if in_int {
            let _ = writeln!(out, "    MARKER  'MARKER'  'INTEND'");
        }

        let _ = writeln!(out, "RHS");
        if self.objective.constant != 0.0 {
            let _ = writeln!(out, "    RHS  OBJ  {:e}", -self.objective.constant);
        }
        for (i, name) in self.row_names.iter().enumerate() {
            if self.rhs[i] != 0.0 {
                let _ = writeln!(out, "    RHS  {name}  {:e}", self.rhs[i]);
            }
        }

        let _ = writeln!(out, "BOUNDS");
        for (j, tag) in self.columns.iter().enumerate() {
            let name = tag.name();
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo == hi {
                let _ = writeln!(out, " FX BND  {name}  {lo:e}");
                continue;
            }
            if lo != 0.0 {
                let _ = writeln!(out, " LO BND  {name}  {lo:e}");
            }
            if hi.is_finite() {
                let _ = writeln!(out, " UP BND  {name}  {hi:e}");
            } else if self.integer.get(j).copied().unwrap_or(false) {
                let _ = writeln!(out, " PL BND  {name}");
            }
        }
        let _ = writeln!(out, "ENDATA");
        out
    }
}
