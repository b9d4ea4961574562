//! Tabular report files.
//!
//! A report is CSV preceded by `#` comment lines that identify it:
//!
//! ```text
//! # format: xtalk-report
//! # format_version: 1
//! # kind: loss
//! # tool_version: 0.1.0
//! # scenario_sha256: 3f2a...
//! row,user,tone,freq_hz,...
//! ```
//!
//! Floats are written in shortest round-trip form, so identical inputs give
//! byte-identical files.

use std::io::Write;

use crate::design::SweepRow;
use crate::error::{Error, Result};
use crate::monte_carlo::TrialReport;
use crate::rate::LossReport;

pub const REPORT_FORMAT: &str = "xtalk-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ReportMeta {
    pub kind: String,
    pub tool_version: String,
    pub scenario_sha256: Option<String>,
}

impl ReportMeta {
    pub fn new(kind: &str, tool_version: &str, scenario_sha256: Option<String>) -> Self {
        Self {
            kind: kind.to_string(),
            tool_version: tool_version.to_string(),
            scenario_sha256,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(x) => format!("{x}"),
            Cell::Int(x) => x.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u32> for Cell {
    fn from(x: u32) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map(Cell::Num).unwrap_or(Cell::Empty)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, mut out: W, meta: &ReportMeta) -> Result<()> {
        writeln!(out, "# format: {REPORT_FORMAT}")?;
        writeln!(out, "# format_version: {REPORT_VERSION}")?;
        writeln!(out, "# kind: {}", meta.kind)?;
        writeln!(out, "# tool_version: {}", meta.tool_version)?;
        writeln!(
            out,
            "# scenario_sha256: {}",
            meta.scenario_sha256.as_deref().unwrap_or("none")
        )?;
        let mut csv = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        csv.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            csv.write_record(row.iter().map(Cell::render)).map_err(csv_err)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn to_string(&self, meta: &ReportMeta) -> Result<String> {
        let mut buf = Vec::new();
        self.write(&mut buf, meta)?;
        String::from_utf8(buf).map_err(|e| Error::NumericalError(e.to_string()))
    }
}

/// One row per user and tone, then one band row per user.
pub fn loss_table(report: &LossReport) -> Table {
    let mut t = Table::new(&[
        "row", "user", "tone", "freq_hz", "rate", "rate_perturbed", "loss", "a", "q", "k", "eta",
    ]);
    for (u, tones) in report.users.iter().zip(&report.per_tone) {
        for (k, x) in tones.iter().enumerate() {
            let eta = (x.rate > 0.0).then(|| x.loss / x.rate);
            t.push(vec![
                "tone".into(),
                (*u).into(),
                k.into(),
                x.freq.into(),
                x.rate.into(),
                x.rate_perturbed.into(),
                x.loss.into(),
                x.a.into(),
                x.q.into(),
                x.k.into(),
                eta.into(),
            ]);
        }
    }
    for (u, b) in report.users.iter().zip(&report.band) {
        t.push(vec![
            "band".into(),
            (*u).into(),
            Cell::Empty,
            Cell::Empty,
            b.rate.into(),
            (b.rate - b.loss).into(),
            b.loss.into(),
            Cell::Empty,
            Cell::Empty,
            Cell::Empty,
            b.eta_opt().into(),
        ]);
    }
    t
}

/// Per-tone statistics and both band summaries for each word length.
pub fn trial_table(reports: &[TrialReport]) -> Table {
    let mut t = Table::new(&[
        "row", "d", "user", "tone", "freq_hz", "rate", "loss", "worst", "mean", "t_max", "eta",
    ]);
    for r in reports {
        for (u, cells) in r.users.iter().zip(&r.per_tone) {
            for (k, c) in cells.iter().enumerate() {
                t.push(vec![
                    "tone".into(),
                    r.d_bits.into(),
                    (*u).into(),
                    k.into(),
                    c.freq.into(),
                    c.rate.into(),
                    c.loss.into(),
                    c.worst.into(),
                    c.mean.into(),
                    c.t_max.into(),
                    c.eta().into(),
                ]);
            }
        }
    }
    for r in reports {
        for (label, band) in [("band_per_bin", &r.band_per_bin), ("band_per_trial", &r.band_per_trial)] {
            for (u, b) in r.users.iter().zip(band) {
                t.push(vec![
                    label.into(),
                    r.d_bits.into(),
                    (*u).into(),
                    Cell::Empty,
                    Cell::Empty,
                    b.rate.into(),
                    b.loss.into(),
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    b.eta_opt().into(),
                ]);
            }
        }
    }
    t
}

pub fn sweep_table(rows: &[SweepRow]) -> Table {
    let mut t = Table::new(&[
        "length_m", "alpha_ell", "gamma2", "rho_ell", "xi_ell", "floor_c", "zeta_ell", "d_real", "d_min", "bound", "error",
    ]);
    for r in rows {
        let mut row: Vec<Cell> = vec![
            r.length_m.into(),
            r.alpha_ell.into(),
            r.gamma2.into(),
            r.rho_ell.into(),
            r.xi_ell.into(),
        ];
        match &r.outcome {
            Ok(d) => row.extend([
                d.floor.into(),
                d.zeta.into(),
                d.d_real.into(),
                d.bits.into(),
                d.bound.into(),
                Cell::Empty,
            ]),
            Err(msg) => row.extend([
                Cell::Empty,
                Cell::Empty,
                Cell::Empty,
                Cell::Empty,
                Cell::Empty,
                Cell::Text(msg.clone()),
            ]),
        }
        t.push(row);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_quoting() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![Cell::Num(0.1), Cell::Text("x, y".into())]);
        t.push(vec![Cell::Int(3), Cell::Empty]);
        let s = t.to_string(&ReportMeta::new("test", "9.9.9", None)).unwrap();
        let expected = "# format: xtalk-report\n# format_version: 1\n# kind: test\n# tool_version: 9.9.9\n# scenario_sha256: none\na,b\n0.1,\"x, y\"\n3,\n";
        assert_eq!(s, expected);
    }
}
