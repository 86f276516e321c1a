//! Append-only text run logs. Lines starting with `#` are header, section
//! and summary records; everything else is a whitespace-separated table row
//! under the most recent `# columns:` line. Floats are written in shortest
//! round-trip form, so the log carries full double precision.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fourpi_core::irgnm::IrgnmTrace;
use fourpi_core::tikhonov::KktReport;

use crate::error::{io, Result};

pub const TRACE_COLUMNS: [&str; 10] = [
    "n",
    "alpha",
    "residual",
    "obj_error",
    "phase_error",
    "total_error",
    "theta",
    "ssn_iters",
    "cg_iters",
    "inner_converged",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    F(f64),
    U(usize),
    B(bool),
    Missing,
}

impl Cell {
    fn render(self, out: &mut String) {
        let _ = match self {
            Cell::F(v) => write!(out, "{v:e}"),
            Cell::U(v) => write!(out, "{v}"),
            Cell::B(v) => write!(out, "{}", v as u8),
            Cell::Missing => write!(out, "-"),
        };
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::F)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::U(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::B(v)
    }
}

pub struct RunLog {
    path: PathBuf,
    out: BufWriter<File>,
    failed: Vec<String>,
    checks: usize,
}

impl RunLog {
    pub fn create(path: &Path, command: &str, config_echo: &str) -> Result<Self> {
        let file = io(path, File::create(path))?;
        let mut log = Self { path: path.to_path_buf(), out: BufWriter::new(file), failed: Vec::new(), checks: 0 };
        log.line(&format!("# fourpi run log v1\n# command: {command}\n# config: {config_echo}"))?;
        Ok(log)
    }

    fn line(&mut self, text: &str) -> Result<()> {
        io(&self.path, writeln!(self.out, "{text}"))
    }

    pub fn section(&mut self, name: &str, columns: &[&str]) -> Result<()> {
        self.line(&format!("# section: {name}\n# columns: {}", columns.join(" ")))
    }

    pub fn row(&mut self, cells: &[Cell]) -> Result<()> {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            c.render(&mut s);
        }
        self.line(&s)
    }

    pub fn metric(&mut self, name: &str, value: impl Into<Cell>) -> Result<()> {
        let mut s = format!("# metric: {name} ");
        value.into().render(&mut s);
        self.line(&s)
    }

    pub fn note(&mut self, name: &str, text: &str) -> Result<()> {
        self.line(&format!("# {name}: {text}"))
    }

    /// Records an acceptance-tagged check; failures make the run fail.
    pub fn check(&mut self, name: &str, passed: bool, detail: &str) -> Result<bool> {
        self.checks += 1;
        if !passed {
            self.failed.push(name.to_string());
        }
        self.line(&format!("# check: {name} {} {detail}", if passed { "PASS" } else { "FAIL" }))?;
        Ok(passed)
    }

    pub fn error(&mut self, message: &str) -> Result<()> {
        self.failed.push("error".into());
        self.line(&format!("# error: {}", message.replace('\n', " ")))
    }

    pub fn failed_checks(&self) -> &[String] {
        &self.failed
    }

    pub fn trace(&mut self, name: &str, trace: &IrgnmTrace) -> Result<()> {
        self.section(name, &TRACE_COLUMNS)?;
        for r in &trace.records {
            let e = r.errors;
            self.row(&[
                r.n.into(),
                r.alpha.into(),
                r.residual.into(),
                e.and_then(|e| e.object).into(),
                e.and_then(|e| e.phase).into(),
                e.map(|e| e.total).into(),
                r.theta.into(),
                r.ssn_iters.into(),
                r.cg_iters.into(),
                r.inner_converged.into(),
            ])?;
        }
        self.metric("stopping_index", trace.stopping_index)?;
        self.note("stop_reason", &format!("{:?}", trace.reason))?;
        self.metric("inner_failures", trace.inner_failures)
    }

    pub fn kkt(&mut self, name: &str, r: &KktReport) -> Result<()> {
        self.note(
            "kkt",
            &format!(
                "{name} stationarity={:e} complementarity={:e} feasibility={:e} dual={:e} outer={} cg={} active={} objective={:e} converged={}",
                r.stationarity_residual,
                r.complementarity_residual,
                r.feasibility_violation,
                r.dual_violation,
                r.outer_iters,
                r.total_cg_iters,
                r.active_count,
                r.objective,
                r.converged as u8
            ),
        )
    }

    pub fn finish(mut self) -> Result<Vec<String>> {
        let status = if self.failed.is_empty() {
            format!("# status: ok ({} checks)", self.checks)
        } else {
            format!("# status: failed ({})", self.failed.join(", "))
        };
        self.line(&status)?;
        io(&self.path, self.out.flush())?;
        Ok(self.failed)
    }
}

/// Parses the rows of one section back into floats ("-" becomes NaN).
pub fn read_section(text: &str, name: &str) -> Option<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines().skip_while(|l| *l != format!("# section: {name}"));
    lines.next()?;
    let columns = lines.next()?.strip_prefix("# columns: ")?.split(' ').map(String::from).collect();
    let rows = lines
        .take_while(|l| !l.starts_with('#'))
        .map(|l| l.split(' ').map(|c| if c == "-" { f64::NAN } else { c.parse().unwrap_or(f64::NAN) }).collect())
        .collect();
    Some((columns, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_text() {
        let v = [0.1 + 0.2, 1e-300, -7.25e17, f64::MIN_POSITIVE];
        let mut s = String::new();
        for x in v {
            s.clear();
            Cell::F(x).render(&mut s);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn sections_parse_back() {
        let text = "# x\n# section: t\n# columns: a b\n1e0 -\n2.5e0 3e0\n# metric: k 1\n";
        let (cols, rows) = read_section(text, "t").unwrap();
        assert_eq!(cols, ["a", "b"]);
        assert_eq!(rows.len(), 2);
        assert!(rows[0][1].is_nan());
        assert_eq!(rows[1], [2.5, 3.0]);
    }
}
