//! CSV / Markdown rendering of experiment results and plot-data files.
//!
//! Floats are written with 17 significant digits so that every value parses
//! back to the identical binary64; failures are the literal `NaN`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{PerformanceProfile, SweepCurve, Table1Row};
use crate::oracle::ErrorReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Md,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Md => "md",
        }
    }
}

/// Round-trippable decimal rendering.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

/// A rectangular table of already-rendered cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv encoding: {e}"));
        w.write_record(&self.headers).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row).map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidArgument(format!("csv encoding: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
        out.push_str(&line(&self.headers));
        let _ = writeln!(out, "|{}", "---|".repeat(self.headers.len()));
        for row in &self.rows {
            out.push_str(&line(row));
        }
        out
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Md => Ok(self.to_markdown()),
        }
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Two-column whitespace-separated plot data.
pub fn points_text(points: &[(f64, f64)]) -> String {
    points
        .iter()
        .map(|(x, y)| format!("{} {}\n", fmt_float(*x), fmt_float(*y)))
        .collect()
}

fn report_cells(r: &ErrorReport) -> [String; 4] {
    [r.dp1, r.dp1_prime, r.dloglf, r.dloglg].map(fmt_float)
}

pub fn table1_table(rows: &[Table1Row]) -> Table {
    let mut t = Table::new([
        "delta",
        "cond_Re1",
        "conventional_dP1",
        "conventional_dP1_prime",
        "conventional_dLogLF",
        "conventional_dLogLG",
        "square_root_dP1",
        "square_root_dP1_prime",
        "square_root_dLogLF",
        "square_root_dLogLG",
    ]);
    for r in rows {
        let mut cells = vec![fmt_float(r.delta), fmt_float(r.cond_re1)];
        cells.extend(report_cells(&r.conventional));
        cells.extend(report_cells(&r.square_root));
        t.push(cells);
    }
    t
}

pub fn sweep_table(curve: &SweepCurve) -> Table {
    let mut headers = vec!["tau".to_string()];
    headers.extend(
        curve
            .methods
            .iter()
            .map(|m| format!("LogLF_{}", m.name().replace('-', "_"))),
    );
    headers.extend(
        curve
            .methods
            .iter()
            .map(|m| format!("LogLG_{}", m.name().replace('-', "_"))),
    );
    let mut t = Table::new(headers);
    for (j, tau) in curve.tau.iter().enumerate() {
        let mut cells = vec![fmt_float(*tau)];
        cells.extend(curve.loglik.iter().map(|v| fmt_float(v[j])));
        cells.extend(curve.gradient.iter().map(|v| fmt_float(v[j])));
        t.push(cells);
    }
    t
}

pub fn profile_table(profile: &PerformanceProfile) -> Table {
    let mut headers = vec!["problem".to_string()];
    headers.extend(
        profile
            .algorithms
            .iter()
            .map(|a| format!("t_{}", a.replace('-', "_"))),
    );
    headers.extend(
        profile
            .algorithms
            .iter()
            .map(|a| format!("r_{}", a.replace('-', "_"))),
    );
    let mut t = Table::new(headers);
    for (p, name) in profile.problems.iter().enumerate() {
        let mut cells = vec![name.clone()];
        cells.extend(profile.measures[p].iter().map(|v| fmt_float(*v)));
        cells.extend(profile.ratios[p].iter().map(|v| fmt_float(*v)));
        t.push(cells);
    }
    t
}

fn file_stem(name: &str) -> String {
    name.replace('-', "_")
}

pub fn emit_table1(rows: &[Table1Row], format: Format, dir: &Path) -> Result<Vec<PathBuf>> {
    let path = dir.join(format!("table1.{}", format.extension()));
    write_file(&path, &table1_table(rows).render(format)?)?;
    Ok(vec![path])
}

/// The curve table plus `(τ, value)` files per method.
pub fn emit_sweep(curve: &SweepCurve, format: Format, dir: &Path) -> Result<Vec<PathBuf>> {
    let table = dir.join(format!("example1_sweep.{}", format.extension()));
    write_file(&table, &sweep_table(curve).render(format)?)?;
    let mut written = vec![table];
    for (a, m) in curve.methods.iter().enumerate() {
        for (label, values) in [("loglf", &curve.loglik[a]), ("loglg", &curve.gradient[a])] {
            let pts: Vec<_> = curve
                .tau
                .iter()
                .copied()
                .zip(values.iter().copied())
                .collect();
            let path = dir.join(format!("{label}_{}.dat", file_stem(m.name())));
            write_file(&path, &points_text(&pts))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// The per-problem table plus `(μ, φ)` step points per algorithm.
pub fn emit_profile(
    profile: &PerformanceProfile,
    format: Format,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let table = dir.join(format!("perf_profile.{}", format.extension()));
    write_file(&table, &profile_table(profile).render(format)?)?;
    let mut written = vec![table];
    for (a, name) in profile.algorithms.iter().enumerate() {
        let path = dir.join(format!("profile_{}.dat", file_stem(name)));
        write_file(&path, &points_text(&profile.points(a)))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(failed: bool) -> Table1Row {
        let rep = ErrorReport {
            dp1: if failed { f64::NAN } else { 1.0 / 3.0 },
            dp1_prime: 2e-300,
            dloglf: 0.1,
            dloglg: -7.25e12,
            failed,
        };
        Table1Row {
            delta: 1e-6,
            cond_re1: f64::INFINITY,
            conventional: rep,
            square_root: rep,
            oracle_failure: None,
        }
    }

    #[test]
    fn float_rendering_round_trips() {
        for x in [
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            6.02214076e23,
            f64::MIN_POSITIVE,
            f64::MAX,
        ] {
            assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_float(f64::NAN), "NaN");
        assert_eq!(
            fmt_float(f64::INFINITY).parse::<f64>().unwrap(),
            f64::INFINITY
        );
    }

    #[test]
    fn empty_table_is_header_only() {
        let csv = table1_table(&[]).to_csv().unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("delta,cond_Re1,"));
    }

    #[test]
    fn failure_renders_nan_and_values_round_trip() {
        let csv = table1_table(&[row(true), row(false)]).to_csv().unwrap();
        let mut rd = csv::Reader::from_reader(csv.as_bytes());
        let recs: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(&recs[0][2], "NaN");
        assert_eq!(recs[1][2].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(recs[1][3].parse::<f64>().unwrap(), 2e-300);
        assert_eq!(recs[1][5].parse::<f64>().unwrap(), -7.25e12);
    }

    #[test]
    fn markdown_shape() {
        let md = table1_table(&[row(false)]).to_markdown();
        let lines: Vec<_> = md.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1].matches("---").count(), 10);
    }

    #[test]
    fn points_are_two_columns() {
        let s = points_text(&[(1.0, 0.5), (2.0, 1.0)]);
        assert!(s.lines().all(|l| l.split(' ').count() == 2));
    }
}
