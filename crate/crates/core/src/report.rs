//! Report files.
//!
//! A study directory holds:
//!
//! * `coverage.csv`: scenario_id, n, mean_fn, x_dist, noise, coefficient,
//!   method, level, coverage, mc_se, avg_length, failures, replications,
//!   covered, scenario_number
//! * `summary.csv`: method, mad, cells
//! * `failed_cells.csv`: scenario_id, reason
//! * `replications.csv` (optional log): one row per interval with
//!   scenario_id, n, mean_fn, x_dist, noise, replication, coefficient_index,
//!   coefficient, method, level, truth, estimate, lower, upper, outcome, error
//!
//! Floats are written in shortest round-trip form, so a report rebuilt from
//! the log is identical to the original.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{build_report, CellInfo, CoverageReport, Outcome, ReplicationRecord};

pub const COVERAGE_FILE: &str = "coverage.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const FAILED_FILE: &str = "failed_cells.csv";
pub const LOG_FILE: &str = "replications.csv";

#[derive(Serialize)]
struct CoverageRow<'a> {
    scenario_id: usize,
    n: usize,
    mean_fn: &'a str,
    x_dist: &'a str,
    noise: &'a str,
    coefficient: &'a str,
    method: &'a str,
    level: f64,
    coverage: f64,
    mc_se: f64,
    avg_length: f64,
    failures: usize,
    replications: usize,
    covered: usize,
    scenario_number: usize,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    method: &'a str,
    mad: f64,
    cells: usize,
}

#[derive(Serialize)]
struct FailedRow<'a> {
    scenario_id: usize,
    reason: &'a str,
}

#[derive(Serialize, Deserialize)]
struct LogRow {
    scenario_id: usize,
    n: usize,
    mean_fn: String,
    x_dist: String,
    noise: String,
    replication: usize,
    coefficient_index: usize,
    coefficient: String,
    method: String,
    level: f64,
    truth: f64,
    estimate: f64,
    lower: f64,
    upper: f64,
    outcome: Outcome,
    error: String,
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Io(e.to_string())
}

/// CSV bytes with an explicit header, so empty tables keep their schema.
fn to_csv<T: Serialize>(header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(io_err)?;
    for r in rows {
        w.serialize(r).map_err(io_err)?;
    }
    w.into_inner().map_err(io_err)
}

/// Aggregate table.
pub fn coverage_csv(report: &CoverageReport) -> Result<Vec<u8>> {
    let missing = CellInfo { id: 0, n: 0, mean_fn: String::new(), x_dist: String::new(), noise: String::new() };
    to_csv(&COVERAGE_HEADER, report.coverage.iter().map(|c| {
        let info = report.info(c.cell).unwrap_or(&missing);
        CoverageRow {
            scenario_id: c.cell,
            n: info.n,
            mean_fn: &info.mean_fn,
            x_dist: &info.x_dist,
            noise: &info.noise,
            coefficient: &c.coefficient_name,
            method: c.method.name(),
            level: c.target_level,
            coverage: c.coverage,
            mc_se: c.mc_se,
            avg_length: c.avg_length,
            failures: c.failures,
            replications: c.replications,
            covered: c.covered,
            scenario_number: c.scenario_number,
        }
    }))
}

/// Per-method mean absolute deviation from the target level.
pub fn summary_csv(report: &CoverageReport) -> Result<Vec<u8>> {
    to_csv(&["method", "mad", "cells"], report.mad.iter().map(|&(m, mad)| SummaryRow {
        method: m.name(),
        mad,
        cells: report.coverage.iter().filter(|c| c.method == m && c.replications > 0).count(),
    }))
}

pub fn failed_csv(report: &CoverageReport) -> Result<Vec<u8>> {
    to_csv(
        &["scenario_id", "reason"],
        report.failed_cells.iter().map(|(id, reason)| FailedRow { scenario_id: *id, reason }),
    )
}

/// Per-replication log.
pub fn log_csv(report: &CoverageReport) -> Result<Vec<u8>> {
    let rows = report
        .records
        .iter()
        .map(|r| {
            let info = report
                .info(r.cell)
                .ok_or_else(|| Error::InvalidConfig(format!("record for unknown cell {}", r.cell)))?;
            Ok(LogRow {
                scenario_id: r.cell,
                n: info.n,
                mean_fn: info.mean_fn.clone(),
                x_dist: info.x_dist.clone(),
                noise: info.noise.clone(),
                replication: r.replication,
                coefficient_index: r.coefficient,
                coefficient: r.coefficient_name.clone(),
                method: r.method.name().to_string(),
                level: r.level,
                truth: r.truth,
                estimate: r.estimate,
                lower: r.lower,
                upper: r.upper,
                outcome: r.outcome,
                error: r.error.clone().unwrap_or_default(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    to_csv(&LOG_HEADER, rows)
}

const COVERAGE_HEADER: [&str; 15] = [
    "scenario_id",
    "n",
    "mean_fn",
    "x_dist",
    "noise",
    "coefficient",
    "method",
    "level",
    "coverage",
    "mc_se",
    "avg_length",
    "failures",
    "replications",
    "covered",
    "scenario_number",
];

const LOG_HEADER: [&str; 16] = [
    "scenario_id",
    "n",
    "mean_fn",
    "x_dist",
    "noise",
    "replication",
    "coefficient_index",
    "coefficient",
    "method",
    "level",
    "truth",
    "estimate",
    "lower",
    "upper",
    "outcome",
    "error",
];

/// Writes the report files into `dir`, creating it if needed.
pub fn write_report(dir: &Path, report: &CoverageReport, with_log: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err)?;
    let put = |name: &str, bytes: Vec<u8>| -> Result<()> {
        fs::File::create(dir.join(name)).and_then(|mut f| f.write_all(&bytes)).map_err(io_err)
    };
    put(COVERAGE_FILE, coverage_csv(report)?)?;
    put(SUMMARY_FILE, summary_csv(report)?)?;
    put(FAILED_FILE, failed_csv(report)?)?;
    if with_log {
        put(LOG_FILE, log_csv(report)?)?;
    }
    Ok(())
}

/// Rebuilds a report from a per-replication log.
pub fn report_from_log<R: Read>(reader: R) -> Result<CoverageReport> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut cells: Vec<CellInfo> = Vec::new();
    let mut records = Vec::new();
    for (i, row) in rdr.deserialize::<LogRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse { row: i + 2, column: String::new(), message: e.to_string() })?;
        let method = row.method.parse().map_err(|_| Error::Parse {
            row: i + 2,
            column: "method".into(),
            message: format!("unknown method `{}`", row.method),
        })?;
        if !cells.iter().any(|c| c.id == row.scenario_id) {
            cells.push(CellInfo {
                id: row.scenario_id,
                n: row.n,
                mean_fn: row.mean_fn,
                x_dist: row.x_dist,
                noise: row.noise,
            });
        }
        records.push(ReplicationRecord {
            cell: row.scenario_id,
            replication: row.replication,
            coefficient: row.coefficient_index,
            coefficient_name: row.coefficient,
            method,
            level: row.level,
            truth: row.truth,
            estimate: row.estimate,
            lower: row.lower,
            upper: row.upper,
            outcome: row.outcome,
            error: (!row.error.is_empty()).then_some(row.error),
        });
    }
    let level = records.first().map_or(f64::NAN, |r| r.level);
    Ok(build_report(level, cells, records, Vec::new()))
}
