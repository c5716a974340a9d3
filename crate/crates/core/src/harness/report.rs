//! Experiment reports: CSV and JSON emission, reading them back, and
//! per-method summaries.
//!
//! CSV layout: a first line `# config: <json>` followed by a header row and
//! one row per trial, method and test set:
//!
//! ```text
//! trial,method,test_set,coverage,median_length,ess,infinite_count,n_test,n_calibration
//! ```
//!
//! Infinite lengths are written as `inf`. JSON layout is
//! `{"config": {..}, "trials": [{"trial", "ess", "methods": [..]}]}` with
//! infinite lengths written as `null`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::experiment::{ExperimentConfig, Method, TestSet, TrialReport};
use crate::error::{ConformalError, Result};

pub const CSV_HEADER: [&str; 9] = [
    "trial",
    "method",
    "test_set",
    "coverage",
    "median_length",
    "ess",
    "infinite_count",
    "n_test",
    "n_calibration",
];

const CONFIG_PREFIX: &str = "# config: ";

/// Serializes `+inf` as `null` and back.
pub mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = ConformalError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(ConformalError::InvalidInput(format!("unknown format '{other}'"))),
        }
    }
}

impl ReportFormat {
    /// Guesses the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialReport>,
}

/// One CSV data row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub trial: usize,
    pub method: Method,
    pub test_set: TestSet,
    pub coverage: f64,
    pub median_length: f64,
    pub ess: f64,
    pub infinite_count: usize,
    pub n_test: usize,
    pub n_calibration: usize,
}

pub fn rows(reports: &[TrialReport]) -> Vec<ReportRow> {
    reports
        .iter()
        .flat_map(|t| {
            t.methods.iter().map(move |m| ReportRow {
                trial: t.trial,
                method: m.method,
                test_set: m.test_set,
                coverage: m.coverage,
                median_length: m.median_length,
                ess: t.ess,
                infinite_count: m.infinite_count,
                n_test: m.n_test,
                n_calibration: m.n_calibration,
            })
        })
        .collect()
}

pub fn write_report<W: Write>(
    config: &ExperimentConfig,
    reports: &[TrialReport],
    format: ReportFormat,
    out: W,
) -> Result<()> {
    let mut out = BufWriter::new(out);
    match format {
        ReportFormat::Json => {
            let report = Report {
                config: config.clone(),
                trials: reports.to_vec(),
            };
            serde_json::to_writer_pretty(&mut out, &report)?;
            writeln!(out)?;
        }
        ReportFormat::Csv => {
            writeln!(out, "{CONFIG_PREFIX}{}", serde_json::to_string(config)?)?;
            {
                let mut w = csv::Writer::from_writer(&mut out);
                w.write_record(CSV_HEADER)?;
                for r in rows(reports) {
                    w.write_record([
                        r.trial.to_string(),
                        r.method.to_string(),
                        r.test_set.to_string(),
                        r.coverage.to_string(),
                        r.median_length.to_string(),
                        r.ess.to_string(),
                        r.infinite_count.to_string(),
                        r.n_test.to_string(),
                        r.n_calibration.to_string(),
                    ])?;
                }
                w.flush()?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn emit_report(
    config: &ExperimentConfig,
    reports: &[TrialReport],
    format: ReportFormat,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_report(config, reports, format, File::create(path)?)
}

fn parse_field<T: FromStr>(field: Option<&str>, row: usize, column: &str) -> Result<T> {
    let raw = field.ok_or_else(|| ConformalError::Ingest {
        row,
        column: column.into(),
        message: "missing field".into(),
    })?;
    raw.parse().map_err(|_| ConformalError::Ingest {
        row,
        column: column.into(),
        message: format!("cannot parse '{raw}'"),
    })
}

/// Reads a CSV report written by [`emit_report`].
pub fn read_report_csv(path: impl AsRef<Path>) -> Result<(ExperimentConfig, Vec<ReportRow>)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let config_json = first.trim_end().strip_prefix(CONFIG_PREFIX).ok_or_else(|| {
        ConformalError::InvalidInput("report does not start with a config line".into())
    })?;
    let config: ExperimentConfig = serde_json::from_str(config_json)?;
    let mut csv = csv::Reader::from_reader(reader);
    if csv.headers()?.iter().ne(CSV_HEADER) {
        return Err(ConformalError::InvalidInput("unexpected report header".into()));
    }
    let mut out = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let f = |j: usize| record.get(j);
        out.push(ReportRow {
            trial: parse_field(f(0), row, CSV_HEADER[0])?,
            method: parse_field(f(1), row, CSV_HEADER[1])?,
            test_set: parse_field(f(2), row, CSV_HEADER[2])?,
            coverage: parse_field(f(3), row, CSV_HEADER[3])?,
            median_length: parse_field(f(4), row, CSV_HEADER[4])?,
            ess: parse_field(f(5), row, CSV_HEADER[5])?,
            infinite_count: parse_field(f(6), row, CSV_HEADER[6])?,
            n_test: parse_field(f(7), row, CSV_HEADER[7])?,
            n_calibration: parse_field(f(8), row, CSV_HEADER[8])?,
        });
    }
    Ok((config, out))
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<Report> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Across-trial statistics for one method on one test set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub test_set: TestSet,
    pub trials: usize,
    pub mean_coverage: f64,
    pub sd_coverage: f64,
    /// Mean over trials of the median lengths; `+inf` if any median is.
    pub mean_median_length: f64,
    pub infinite_median_trials: usize,
}

impl MethodSummary {
    /// Standard error of `mean_coverage`.
    pub fn stderr(&self) -> f64 {
        self.sd_coverage / (self.trials as f64).sqrt()
    }
}

pub fn summarize(reports: &[TrialReport]) -> Vec<MethodSummary> {
    let mut groups: BTreeMap<(Method, TestSet), Vec<(f64, f64)>> = BTreeMap::new();
    for t in reports {
        for m in &t.methods {
            groups
                .entry((m.method, m.test_set))
                .or_default()
                .push((m.coverage, m.median_length));
        }
    }
    groups
        .into_iter()
        .map(|((method, test_set), vals)| {
            let k = vals.len() as f64;
            let mean = vals.iter().map(|v| v.0).sum::<f64>() / k;
            let var = if vals.len() > 1 {
                vals.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            MethodSummary {
                method,
                test_set,
                trials: vals.len(),
                mean_coverage: mean,
                sd_coverage: var.sqrt(),
                mean_median_length: vals.iter().map(|v| v.1).sum::<f64>() / k,
                infinite_median_trials: vals.iter().filter(|v| v.1.is_infinite()).count(),
            }
        })
        .collect()
}
