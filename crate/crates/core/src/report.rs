//! Scenario document ingestion and metric report / chart data emission.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{RunResult, RunStatus};
use crate::model::{self, Scenario, ValidationError};

/// Report column headers, in order.
pub const COLUMNS: [&str; 4] = [
    "Distributed Cloud details(VMs)",
    "Capacity(Dynamically varying) using space shared",
    "Estimated finish time(in milisec)",
    "Total processing capacity of Cloud host",
];

const NOTES: [&str; 3] = [
    "space shared capacity: mean over every host that held a VM of sum(cap(i))/np, in MIPS",
    "estimated finish time: makespan from first submission to last cloudlet completion, in milliseconds",
    "total processing capacity: sum(cap(i))/max(sum(cores), np) of the host with the highest peak concurrent core demand, in MIPS",
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("malformed scenario document: {0}")]
    Malformed(String),
    #[error("invalid scenario:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ValidationError>),
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no report rows")]
    Empty,
    #[error("unknown report format {0:?} (expected csv or json)")]
    UnknownFormat(String),
    #[error("report header mismatch: {0}")]
    Header(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("bad number {0:?}")]
    Number(String),
}

/// Parses and validates a scenario document. Every validation problem is
/// reported at once.
pub fn parse_scenario(document: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = serde_json::from_str(document).map_err(|e| ScenarioError::Malformed(e.to_string()))?;
    let errors = model::validate_scenario(&scenario);
    if errors.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError::Invalid(errors))
    }
}

pub fn serialize_scenario(scenario: &Scenario) -> String {
    // Plain data with string keys; serialization cannot fail.
    serde_json::to_string_pretty(scenario).unwrap_or_default()
}

/// One row of the metric report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// `"N tasks in M VMs"`.
    pub label: String,
    pub space_shared_capacity: f64,
    pub finish_time_ms: f64,
    pub time_shared_capacity: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(ReportError::UnknownFormat(s.to_string())),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub status: RunStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ReportDocument {
    columns: Vec<String>,
    notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    runs: Vec<RunSummary>,
    rows: Vec<ReportRow>,
}

/// Renders report rows. CSV output has exactly the four column headers and
/// one line per row; JSON additionally carries the metric definitions.
pub fn write_report(rows: &[ReportRow], format: ReportFormat) -> Result<String, ReportError> {
    render(rows, &[], format)
}

/// Same as [`write_report`] but records scenario, seed and status of each
/// run in the JSON header.
pub fn write_results_report(results: &[RunResult], format: ReportFormat) -> Result<String, ReportError> {
    let rows: Vec<ReportRow> = results.iter().map(|r| r.metrics.clone()).collect();
    let runs: Vec<RunSummary> = results
        .iter()
        .map(|r| RunSummary {
            scenario: r.scenario.clone(),
            seed: r.seed,
            status: r.status,
        })
        .collect();
    render(&rows, &runs, format)
}

fn render(rows: &[ReportRow], runs: &[RunSummary], format: ReportFormat) -> Result<String, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    match format {
        ReportFormat::Csv => {
            let mut writer = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            writer.write_record(COLUMNS)?;
            for row in rows {
                writer.write_record([
                    row.label.clone(),
                    row.space_shared_capacity.to_string(),
                    row.finish_time_ms.to_string(),
                    row.time_shared_capacity.to_string(),
                ])?;
            }
            let bytes = writer
                .into_inner()
                .map_err(|e| ReportError::Csv(e.into_error().into()))?;
            Ok(String::from_utf8_lossy(&bytes).into_owned())
        }
        ReportFormat::Json => {
            let doc = ReportDocument {
                columns: COLUMNS.iter().map(|c| c.to_string()).collect(),
                notes: NOTES.iter().map(|n| n.to_string()).collect(),
                runs: runs.to_vec(),
                rows: rows.to_vec(),
            };
            let mut out = serde_json::to_string_pretty(&doc)?;
            out.push('\n');
            Ok(out)
        }
    }
}

fn number(cell: &str) -> Result<f64, ReportError> {
    cell.parse().map_err(|_| ReportError::Number(cell.to_string()))
}

/// Reads rows back from a rendered report.
pub fn parse_report(document: &str, format: ReportFormat) -> Result<Vec<ReportRow>, ReportError> {
    match format {
        ReportFormat::Csv => {
            let mut reader = csv::Reader::from_reader(document.as_bytes());
            let header = reader.headers()?.clone();
            if header.iter().ne(COLUMNS) {
                return Err(ReportError::Header(header.iter().collect::<Vec<_>>().join(",")));
            }
            reader
                .records()
                .map(|rec| {
                    let rec = rec?;
                    Ok(ReportRow {
                        label: rec[0].to_string(),
                        space_shared_capacity: number(&rec[1])?,
                        finish_time_ms: number(&rec[2])?,
                        time_shared_capacity: number(&rec[3])?,
                    })
                })
                .collect()
        }
        ReportFormat::Json => {
            let doc: ReportDocument = serde_json::from_str(document)?;
            if doc.columns.iter().map(String::as_str).ne(COLUMNS) {
                return Err(ReportError::Header(doc.columns.join(",")));
            }
            Ok(doc.rows)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

/// Stacked-bar data: one category per report row, one series per metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartData {
    pub categories: Vec<String>,
    pub series: Vec<Series>,
}

impl ChartData {
    /// Height of the stacked bar for category `i`.
    pub fn stack_total(&self, i: usize) -> f64 {
        self.series.iter().map(|s| s.values[i]).sum()
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).unwrap_or_default();
        out.push('\n');
        out
    }
}

pub fn write_chart_data(rows: &[ReportRow]) -> Result<ChartData, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let metric = |name: &str, f: fn(&ReportRow) -> f64| Series {
        name: name.to_string(),
        values: rows.iter().map(f).collect(),
    };
    Ok(ChartData {
        categories: rows.iter().map(|r| r.label.clone()).collect(),
        series: vec![
            metric(COLUMNS[1], |r| r.space_shared_capacity),
            metric(COLUMNS[2], |r| r.finish_time_ms),
            metric(COLUMNS[3], |r| r.time_shared_capacity),
        ],
    })
}
