//! Run reports (CSV and JSON) and binary checkpoints.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Entry, Precision, MAGIC, VERSION};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{CompressionSummary, EvalResult, MonitorEvent, StepRecord};

pub const CSV_HEADER: &str = "step,mu,l_loss_before,l_loss_after,c_distortion,mismatch,train_err,test_err";

/// Everything a run produced, in a form that serializes losslessly to JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// The configuration the run was started with.
    pub config: serde_json::Value,
    pub records: Vec<StepRecord>,
    pub converged: bool,
    pub stop_tol: f64,
    pub summary: Option<CompressionSummary>,
    /// Evaluation of the final compressed model.
    pub final_eval: Option<EvalResult>,
    pub monitor: Vec<MonitorEvent>,
    /// Set when the run stopped on an error.
    pub error: Option<String>,
}

impl RunReport {
    /// Steps strictly increase, and μ strictly increases after the init record.
    pub fn check_order(&self) -> Result<(), String> {
        for w in self.records.windows(2) {
            if w[1].step <= w[0].step {
                return Err(format!("step {} follows step {}", w[1].step, w[0].step));
            }
            if w[1].mu <= w[0].mu {
                return Err(format!("mu {} at step {} does not increase", w[1].mu, w[1].step));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// One row per record. `c_distortion` sums over tasks; errors are those of
    /// the compressed model; missing values are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let row = CsvRow::from(r);
            out.push_str(&row.to_line());
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReportFormat {
    Csv,
    Json,
}

pub fn emit_report(report: &RunReport, path: impl AsRef<Path>, format: ReportFormat) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    match format {
        ReportFormat::Csv => f.write_all(report.to_csv().as_bytes()),
        ReportFormat::Json => f.write_all(report.to_json().as_bytes()),
    }
}

/// A parsed CSV report row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsvRow {
    pub step: usize,
    pub mu: f64,
    pub l_loss_before: Option<f64>,
    pub l_loss_after: Option<f64>,
    pub c_distortion: f64,
    pub mismatch: f64,
    pub train_err: Option<f64>,
    pub test_err: Option<f64>,
}

impl From<&StepRecord> for CsvRow {
    fn from(r: &StepRecord) -> Self {
        Self {
            step: r.step,
            mu: r.mu,
            l_loss_before: r.l_loss_before,
            l_loss_after: r.l_loss_after,
            c_distortion: r.total_distortion(),
            mismatch: r.mismatch,
            train_err: r.compressed.train_error,
            test_err: r.compressed.test_error,
        }
    }
}

// `{:?}` prints the shortest string that parses back to the same f64.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

impl CsvRow {
    fn to_line(self) -> String {
        [
            self.step.to_string(),
            num(self.mu),
            opt(self.l_loss_before),
            opt(self.l_loss_after),
            num(self.c_distortion),
            num(self.mismatch),
            opt(self.train_err),
            opt(self.test_err),
        ]
        .join(",")
    }
}

/// Parses a report CSV; the header must match exactly.
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(format!("unexpected header {other:?}")),
    }
    let f = |s: &str, line: usize| s.parse::<f64>().map_err(|e| format!("line {line}: {s:?}: {e}"));
    let o = |s: &str, line: usize| if s.is_empty() { Ok(None) } else { f(s, line).map(Some) };
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let line = i + 2;
            let c: Vec<&str> = l.split(',').collect();
            if c.len() != 8 {
                return Err(format!("line {line}: expected 8 fields, got {}", c.len()));
            }
            Ok(CsvRow {
                step: c[0].parse().map_err(|e| format!("line {line}: step: {e}"))?,
                mu: f(c[1], line)?,
                l_loss_before: o(c[2], line)?,
                l_loss_after: o(c[3], line)?,
                c_distortion: f(c[4], line)?,
                mismatch: f(c[5], line)?,
                train_err: o(c[6], line)?,
                test_err: o(c[7], line)?,
            })
        })
        .collect()
}
