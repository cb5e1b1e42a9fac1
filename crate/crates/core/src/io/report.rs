use std::path::Path;

use super::weights::write_atomic;
use crate::error::{Error, Result};
use crate::eval::EvalReport;

pub const CSV_HEADER: &str = "algorithm,accuracy,precision,recall,f1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Jsonl,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "jsonl" => Ok(ReportFormat::Jsonl),
            _ => Err(Error::usage(format!("unknown report format {s:?} (csv or jsonl)"))),
        }
    }
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for r in &report.rows {
                let m = &r.metrics;
                out.push_str(&format!(
                    "{},{:.6},{:.6},{:.6},{:.6}\n",
                    r.label, m.accuracy, m.precision, m.recall, m.f1
                ));
            }
        }
        ReportFormat::Jsonl => {
            for r in &report.rows {
                out.push_str(&serde_json::to_string(r).expect("plain data serializes"));
                out.push('\n');
            }
        }
    }
    out
}

pub fn write_report(report: &EvalReport, format: ReportFormat, path: &Path) -> Result<()> {
    write_atomic(path, render_report(report, format).as_bytes())
}

/// One parsed csv row: label and the four metrics.
pub type CsvRow = (String, [f64; 4]);

pub fn parse_report_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Data("report csv: missing header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Data(format!("report csv line {}: {line:?}", i + 2));
            let mut parts = line.rsplitn(5, ',');
            let mut vals = [0f64; 4];
            for v in vals.iter_mut().rev() {
                *v = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            }
            Ok((parts.next().ok_or_else(bad)?.to_string(), vals))
        })
        .collect()
}
