//! JSON and per-file CSV forms of a [`SimResult`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{PerFileResult, SimResult, SIM_RESULT_SCHEMA, SIM_RESULT_VERSION};
use crate::agent::FileOutcome;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("input is empty")]
    Empty,
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown schema `{schema}` version {version}")]
    Schema { schema: String, version: u32 },
    #[error("CSV line {line}: {reason}")]
    Csv { line: u64, reason: String },
}

pub const CSV_HEADER: [&str; 7] = [
    "accession",
    "worker",
    "attempts",
    "download_s",
    "convert_s",
    "align_s",
    "outcome",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub accession: String,
    pub worker: u32,
    pub attempts: u32,
    pub download_s: f64,
    pub convert_s: f64,
    pub align_s: f64,
    pub outcome: FileOutcome,
}

impl From<&PerFileResult> for CsvRow {
    fn from(f: &PerFileResult) -> Self {
        CsvRow {
            accession: f.accession.clone(),
            worker: f.worker.0,
            attempts: f.attempts,
            download_s: f.stage_times.download_s,
            convert_s: f.stage_times.convert_s,
            align_s: f.stage_times.align_s,
            outcome: f.outcome,
        }
    }
}

pub fn to_json(result: &SimResult) -> String {
    let mut s = serde_json::to_string_pretty(result).expect("result serializes");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> Result<SimResult, ExportError> {
    if text.trim().is_empty() {
        return Err(ExportError::Empty);
    }
    #[derive(Deserialize)]
    struct Tag {
        schema: Option<String>,
        schema_version: Option<u32>,
    }
    let tag: Tag = serde_json::from_str(text)?;
    let schema = tag.schema.unwrap_or_default();
    let version = tag.schema_version.unwrap_or(0);
    if schema != SIM_RESULT_SCHEMA || version != SIM_RESULT_VERSION {
        return Err(ExportError::Schema { schema, version });
    }
    Ok(serde_json::from_str(text)?)
}

pub fn rows(result: &SimResult) -> Vec<CsvRow> {
    result.per_file.iter().map(CsvRow::from).collect()
}

pub fn render_csv(rows: &[CsvRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(CSV_HEADER).expect("in-memory write");
    }
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, ExportError> {
    if text.trim().is_empty() {
        return Err(ExportError::Empty);
    }
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| ExportError::Csv {
        line: 1,
        reason: e.to_string(),
    })?;
    if header.iter().ne(CSV_HEADER) {
        return Err(ExportError::Csv {
            line: 1,
            reason: format!("expected header `{}`", CSV_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in r.deserialize::<CsvRow>() {
        let row = rec.map_err(|e| ExportError::Csv {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            reason: e.to_string(),
        })?;
        out.push(row);
    }
    Ok(out)
}
