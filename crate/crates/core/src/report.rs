//! Loads any artifact the tool writes and renders it as JSON, CSV or a
//! plain-text table.
//!
//! Accepted inputs: a simulation result, a summary, a run journal, or a
//! per-file CSV. The kind is recognised from the `schema` tag (or the CSV
//! header), never from the file name.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::agent::{FileOutcome, StageTimes};
use crate::dispatcher::{journal, summarize_state, DispatchError, JOURNAL_SCHEMA};
use crate::sim::export::{self, CsvRow, ExportError, CSV_HEADER};
use crate::sim::summary::{align_share, outcome_counts, summarize, StageHours, Summary, SUMMARY_SCHEMA, SUMMARY_VERSION};
use crate::sim::SIM_RESULT_SCHEMA;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("input is empty")]
    Empty,
    #[error("unknown schema `{schema}` version {version}")]
    Schema { schema: String, version: u32 },
    #[error("input is neither JSON with a schema tag nor a per-file CSV")]
    Unrecognized,
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Journal(#[from] journal::JournalError),
    #[error(transparent)]
    State(#[from] DispatchError),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0} output needs a campaign summary; a per-file CSV only has rows")]
    NeedsSummary(Format),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Table,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "table" => Ok(Format::Table),
            other => Err(format!("unknown format `{other}` (json, csv, table)")),
        }
    }
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Table => "table",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    SimResult,
    Summary,
    Journal,
    Csv,
}

/// What could be recovered from an input.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub kind: InputKind,
    pub summary: Option<Summary>,
    pub rows: Vec<CsvRow>,
}

#[derive(serde::Deserialize)]
struct Tag {
    #[serde(default)]
    schema: String,
    #[serde(default, alias = "version")]
    schema_version: u32,
}

pub fn load(text: &str) -> Result<Report, ReportError> {
    let trimmed = text.trim_start();
    if trimmed.is_empty() {
        return Err(ReportError::Empty);
    }
    if !trimmed.starts_with('{') {
        let first = trimmed.lines().next().unwrap_or_default();
        if first.split(',').map(str::trim).eq(CSV_HEADER) {
            return Ok(Report {
                kind: InputKind::Csv,
                summary: None,
                rows: export::parse_csv(text)?,
            });
        }
        return Err(ReportError::Unrecognized);
    }
    // A journal is JSON lines; its first line alone carries the tag.
    let first = trimmed.lines().next().unwrap_or_default();
    if let Ok(tag) = serde_json::from_str::<Tag>(first) {
        if tag.schema == JOURNAL_SCHEMA {
            return load_journal(text);
        }
    }
    let tag: Tag = serde_json::from_str(text)?;
    match tag.schema.as_str() {
        SIM_RESULT_SCHEMA => {
            let result = export::from_json(text)?;
            Ok(Report {
                kind: InputKind::SimResult,
                rows: export::rows(&result),
                summary: Some(summarize(&result)),
            })
        }
        SUMMARY_SCHEMA if tag.schema_version == SUMMARY_VERSION => Ok(Report {
            kind: InputKind::Summary,
            summary: Some(serde_json::from_str(text)?),
            rows: Vec::new(),
        }),
        _ => Err(ReportError::Schema {
            schema: tag.schema,
            version: tag.schema_version,
        }),
    }
}

fn load_journal(text: &str) -> Result<Report, ReportError> {
    let parsed = journal::parse(text)?;
    let state = journal::replay(&parsed)?;
    let summary = summarize_state(&state, &parsed.header)?;
    let rows = state
        .files
        .iter()
        .filter_map(|f| {
            Some(CsvRow {
                accession: f.accession.clone(),
                worker: f.worker_id?.0,
                attempts: f.attempts,
                download_s: f.stage_times.download_s,
                convert_s: f.stage_times.convert_s,
                align_s: f.stage_times.align_s,
                outcome: f.status.outcome()?,
            })
        })
        .collect();
    Ok(Report {
        kind: InputKind::Journal,
        summary: Some(summary),
        rows,
    })
}

impl Report {
    pub fn render(&self, format: Format) -> Result<String, ReportError> {
        match (format, &self.summary) {
            (Format::Csv, _) => Ok(export::render_csv(&self.rows)),
            (Format::Json, Some(s)) => {
                let mut out = serde_json::to_string_pretty(s)?;
                out.push('\n');
                Ok(out)
            }
            (Format::Table, Some(s)) => Ok(s.render_table()),
            (Format::Table, None) => Ok(rows_table(&self.rows)),
            (Format::Json, None) => Err(ReportError::NeedsSummary(format)),
        }
    }
}

/// Outcome counts and stage shares recoverable from per-file rows alone.
pub fn rows_table(rows: &[CsvRow]) -> String {
    let mut times = StageTimes::default();
    for r in rows {
        times.download_s += r.download_s;
        times.convert_s += r.convert_s;
        times.align_s += r.align_s;
    }
    let hours = StageHours::from_times(&times);
    let mut out = String::new();
    let _ = writeln!(out, "files               {}", rows.len());
    let _ = writeln!(out, "align share         {:.3}", align_share(&hours));
    let _ = writeln!(out);
    let _ = writeln!(out, "outcome             files");
    for (o, n) in outcome_counts(rows.iter().map(|r| r.outcome)) {
        let _ = writeln!(out, "{:<20}{n}", FileOutcome::as_str(o));
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "stage               hours");
    for (name, h) in [("download", hours.download), ("convert", hours.convert), ("align", hours.align)] {
        let _ = writeln!(out, "{name:<20}{h:.2}");
    }
    out
}
