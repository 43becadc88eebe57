//! Append-only run journal, one JSON object per line.
//!
//! The first line is a [`Header`]; every later line is a [`Record`] tagged
//! by `type`. Replaying the records through [`RunState`] reproduces the
//! state at the moment the last complete line was written.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::state::{Anomaly, FileEvent, RunState};
use crate::agent::StageTimes;
use crate::cost::{BackendKind, PricingTable, ResourceShape};
use crate::sim::{FailureModel, WorkerId};
use crate::workload::FileEntry;

pub const JOURNAL_SCHEMA: &str = "star-campaign/journal";
pub const JOURNAL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema: String,
    pub version: u32,
    pub campaign_id: String,
    pub seed: u64,
    pub backend: BackendKind,
    pub shape: ResourceShape,
    pub failure: FailureModel,
    pub pricing: PricingTable,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Record {
    Provisioned {
        t: f64,
        worker: WorkerId,
    },
    IndexLoaded {
        t: f64,
        worker: WorkerId,
        load_s: f64,
    },
    Leased {
        t: f64,
        worker: WorkerId,
        accession: String,
        attempt: u32,
    },
    File {
        t: f64,
        worker: WorkerId,
        accession: String,
        event: FileEvent,
        stage_times: StageTimes,
    },
    WorkerInterrupted {
        t: f64,
        worker: WorkerId,
    },
    Terminated {
        t: f64,
        worker: WorkerId,
    },
    Recovered {
        t: f64,
    },
}

impl Record {
    pub fn apply(&self, state: &mut RunState, policy: &FailureModel) -> Result<(), Anomaly> {
        match self {
            Record::Provisioned { t, worker } => state.provisioned(*worker, *t),
            Record::IndexLoaded { t, worker, load_s } => state.index_loaded(*worker, *t, *load_s),
            Record::Leased {
                t,
                worker,
                accession,
                attempt,
            } => {
                let got = state.lease(accession, *worker, *t)?;
                if got != *attempt {
                    return Err(Anomaly(format!("{accession}: journal says attempt {attempt}, replay gives {got}")));
                }
                Ok(())
            }
            Record::File {
                t,
                worker,
                accession,
                event,
                stage_times,
            } => state
                .handle_event(accession, *worker, *event, *stage_times, *t, policy)
                .map(|_| ()),
            Record::WorkerInterrupted { t, worker } => state.worker_interrupted(*worker, *t),
            Record::Terminated { t, worker } => state.terminated(*worker, *t),
            Record::Recovered { t } => {
                state.recover(*t);
                Ok(())
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("journal line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("journal does not match this campaign: {0}")]
    Mismatch(String),
}

/// Result of reading a journal's text.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub header: Header,
    pub records: Vec<Record>,
    /// Byte length of the complete lines; anything after is a torn write.
    pub valid_len: usize,
    pub torn: bool,
}

fn corrupt(line: usize, reason: impl Into<String>) -> JournalError {
    JournalError::Corrupt {
        line,
        reason: reason.into(),
    }
}

pub fn parse(text: &str) -> Result<Parsed, JournalError> {
    let valid_len = text.rfind('\n').map(|i| i + 1).unwrap_or(0);
    let torn = valid_len < text.len();
    let mut lines = text[..valid_len].lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| corrupt(1, "missing header"))?;
    let header: Header = serde_json::from_str(first).map_err(|e| corrupt(1, format!("bad header: {e}")))?;
    if header.schema != JOURNAL_SCHEMA || header.version != JOURNAL_VERSION {
        return Err(corrupt(
            1,
            format!("unknown journal schema `{}` version {}", header.schema, header.version),
        ));
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let rec: Record = serde_json::from_str(line).map_err(|e| corrupt(i + 1, e.to_string()))?;
        records.push(rec);
    }
    Ok(Parsed {
        header,
        records,
        valid_len,
        torn,
    })
}

/// Rebuilds the run state by replaying every record.
pub fn replay(parsed: &Parsed) -> Result<RunState, JournalError> {
    let h = &parsed.header;
    let mut state = RunState::new(h.campaign_id.clone(), &h.files);
    for (i, rec) in parsed.records.iter().enumerate() {
        rec.apply(&mut state, &h.failure)
            .map_err(|a| corrupt(i + 2, a.0))?;
    }
    Ok(state)
}

pub fn read(path: &Path) -> Result<Parsed, JournalError> {
    let text = std::fs::read_to_string(path).map_err(|source| JournalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&text)
}

/// Single writer for a journal file.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    fn io(&self, source: io::Error) -> JournalError {
        JournalError::Io {
            path: self.path.clone(),
            source,
        }
    }

    pub fn create(path: &Path, header: &Header) -> Result<Self, JournalError> {
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
            .map_err(|source| JournalError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        let mut j = Journal {
            path: path.to_path_buf(),
            file,
        };
        j.write_line(&serde_json::to_string(header).expect("header serializes"))?;
        j.file.sync_all().map_err(|e| j.io(e))?;
        Ok(j)
    }

    /// Opens an existing journal for appending, cutting off a torn tail.
    pub fn reopen(path: &Path, valid_len: usize) -> Result<Self, JournalError> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|source| JournalError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        let j = Journal {
            path: path.to_path_buf(),
            file,
        };
        j.file.set_len(valid_len as u64).map_err(|e| j.io(e))?;
        Ok(j)
    }

    fn write_line(&mut self, line: &str) -> Result<(), JournalError> {
        let mut buf = Vec::with_capacity(line.len() + 1);
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
        self.file.write_all(&buf).map_err(|e| self.io(e))?;
        self.file.flush().map_err(|e| self.io(e))
    }

    pub fn append(&mut self, record: &Record) -> Result<(), JournalError> {
        self.write_line(&serde_json::to_string(record).expect("record serializes"))
    }

    pub fn sync(&mut self) -> Result<(), JournalError> {
        self.file.sync_all().map_err(|e| self.io(e))
    }
}
