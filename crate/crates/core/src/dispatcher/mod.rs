//! Campaign control plane: a shared LPT work queue, worker lifecycle over a
//! pluggable backend, OOM retry policy, and a crash-safe run journal.
//!
//! All state transitions go through one loop that owns [`RunState`] and the
//! [`Journal`]; each transition is appended before the next event is read.

pub mod driver;
pub mod journal;
pub mod state;

use std::path::Path;

use thiserror::Error;

pub use driver::{BackendDriver, DriverError, DriverEvent, SimDriver, StubCloudDriver};
pub use journal::{Header, Journal, JournalError, Record, JOURNAL_SCHEMA, JOURNAL_VERSION};
pub use state::{Anomaly, FileEvent, FileState, FileStatus, RunState, WorkerPhase, WorkerRecord};

use crate::agent::{FileOutcome, StageTimes};
use crate::cost::campaign_cost;
use crate::sim::summary::{align_share, outcome_counts, StageHours, Summary, SUMMARY_SCHEMA, SUMMARY_VERSION};
use crate::sim::{CampaignConfig, SimError, WorkerId};

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error(transparent)]
    Config(#[from] SimError),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error("could not provision {worker} after {attempts} attempts: {last}")]
    Provisioning {
        worker: WorkerId,
        attempts: u32,
        last: String,
    },
    #[error("backend went quiet with {0} files unresolved")]
    Stalled(usize),
}

impl DispatchError {
    /// Failures caused by inputs rather than by the run itself.
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            DispatchError::Precondition(_) | DispatchError::Journal(JournalError::Corrupt { .. } | JournalError::Mismatch(_))
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub provision_attempts: u32,
    /// Stop after this many journal records, as if the process died. For
    /// crash testing.
    pub stop_after_records: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            provision_attempts: 3,
            stop_after_records: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub state: RunState,
    pub resumed: bool,
    /// False when stopped early by `stop_after_records`.
    pub complete: bool,
    pub anomalies: Vec<String>,
}

fn header_for(cfg: &CampaignConfig) -> Result<Header, DispatchError> {
    Ok(Header {
        schema: JOURNAL_SCHEMA.to_string(),
        version: JOURNAL_VERSION,
        campaign_id: cfg.name.clone(),
        seed: cfg.seed,
        backend: cfg.backend.kind,
        shape: cfg.shape.clone(),
        failure: cfg.failure.clone(),
        pricing: cfg.pricing.clone(),
        files: cfg.workload.entries().map_err(SimError::from)?.into_owned(),
    })
}

struct Loop<'d> {
    state: RunState,
    journal: Journal,
    driver: &'d mut dyn BackendDriver,
    cfg: &'d CampaignConfig,
    written: usize,
    limit: Option<usize>,
    anomalies: Vec<String>,
}

/// Signals that the record limit was reached.
struct Halt;

impl Loop<'_> {
    fn commit(&mut self, rec: Record) -> Result<Result<(), Halt>, DispatchError> {
        if let Err(a) = rec.apply(&mut self.state, &self.cfg.failure) {
            log::warn!("dropping anomalous transition: {a}");
            self.anomalies.push(a.0);
            return Ok(Ok(()));
        }
        self.journal.append(&rec)?;
        self.written += 1;
        if self.limit.is_some_and(|n| self.written >= n) {
            return Ok(Err(Halt));
        }
        Ok(Ok(()))
    }

    fn provision(&mut self, worker: WorkerId, attempts: u32) -> Result<Result<(), Halt>, DispatchError> {
        let mut last = String::new();
        for attempt in 1..=attempts.max(1) {
            match self.driver.provision(worker, &self.cfg.shape) {
                Ok(()) => {
                    let t = self.driver.now();
                    return self.commit(Record::Provisioned { t, worker });
                }
                Err(e) => {
                    log::warn!("provision attempt {attempt} for {worker} failed: {e}");
                    last = e.to_string();
                }
            }
        }
        Err(DispatchError::Provisioning {
            worker,
            attempts: attempts.max(1),
            last,
        })
    }

    /// Leases the next file to an idle worker, or releases it.
    fn feed(&mut self, worker: WorkerId, t: f64) -> Result<Result<(), Halt>, DispatchError> {
        let Some(lease) = self
            .state
            .peek_assignment(worker)
            .map_err(|e| DispatchError::Precondition(e.to_string()))?
        else {
            self.driver.terminate(worker)?;
            return self.commit(Record::Terminated { t, worker });
        };
        let rec = Record::Leased {
            t,
            worker,
            accession: lease.accession.clone(),
            attempt: lease.attempt,
        };
        if let Err(h) = self.commit(rec)? {
            return Ok(Err(h));
        }
        self.driver.assign(worker, lease)?;
        Ok(Ok(()))
    }

    fn has_pending(&self) -> bool {
        self.state.files.iter().any(|f| f.status == FileStatus::Pending)
    }

    fn step(&mut self, ev: DriverEvent) -> Result<Result<(), Halt>, DispatchError> {
        match ev {
            DriverEvent::Ready {
                worker,
                t,
                load_s,
                accepting,
            } => {
                if let Err(h) = self.commit(Record::IndexLoaded { t, worker, load_s })? {
                    return Ok(Err(h));
                }
                if accepting {
                    self.feed(worker, t)
                } else if !self.has_pending() {
                    self.driver.terminate(worker)?;
                    self.commit(Record::Terminated { t, worker })
                } else {
                    Ok(Ok(()))
                }
            }
            DriverEvent::Finished {
                worker,
                t,
                accession,
                outcome,
                stage_times,
                can_continue,
            } => {
                let event = match outcome {
                    FileOutcome::Done => FileEvent::Done,
                    FileOutcome::FailedOom => FileEvent::Oom,
                    FileOutcome::Abandoned => FileEvent::Abandoned,
                    FileOutcome::SkippedStorage => FileEvent::StorageSkip,
                };
                let rec = Record::File {
                    t,
                    worker,
                    accession,
                    event,
                    stage_times,
                };
                if let Err(h) = self.commit(rec)? {
                    return Ok(Err(h));
                }
                if can_continue {
                    self.feed(worker, t)
                } else if !self.has_pending() {
                    self.driver.terminate(worker)?;
                    self.commit(Record::Terminated { t, worker })
                } else {
                    Ok(Ok(()))
                }
            }
            DriverEvent::Interrupted { worker, t, lost } => {
                let rec = match lost {
                    Some((accession, stage_times)) => Record::File {
                        t,
                        worker,
                        accession,
                        event: FileEvent::Interruption,
                        stage_times,
                    },
                    None => Record::WorkerInterrupted { t, worker },
                };
                self.commit(rec)
            }
        }
    }
}

/// Runs (or resumes) a campaign until every accession is terminal.
///
/// An existing, nonempty `state_path` is replayed first: leases it records
/// go back to the queue and finished files are never run again. A torn final
/// line is dropped; any other damage is refused.
pub fn run_campaign(
    cfg: &CampaignConfig,
    driver: &mut dyn BackendDriver,
    state_path: &Path,
    options: RunOptions,
) -> Result<RunReport, DispatchError> {
    if cfg.workers == 0 {
        return Err(DispatchError::Precondition("the worker pool is empty".into()));
    }
    cfg.validate()?;
    let header = header_for(cfg)?;
    if header.files.is_empty() {
        return Err(DispatchError::Precondition("the manifest is empty".into()));
    }

    let existing = std::fs::metadata(state_path).map(|m| m.len() > 0).unwrap_or(false);
    let (state, journal, resumed) = if existing {
        let parsed = journal::read(state_path)?;
        if parsed.header != header {
            return Err(JournalError::Mismatch(format!(
                "{} was written for campaign `{}` with different settings or files",
                state_path.display(),
                parsed.header.campaign_id
            ))
            .into());
        }
        if parsed.torn {
            log::warn!("{}: dropping a partially written final line", state_path.display());
        }
        let state = journal::replay(&parsed)?;
        let journal = Journal::reopen(state_path, parsed.valid_len)?;
        (state, journal, true)
    } else {
        if state_path.exists() {
            std::fs::remove_file(state_path).map_err(|source| JournalError::Io {
                path: state_path.to_path_buf(),
                source,
            })?;
        }
        let state = RunState::new(cfg.name.clone(), &header.files);
        (state, Journal::create(state_path, &header)?, false)
    };

    let mut lp = Loop {
        state,
        journal,
        driver,
        cfg,
        written: 0,
        limit: options.stop_after_records,
        anomalies: Vec::new(),
    };

    let halted = run_loop(&mut lp, resumed, options)?;
    lp.journal.sync()?;
    if !halted && !lp.state.is_complete() {
        return Err(DispatchError::Stalled(lp.state.unresolved()));
    }
    Ok(RunReport {
        complete: !halted,
        state: lp.state,
        resumed,
        anomalies: lp.anomalies,
    })
}

fn run_loop(lp: &mut Loop<'_>, resumed: bool, options: RunOptions) -> Result<bool, DispatchError> {
    let clock = lp.state.clock_s;
    if resumed && !lp.state.is_complete() {
        let needs_recovery = lp.state.files.iter().any(|f| f.status == FileStatus::Leased)
            || lp.state.workers.values().any(|w| w.phase != WorkerPhase::Terminated);
        if needs_recovery && lp.commit(Record::Recovered { t: clock })?.is_err() {
            return Ok(true);
        }
    }
    if lp.state.is_complete() {
        return Ok(false);
    }
    lp.driver.begin(clock);
    let pool = lp.cfg.workers.min(lp.state.unresolved());
    let first = lp.state.next_worker_id();
    for k in 0..pool as u32 {
        if lp.provision(WorkerId(first.0 + k), options.provision_attempts)?.is_err() {
            return Ok(true);
        }
    }
    while let Some(ev) = lp.driver.poll()? {
        if lp.step(ev)?.is_err() {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Campaign metrics from a run state, in the simulator's summary format.
pub fn summarize_state(state: &RunState, header: &Header) -> Result<Summary, DispatchError> {
    let mut times = StageTimes::default();
    for f in &state.files {
        times.add(&f.stage_times);
    }
    let load_s: f64 = state.workers.values().map(|w| w.index_load_s).sum();
    let reload_s: f64 = state.workers.values().map(|w| w.reload_s).sum();
    let aggregate_task_hours = (times.total_s() + load_s) / 3600.0;
    let start = state
        .workers
        .values()
        .map(|w| w.provisioned_at)
        .fold(f64::INFINITY, f64::min);
    let makespan_s = if start.is_finite() { state.clock_s - start } else { 0.0 };
    let worker_count = state.workers.len().max(1);
    let cost = campaign_cost(header.backend, &header.shape, aggregate_task_hours, worker_count, &header.pricing)
        .map_err(SimError::from)?;
    let stage_hours = StageHours::from_times(&times);
    Ok(Summary {
        schema: SUMMARY_SCHEMA.to_string(),
        schema_version: SUMMARY_VERSION,
        name: state.campaign_id.clone(),
        seed: header.seed,
        backend: header.backend,
        worker_count: state.workers.len(),
        files: state.files.len(),
        outcomes: outcome_counts(state.files.iter().filter_map(|f| f.status.outcome())),
        makespan_h: makespan_s / 3600.0,
        aggregate_task_hours,
        align_share: align_share(&stage_hours),
        stage_hours,
        index_load_hours: load_s / 3600.0,
        reload_overhead_hours: reload_s / 3600.0,
        index_loads: state.workers.values().map(|w| w.index_loads).sum(),
        interruptions: state.workers.values().map(|w| w.interruptions).sum(),
        cost,
    })
}
