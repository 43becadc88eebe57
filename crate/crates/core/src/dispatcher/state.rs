use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{FileOutcome, StageTimes};
use crate::sim::{FailureModel, Lease, WorkerId};
use crate::workload::FileEntry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileStatus {
    Pending,
    Leased,
    Done,
    FailedOom,
    Abandoned,
    SkippedStorage,
}

impl FileStatus {
    pub fn is_terminal(self) -> bool {
        !matches!(self, FileStatus::Pending | FileStatus::Leased)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FileStatus::Pending => "pending",
            FileStatus::Leased => "leased",
            FileStatus::Done => "done",
            FileStatus::FailedOom => "failed_oom",
            FileStatus::Abandoned => "abandoned",
            FileStatus::SkippedStorage => "skipped_storage",
        }
    }

    pub fn outcome(self) -> Option<FileOutcome> {
        match self {
            FileStatus::Done => Some(FileOutcome::Done),
            FileStatus::FailedOom => Some(FileOutcome::FailedOom),
            FileStatus::Abandoned => Some(FileOutcome::Abandoned),
            FileStatus::SkippedStorage => Some(FileOutcome::SkippedStorage),
            FileStatus::Pending | FileStatus::Leased => None,
        }
    }
}

impl From<FileOutcome> for FileStatus {
    fn from(o: FileOutcome) -> Self {
        match o {
            FileOutcome::Done => FileStatus::Done,
            FileOutcome::FailedOom => FileStatus::FailedOom,
            FileOutcome::Abandoned => FileStatus::Abandoned,
            FileOutcome::SkippedStorage => FileStatus::SkippedStorage,
        }
    }
}

impl fmt::Display for FileStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileState {
    pub accession: String,
    pub sra_size_gb: f64,
    pub status: FileStatus,
    pub attempts: u32,
    pub oom_failures: u32,
    pub worker_id: Option<WorkerId>,
    pub started_at: Option<f64>,
    pub ended_at: Option<f64>,
    pub failure_reason: Option<String>,
    pub stage_times: StageTimes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerPhase {
    Provisioning,
    Ready,
    Busy,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerRecord {
    pub worker_id: WorkerId,
    pub phase: WorkerPhase,
    pub provisioned_at: f64,
    pub terminated_at: Option<f64>,
    pub index_loads: u32,
    pub index_load_s: f64,
    /// Load time after the first load.
    pub reload_s: f64,
    pub interruptions: u32,
}

/// What a worker reports about its leased file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileEvent {
    Done,
    Oom,
    Abandoned,
    StorageSkip,
    Interruption,
}

/// A transition that does not apply to the current state. Live, it is logged
/// and dropped; in a journal, it means the file is corrupt.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct Anomaly(pub String);

#[derive(Debug, Clone, PartialEq, Error)]
#[error("unknown worker {0}")]
pub struct UnknownWorker(pub WorkerId);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunState {
    pub campaign_id: String,
    pub files: Vec<FileState>,
    pub workers: BTreeMap<WorkerId, WorkerRecord>,
    /// Latest time seen in any transition.
    pub clock_s: f64,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl RunState {
    pub fn new(campaign_id: impl Into<String>, entries: &[FileEntry]) -> Self {
        let files: Vec<FileState> = entries
            .iter()
            .map(|e| FileState {
                accession: e.accession_id.clone(),
                sra_size_gb: e.sra_size_gb,
                status: FileStatus::Pending,
                attempts: 0,
                oom_failures: 0,
                worker_id: None,
                started_at: None,
                ended_at: None,
                failure_reason: None,
                stage_times: StageTimes::default(),
            })
            .collect();
        let index = files
            .iter()
            .enumerate()
            .map(|(i, f)| (f.accession.clone(), i))
            .collect();
        RunState {
            campaign_id: campaign_id.into(),
            files,
            workers: BTreeMap::new(),
            clock_s: 0.0,
            index,
        }
    }

    fn tick(&mut self, t: f64) {
        if t > self.clock_s {
            self.clock_s = t;
        }
    }

    pub fn file(&self, accession: &str) -> Option<&FileState> {
        self.index.get(accession).map(|&i| &self.files[i])
    }

    pub fn count(&self, status: FileStatus) -> usize {
        self.files.iter().filter(|f| f.status == status).count()
    }

    pub fn unresolved(&self) -> usize {
        self.files.iter().filter(|f| !f.status.is_terminal()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.unresolved() == 0
    }

    pub fn next_worker_id(&self) -> WorkerId {
        WorkerId(self.workers.keys().next_back().map(|w| w.0 + 1).unwrap_or(0))
    }

    fn worker_mut(&mut self, worker: WorkerId) -> Result<&mut WorkerRecord, Anomaly> {
        self.workers
            .get_mut(&worker)
            .ok_or_else(|| Anomaly(format!("unknown worker {worker}")))
    }

    pub fn provisioned(&mut self, worker: WorkerId, t: f64) -> Result<(), Anomaly> {
        if let Some(w) = self.workers.get(&worker) {
            return Err(Anomaly(format!("worker {worker} provisioned twice ({:?})", w.phase)));
        }
        self.tick(t);
        self.workers.insert(
            worker,
            WorkerRecord {
                worker_id: worker,
                phase: WorkerPhase::Provisioning,
                provisioned_at: t,
                terminated_at: None,
                index_loads: 0,
                index_load_s: 0.0,
                reload_s: 0.0,
                interruptions: 0,
            },
        );
        Ok(())
    }

    pub fn index_loaded(&mut self, worker: WorkerId, t: f64, load_s: f64) -> Result<(), Anomaly> {
        let w = self.worker_mut(worker)?;
        if w.phase != WorkerPhase::Provisioning {
            return Err(Anomaly(format!("worker {worker} loaded the index while {:?}", w.phase)));
        }
        w.phase = WorkerPhase::Ready;
        if w.index_loads > 0 {
            w.reload_s += load_s;
        }
        w.index_loads += 1;
        w.index_load_s += load_s;
        self.tick(t);
        Ok(())
    }

    /// The lease `worker` would get next: the pending file with the largest
    /// SRA size, earliest in the manifest on ties.
    pub fn peek_assignment(&self, worker: WorkerId) -> Result<Option<Lease>, UnknownWorker> {
        let phase = self.workers.get(&worker).ok_or(UnknownWorker(worker))?.phase;
        if phase != WorkerPhase::Ready {
            log::warn!("worker {worker} asked for work while {phase:?}");
            return Ok(None);
        }
        let best = self
            .files
            .iter()
            .filter(|f| f.status == FileStatus::Pending)
            .fold(None::<&FileState>, |best, f| match best {
                Some(b) if b.sra_size_gb >= f.sra_size_gb => best,
                _ => Some(f),
            });
        Ok(best.map(|f| Lease {
            accession: f.accession.clone(),
            sra_size_gb: f.sra_size_gb,
            attempt: f.attempts + 1,
            oom_failures: f.oom_failures,
        }))
    }

    /// Leases the next file to `worker`; `None` when nothing is pending.
    pub fn next_assignment(&mut self, worker: WorkerId, t: f64) -> Result<Option<Lease>, UnknownWorker> {
        let lease = self.peek_assignment(worker)?;
        if let Some(l) = &lease {
            self.lease(&l.accession, worker, t).expect("pending file and ready worker");
        }
        Ok(lease)
    }

    pub fn lease(&mut self, accession: &str, worker: WorkerId, t: f64) -> Result<u32, Anomaly> {
        let i = *self
            .index
            .get(accession)
            .ok_or_else(|| Anomaly(format!("unknown accession {accession}")))?;
        let w = self.worker_mut(worker)?;
        if w.phase != WorkerPhase::Ready {
            return Err(Anomaly(format!("worker {worker} cannot take a lease while {:?}", w.phase)));
        }
        let f = &self.files[i];
        if f.status != FileStatus::Pending {
            return Err(Anomaly(format!("{accession} is {} and cannot be leased", f.status)));
        }
        self.worker_mut(worker)?.phase = WorkerPhase::Busy;
        self.tick(t);
        let f = &mut self.files[i];
        f.status = FileStatus::Leased;
        f.attempts += 1;
        f.worker_id = Some(worker);
        f.started_at = Some(t);
        f.ended_at = None;
        Ok(f.attempts)
    }

    /// Applies a worker's report about its leased file.
    pub fn handle_event(
        &mut self,
        accession: &str,
        worker: WorkerId,
        event: FileEvent,
        stage_times: StageTimes,
        t: f64,
        policy: &FailureModel,
    ) -> Result<FileStatus, Anomaly> {
        let i = *self
            .index
            .get(accession)
            .ok_or_else(|| Anomaly(format!("event {event:?} for unknown accession {accession}")))?;
        let f = &self.files[i];
        if f.status != FileStatus::Leased || f.worker_id != Some(worker) {
            return Err(Anomaly(format!(
                "event {event:?} from {worker} for {accession}, which is {} by {:?}",
                f.status, f.worker_id
            )));
        }
        let w = self.worker_mut(worker)?;
        w.phase = match event {
            FileEvent::Interruption => {
                w.interruptions += 1;
                WorkerPhase::Provisioning
            }
            _ => WorkerPhase::Ready,
        };
        self.tick(t);
        let f = &mut self.files[i];
        f.stage_times.add(&stage_times);
        f.ended_at = Some(t);
        let status = match event {
            FileEvent::Done => FileStatus::Done,
            FileEvent::Abandoned => FileStatus::Abandoned,
            FileEvent::StorageSkip => {
                f.failure_reason = Some("storage demand exceeds free disk".into());
                FileStatus::SkippedStorage
            }
            FileEvent::Oom => {
                f.oom_failures += 1;
                f.failure_reason = Some(format!("out of memory (failure {})", f.oom_failures));
                if policy.should_retry(f.oom_failures) {
                    FileStatus::Pending
                } else {
                    FileStatus::FailedOom
                }
            }
            FileEvent::Interruption => {
                f.failure_reason = Some("worker reclaimed".into());
                FileStatus::Pending
            }
        };
        f.status = status;
        if status == FileStatus::Pending {
            f.worker_id = None;
        }
        Ok(status)
    }

    /// A worker lost while holding no lease.
    pub fn worker_interrupted(&mut self, worker: WorkerId, t: f64) -> Result<(), Anomaly> {
        if self.files.iter().any(|f| f.status == FileStatus::Leased && f.worker_id == Some(worker)) {
            return Err(Anomaly(format!("worker {worker} holds a lease; report it with the file")));
        }
        let w = self.worker_mut(worker)?;
        if w.phase == WorkerPhase::Terminated {
            return Err(Anomaly(format!("worker {worker} is already terminated")));
        }
        w.interruptions += 1;
        w.phase = WorkerPhase::Provisioning;
        self.tick(t);
        Ok(())
    }

    pub fn terminated(&mut self, worker: WorkerId, t: f64) -> Result<(), Anomaly> {
        let w = self.worker_mut(worker)?;
        if matches!(w.phase, WorkerPhase::Busy | WorkerPhase::Terminated) {
            return Err(Anomaly(format!("worker {worker} cannot terminate while {:?}", w.phase)));
        }
        w.phase = WorkerPhase::Terminated;
        w.terminated_at = Some(t);
        self.tick(t);
        Ok(())
    }

    /// After a crash: leases go back to the queue and every live worker is
    /// considered gone.
    pub fn recover(&mut self, t: f64) {
        self.tick(t);
        for f in &mut self.files {
            if f.status == FileStatus::Leased {
                f.status = FileStatus::Pending;
                f.worker_id = None;
                f.failure_reason = Some("lease lost in restart".into());
            }
        }
        for w in self.workers.values_mut() {
            if w.phase != WorkerPhase::Terminated {
                w.phase = WorkerPhase::Terminated;
                w.terminated_at = Some(t);
            }
        }
    }

    /// Checks the structural invariants; returns the first violation.
    pub fn check(&self) -> Result<(), String> {
        let mut holders: HashMap<WorkerId, &str> = HashMap::new();
        for f in &self.files {
            match (f.status, f.worker_id) {
                (FileStatus::Leased, None) => return Err(format!("{} leased without a worker", f.accession)),
                (FileStatus::Leased, Some(w)) => {
                    match self.workers.get(&w) {
                        Some(r) if r.phase == WorkerPhase::Busy => {}
                        _ => return Err(format!("{} leased by {w}, which is not busy", f.accession)),
                    }
                    if let Some(other) = holders.insert(w, &f.accession) {
                        return Err(format!("{w} holds {other} and {}", f.accession));
                    }
                }
                (FileStatus::Pending, Some(w)) => return Err(format!("{} pending but held by {w}", f.accession)),
                _ => {}
            }
        }
        for w in self.workers.values() {
            if w.phase == WorkerPhase::Busy && !holders.contains_key(&w.worker_id) {
                return Err(format!("{} busy without a lease", w.worker_id));
            }
        }
        Ok(())
    }

    /// Sorted multiset of terminal statuses keyed by accession.
    pub fn terminal_statuses(&self) -> BTreeMap<String, FileStatus> {
        self.files
            .iter()
            .map(|f| (f.accession.clone(), f.status))
            .collect()
    }
}
