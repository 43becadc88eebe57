//! Virtual-time worker pool.
//!
//! The engine owns the clock, the event heap and every worker's pipeline
//! state. It does not decide what runs next: a controller (the in-process
//! LPT queue of [`simulate_campaign`](super::simulate_campaign) or the
//! dispatcher's sim driver) reacts to each [`EngineEvent`] by assigning a
//! file or terminating the worker.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CampaignConfig, SimError};
use crate::agent::{
    load_index, process_file, FileFate, FileRecord, PipelineState, SimulatedExecutor, StageRates, StageTimes,
};
use crate::rng::{exponential, substream, unit};
use crate::workload::FileEntry;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkerId(pub u32);

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

/// One attempt at one file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lease {
    pub accession: String,
    pub sra_size_gb: f64,
    /// 1-based count of executions started for this accession.
    pub attempt: u32,
    /// Out-of-memory failures already suffered; selects the RAM tier and the
    /// random outcome stream, so replays and resumes draw identically.
    pub oom_failures: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EngineEvent {
    IndexLoaded {
        worker: WorkerId,
        load_s: f64,
        /// False while a reclaim notice is pending.
        accepting: bool,
    },
    Finished {
        worker: WorkerId,
        lease: Lease,
        record: FileRecord,
        can_continue: bool,
    },
    Interrupted {
        worker: WorkerId,
        lost: Option<(Lease, StageTimes)>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Provisioned,
    Loaded,
    Finished { token: u64 },
    Notice,
    Reclaim,
}

#[derive(Debug, Clone, Copy)]
struct Scheduled {
    time: f64,
    worker: WorkerId,
    seq: u64,
    generation: u32,
    kind: Kind,
}

// Min-heap order: time, then worker id, then insertion sequence.
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.worker.cmp(&self.worker))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

#[derive(Debug)]
enum Status {
    Provisioning,
    Loading { start: f64, load_s: f64 },
    Idle,
    Busy(Box<Active>),
    Terminated,
}

#[derive(Debug)]
struct Active {
    lease: Lease,
    start: f64,
    record: FileRecord,
    token: u64,
}

#[derive(Debug)]
struct Slot {
    generation: u32,
    status: Status,
    pipeline: PipelineState,
    rng: ChaCha8Rng,
    draining: bool,
    stats: WorkerStats,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerStats {
    pub worker: WorkerId,
    pub busy_s: f64,
    pub index_load_s: f64,
    /// Load time spent after the first load (spot reclaims).
    pub reload_s: f64,
    /// Loads started, including ones cut short by a reclaim.
    pub index_loads: u32,
    pub interruptions: u32,
    pub files_started: u32,
    pub ended_at_s: Option<f64>,
}

pub(crate) struct Engine<'a> {
    cfg: &'a CampaignConfig,
    rates: StageRates,
    now: f64,
    seq: u64,
    tokens: u64,
    heap: BinaryHeap<Scheduled>,
    slots: BTreeMap<WorkerId, Slot>,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(cfg: &'a CampaignConfig, start_s: f64) -> Self {
        Engine {
            rates: cfg.stage_rates(),
            cfg,
            now: start_s,
            seq: 0,
            tokens: 0,
            heap: BinaryHeap::new(),
            slots: BTreeMap::new(),
        }
    }

    pub(crate) fn now(&self) -> f64 {
        self.now
    }

    fn schedule(&mut self, delay: f64, worker: WorkerId, generation: u32, kind: Kind) {
        self.seq += 1;
        self.heap.push(Scheduled {
            time: self.now + delay,
            worker,
            seq: self.seq,
            generation,
            kind,
        });
    }

    fn worker_rng(&self, worker: WorkerId, generation: u32) -> ChaCha8Rng {
        substream(self.cfg.seed, &format!("worker/{}/gen/{generation}", worker.0))
    }

    pub(crate) fn add_worker(&mut self, worker: WorkerId) -> Result<(), SimError> {
        if self.slots.contains_key(&worker) {
            return Err(SimError::Controller(format!("worker {worker} already exists")));
        }
        let volume = self.cfg.shape.volume.map(|v| v.size_gb);
        self.slots.insert(
            worker,
            Slot {
                generation: 0,
                status: Status::Provisioning,
                pipeline: PipelineState::new(volume),
                rng: self.worker_rng(worker, 0),
                draining: false,
                stats: WorkerStats {
                    worker,
                    ..Default::default()
                },
            },
        );
        self.schedule(self.cfg.backend.provision_delay_s, worker, 0, Kind::Provisioned);
        Ok(())
    }

    fn slot_mut(&mut self, worker: WorkerId) -> Result<&mut Slot, SimError> {
        self.slots
            .get_mut(&worker)
            .ok_or_else(|| SimError::Controller(format!("unknown worker {worker}")))
    }

    /// Draws the random outcome of one attempt. Streams are keyed by
    /// accession so the same file behaves the same on any worker.
    pub(crate) fn file_fate(cfg: &CampaignConfig, lease: &Lease) -> FileFate {
        let ram = cfg.failure.ram_for(cfg.shape.ram_gb, lease.oom_failures);
        let p_oom = cfg.failure.probability_for(ram);
        let mut oom = substream(cfg.seed, &format!("file/{}/oom/{}", lease.accession, lease.oom_failures));
        let hit = unit(&mut oom) < p_oom;
        let at = unit(&mut oom);
        let mut quality = substream(cfg.seed, &format!("file/{}/quality", lease.accession));
        let low_quality = unit(&mut quality) < cfg.optimization.low_quality_fraction;
        FileFate {
            oom_at: hit.then_some(at),
            low_quality,
        }
    }

    pub(crate) fn assign(&mut self, worker: WorkerId, lease: Lease) -> Result<(), SimError> {
        let cfg = self.cfg;
        let rates = self.rates;
        self.tokens += 1;
        let token = self.tokens;
        let now = self.now;
        let slot = self.slot_mut(worker)?;
        if !matches!(slot.status, Status::Idle) || slot.draining {
            return Err(SimError::Controller(format!("worker {worker} is not accepting work")));
        }
        let mut executor = SimulatedExecutor {
            rates,
            index_load_s: 0.0,
            fate: Self::file_fate(cfg, &lease),
        };
        let entry = FileEntry::new(lease.accession.clone(), lease.sra_size_gb);
        let record = process_file(
            &mut slot.pipeline,
            &entry,
            &cfg.workload,
            &mut executor,
            &cfg.optimization,
        )?;
        let duration = record.stage_times.total_s();
        slot.stats.files_started += 1;
        let generation = slot.generation;
        slot.status = Status::Busy(Box::new(Active {
            lease,
            start: now,
            record,
            token,
        }));
        self.schedule(duration, worker, generation, Kind::Finished { token });
        Ok(())
    }

    pub(crate) fn terminate(&mut self, worker: WorkerId) -> Result<(), SimError> {
        let now = self.now;
        let slot = self.slot_mut(worker)?;
        match slot.status {
            Status::Idle => {
                slot.status = Status::Terminated;
                slot.stats.ended_at_s = Some(now);
                Ok(())
            }
            Status::Terminated => Ok(()),
            _ => Err(SimError::Controller(format!("worker {worker} is busy and cannot be terminated"))),
        }
    }

    pub(crate) fn stats(&self) -> impl Iterator<Item = &WorkerStats> {
        self.slots.values().map(|s| &s.stats)
    }

    pub(crate) fn next_event(&mut self) -> Result<Option<EngineEvent>, SimError> {
        while let Some(ev) = self.heap.pop() {
            let cfg = self.cfg;
            let Some(slot) = self.slots.get_mut(&ev.worker) else {
                continue;
            };
            if ev.generation != slot.generation || matches!(slot.status, Status::Terminated) {
                continue;
            }
            self.now = ev.time;
            let now = self.now;
            match ev.kind {
                Kind::Provisioned => {
                    let interval = cfg.workload.index.load_time_s;
                    let u = unit(&mut slot.rng);
                    let load_s = (interval.min_s + u * (interval.max_s - interval.min_s)) * cfg.backend.speed_factor;
                    let mut executor = SimulatedExecutor {
                        rates: self.rates,
                        index_load_s: load_s,
                        fate: FileFate::default(),
                    };
                    let load_s = load_index(&mut slot.pipeline, &cfg.workload.index, &mut executor)?;
                    slot.stats.index_loads += 1;
                    slot.status = Status::Loading { start: now, load_s };
                    let generation = slot.generation;
                    let rate = cfg.backend.interruption_rate_per_hour;
                    let notice = (rate > 0.0).then(|| exponential(&mut slot.rng, rate) * 3600.0);
                    self.schedule(load_s, ev.worker, generation, Kind::Loaded);
                    if let Some(dt) = notice {
                        self.schedule(dt, ev.worker, generation, Kind::Notice);
                    }
                }
                Kind::Loaded => {
                    let Status::Loading { load_s, .. } = slot.status else {
                        continue;
                    };
                    slot.stats.busy_s += load_s;
                    slot.stats.index_load_s += load_s;
                    if slot.stats.index_loads > 1 {
                        slot.stats.reload_s += load_s;
                    }
                    slot.status = Status::Idle;
                    return Ok(Some(EngineEvent::IndexLoaded {
                        worker: ev.worker,
                        load_s,
                        accepting: !slot.draining,
                    }));
                }
                Kind::Finished { token } => {
                    let active = match &slot.status {
                        Status::Busy(a) if a.token == token => {
                            let Status::Busy(a) = std::mem::replace(&mut slot.status, Status::Idle) else {
                                unreachable!()
                            };
                            a
                        }
                        _ => continue,
                    };
                    slot.stats.busy_s += active.record.stage_times.total_s();
                    return Ok(Some(EngineEvent::Finished {
                        worker: ev.worker,
                        lease: active.lease,
                        record: active.record,
                        can_continue: !slot.draining,
                    }));
                }
                Kind::Notice => {
                    if slot.draining || matches!(slot.status, Status::Provisioning) {
                        continue;
                    }
                    slot.draining = true;
                    let generation = slot.generation;
                    self.schedule(cfg.backend.reclaim_notice_s, ev.worker, generation, Kind::Reclaim);
                }
                Kind::Reclaim => {
                    let lost = match std::mem::replace(&mut slot.status, Status::Provisioning) {
                        Status::Busy(a) => {
                            let elapsed = now - a.start;
                            slot.stats.busy_s += elapsed;
                            Some((a.lease, a.record.stage_times.truncated(elapsed)))
                        }
                        Status::Loading { start, .. } => {
                            let elapsed = now - start;
                            slot.stats.busy_s += elapsed;
                            slot.stats.index_load_s += elapsed;
                            slot.stats.reload_s += elapsed;
                            None
                        }
                        _ => None,
                    };
                    slot.stats.interruptions += 1;
                    slot.generation += 1;
                    slot.draining = false;
                    slot.pipeline.reset_after_interruption(0.0);
                    let generation = slot.generation;
                    slot.rng = substream(cfg.seed, &format!("worker/{}/gen/{generation}", ev.worker.0));
                    self.schedule(cfg.backend.provision_delay_s, ev.worker, generation, Kind::Provisioned);
                    return Ok(Some(EngineEvent::Interrupted {
                        worker: ev.worker,
                        lost,
                    }));
                }
            }
        }
        Ok(None)
    }
}
