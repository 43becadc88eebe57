use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::agent::{FileOutcome, StageRates, StageTimes};
use crate::cost::ResourceShape;
use crate::sim::{CampaignConfig, Engine, EngineEvent, Lease, SimError, WorkerId};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("provisioning {worker} failed: {reason}")]
    Provision { worker: WorkerId, reason: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("call journal {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Protocol(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DriverEvent {
    /// The worker has the index loaded. `accepting` is false when it is about
    /// to be reclaimed.
    Ready {
        worker: WorkerId,
        t: f64,
        load_s: f64,
        accepting: bool,
    },
    Finished {
        worker: WorkerId,
        t: f64,
        accession: String,
        outcome: FileOutcome,
        stage_times: StageTimes,
        can_continue: bool,
    },
    /// The worker was reclaimed; it re-provisions by itself and reports
    /// `Ready` again.
    Interrupted {
        worker: WorkerId,
        t: f64,
        lost: Option<(String, StageTimes)>,
    },
}

/// A compute backend the dispatcher drives. Events come back from `poll` in
/// time order across all workers.
pub trait BackendDriver {
    fn name(&self) -> &'static str;
    /// Sets the clock before the first call, for resumed runs.
    fn begin(&mut self, _clock_s: f64) {}
    fn now(&self) -> f64;
    fn provision(&mut self, worker: WorkerId, shape: &ResourceShape) -> Result<(), DriverError>;
    fn assign(&mut self, worker: WorkerId, lease: Lease) -> Result<(), DriverError>;
    fn poll(&mut self) -> Result<Option<DriverEvent>, DriverError>;
    fn terminate(&mut self, worker: WorkerId) -> Result<(), DriverError>;
}

/// Runs workers in virtual time with the simulator's engine.
pub struct SimDriver<'a> {
    cfg: &'a CampaignConfig,
    engine: Engine<'a>,
}

impl<'a> SimDriver<'a> {
    pub fn new(cfg: &'a CampaignConfig) -> Self {
        SimDriver {
            cfg,
            engine: Engine::new(cfg, 0.0),
        }
    }
}

impl BackendDriver for SimDriver<'_> {
    fn name(&self) -> &'static str {
        "sim"
    }

    fn begin(&mut self, clock_s: f64) {
        self.engine = Engine::new(self.cfg, clock_s);
    }

    fn now(&self) -> f64 {
        self.engine.now()
    }

    fn provision(&mut self, worker: WorkerId, _shape: &ResourceShape) -> Result<(), DriverError> {
        Ok(self.engine.add_worker(worker)?)
    }

    fn assign(&mut self, worker: WorkerId, lease: Lease) -> Result<(), DriverError> {
        Ok(self.engine.assign(worker, lease)?)
    }

    fn poll(&mut self) -> Result<Option<DriverEvent>, DriverError> {
        let t = |e: &Engine| e.now();
        Ok(self.engine.next_event()?.map(|ev| match ev {
            EngineEvent::IndexLoaded {
                worker,
                load_s,
                accepting,
            } => DriverEvent::Ready {
                worker,
                t: t(&self.engine),
                load_s,
                accepting,
            },
            EngineEvent::Finished {
                worker,
                lease,
                record,
                can_continue,
            } => DriverEvent::Finished {
                worker,
                t: t(&self.engine),
                accession: lease.accession,
                outcome: record.outcome,
                stage_times: record.stage_times,
                can_continue,
            },
            EngineEvent::Interrupted { worker, lost } => DriverEvent::Interrupted {
                worker,
                t: t(&self.engine),
                lost: lost.map(|(l, times)| (l.accession, times)),
            },
        }))
    }

    fn terminate(&mut self, worker: WorkerId) -> Result<(), DriverError> {
        Ok(self.engine.terminate(worker)?)
    }
}

#[derive(Serialize)]
struct Call<'a> {
    seq: u64,
    t: f64,
    call: &'static str,
    worker: WorkerId,
    #[serde(skip_serializing_if = "Option::is_none")]
    shape: Option<&'a ResourceShape>,
    #[serde(skip_serializing_if = "Option::is_none")]
    accession: Option<&'a str>,
}

/// Stands in for a cloud API. Every provision, assign and terminate call is
/// written to a JSON-lines call journal; nothing leaves the process. Work
/// completes with nominal stage times unless an outcome is scripted.
pub struct StubCloudDriver {
    path: PathBuf,
    out: BufWriter<File>,
    seq: u64,
    clock_s: f64,
    rates: StageRates,
    expansion_factor: f64,
    provision_delay_s: f64,
    load_s: f64,
    pending: VecDeque<DriverEvent>,
    scripted: HashMap<String, FileOutcome>,
    provision_failures: u32,
}

impl StubCloudDriver {
    pub fn create(path: &Path, cfg: &CampaignConfig) -> Result<Self, DriverError> {
        let io = |source| DriverError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::options().create(true).append(true).open(path).map_err(io)?;
        Ok(StubCloudDriver {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            seq: 0,
            clock_s: 0.0,
            rates: cfg.stage_rates(),
            expansion_factor: cfg.workload.expansion_factor,
            provision_delay_s: cfg.backend.provision_delay_s,
            load_s: cfg.workload.index.load_time_s.mean_s() * cfg.backend.speed_factor,
            pending: VecDeque::new(),
            scripted: HashMap::new(),
            provision_failures: 0,
        })
    }

    pub fn with_outcome(mut self, accession: impl Into<String>, outcome: FileOutcome) -> Self {
        self.scripted.insert(accession.into(), outcome);
        self
    }

    /// Makes the next `n` provision calls fail.
    pub fn failing_provisions(mut self, n: u32) -> Self {
        self.provision_failures = n;
        self
    }

    fn record(&mut self, call: &'static str, worker: WorkerId, shape: Option<&ResourceShape>, accession: Option<&str>) -> Result<(), DriverError> {
        self.seq += 1;
        let line = serde_json::to_string(&Call {
            seq: self.seq,
            t: self.clock_s,
            call,
            worker,
            shape,
            accession,
        })
        .expect("call serializes");
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|source| DriverError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

impl BackendDriver for StubCloudDriver {
    fn name(&self) -> &'static str {
        "stub-cloud"
    }

    fn begin(&mut self, clock_s: f64) {
        self.clock_s = clock_s;
    }

    fn now(&self) -> f64 {
        self.clock_s
    }

    fn provision(&mut self, worker: WorkerId, shape: &ResourceShape) -> Result<(), DriverError> {
        if self.provision_failures > 0 {
            self.provision_failures -= 1;
            self.record("provision_failed", worker, Some(shape), None)?;
            return Err(DriverError::Provision {
                worker,
                reason: "capacity unavailable (scripted)".into(),
            });
        }
        self.record("provision", worker, Some(shape), None)?;
        self.pending.push_back(DriverEvent::Ready {
            worker,
            t: self.clock_s + self.provision_delay_s + self.load_s,
            load_s: self.load_s,
            accepting: true,
        });
        Ok(())
    }

    fn assign(&mut self, worker: WorkerId, lease: Lease) -> Result<(), DriverError> {
        self.record("assign", worker, None, Some(&lease.accession))?;
        let fastq = lease.sra_size_gb * self.expansion_factor;
        let outcome = self
            .scripted
            .get(&lease.accession)
            .copied()
            .unwrap_or(FileOutcome::Done);
        let stage_times = self.rates.nominal(fastq);
        self.pending.push_back(DriverEvent::Finished {
            worker,
            t: self.clock_s + stage_times.total_s(),
            accession: lease.accession,
            outcome,
            stage_times,
            can_continue: true,
        });
        Ok(())
    }

    fn poll(&mut self) -> Result<Option<DriverEvent>, DriverError> {
        let ev = self.pending.pop_front();
        if let Some(ev) = &ev {
            let t = match ev {
                DriverEvent::Ready { t, .. } | DriverEvent::Finished { t, .. } | DriverEvent::Interrupted { t, .. } => *t,
            };
            self.clock_s = self.clock_s.max(t);
        }
        Ok(ev)
    }

    fn terminate(&mut self, worker: WorkerId) -> Result<(), DriverError> {
        self.record("terminate", worker, None, None)
    }
}
