//! Seeded discrete-event simulation of an alignment campaign.

mod engine;
pub mod export;
pub mod summary;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::{EngineEvent, Lease, WorkerId, WorkerStats};
pub(crate) use engine::Engine;

use crate::agent::{AgentError, FileOutcome, OptimizationFlags, StageRates, StageTimes};
use crate::cost::{campaign_cost, BackendKind, CostBreakdown, CostError, PricingTable, ResourceShape};
use crate::workload::{estimate_fastq_size, FileEntry, WorkloadError, WorkloadSpec};

pub const SIM_RESULT_SCHEMA: &str = "star-campaign/sim-result";
pub const SIM_RESULT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("controller error: {0}")]
    Controller(String),
    #[error("simulation stalled with {0} files unresolved")]
    Stalled(usize),
    #[error("reference of {reference_h} task-hours does not exceed index-load overhead of {overhead_h:.3} h")]
    Calibration { reference_h: f64, overhead_h: f64 },
}

pub(crate) fn config_err(field: &str, reason: impl Into<String>) -> SimError {
    SimError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Optional per-stage slowdown; stages left unset use `speed_factor`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpeed {
    #[serde(default)]
    pub download: Option<f64>,
    #[serde(default)]
    pub convert: Option<f64>,
    #[serde(default)]
    pub align: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendProfile {
    pub kind: BackendKind,
    /// Time multiplier relative to the VM baseline.
    pub speed_factor: f64,
    #[serde(default)]
    pub stage_speed: StageSpeed,
    #[serde(default)]
    pub provision_delay_s: f64,
    #[serde(default)]
    pub interruption_rate_per_hour: f64,
    #[serde(default)]
    pub reclaim_notice_s: f64,
}

/// ECS tasks ran on older CPU generations: 207 h against 138.6 h on EC2.
pub const ECS_SPEED_FACTOR: f64 = 1.49;
/// Assumed spot reclaim rate per worker-hour.
pub const DEFAULT_SPOT_INTERRUPTION_RATE: f64 = 0.05;

impl BackendProfile {
    pub fn vm() -> Self {
        BackendProfile {
            kind: BackendKind::Vm,
            speed_factor: 1.0,
            stage_speed: StageSpeed::default(),
            provision_delay_s: 60.0,
            interruption_rate_per_hour: 0.0,
            reclaim_notice_s: 0.0,
        }
    }

    pub fn serverless() -> Self {
        BackendProfile {
            kind: BackendKind::Serverless,
            speed_factor: ECS_SPEED_FACTOR,
            ..Self::vm()
        }
    }

    pub fn serverless_spot() -> Self {
        BackendProfile {
            kind: BackendKind::ServerlessSpot,
            interruption_rate_per_hour: DEFAULT_SPOT_INTERRUPTION_RATE,
            reclaim_notice_s: 120.0,
            ..Self::serverless()
        }
    }

    fn stage_factor(&self, stage: Option<f64>) -> f64 {
        stage.unwrap_or(self.speed_factor)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.speed_factor) {
            return Err(config_err("backend.speed_factor", "must be positive"));
        }
        for (name, v) in [
            ("backend.stage_speed.download", self.stage_speed.download),
            ("backend.stage_speed.convert", self.stage_speed.convert),
            ("backend.stage_speed.align", self.stage_speed.align),
        ] {
            if let Some(v) = v {
                if !positive(v) {
                    return Err(config_err(name, "must be positive"));
                }
            }
        }
        let nonneg = |v: f64| v >= 0.0 && v.is_finite();
        if !nonneg(self.provision_delay_s) {
            return Err(config_err("backend.provision_delay_s", "must be nonnegative"));
        }
        if !nonneg(self.reclaim_notice_s) {
            return Err(config_err("backend.reclaim_notice_s", "must be nonnegative"));
        }
        if !nonneg(self.interruption_rate_per_hour) {
            return Err(config_err("backend.interruption_rate_per_hour", "must be nonnegative"));
        }
        if self.interruption_rate_per_hour > 0.0 && self.kind != BackendKind::ServerlessSpot {
            return Err(config_err(
                "backend.interruption_rate_per_hour",
                "interruptions apply only to serverless-spot",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OomTier {
    pub ram_gb: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureModel {
    /// Per-file probability of running out of memory, by task RAM.
    pub oom_probability_by_ram: Vec<OomTier>,
    #[serde(default)]
    pub retry_on_oom: bool,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    /// RAM sizes to step through on out-of-memory retries.
    #[serde(default = "default_ram_ladder")]
    pub ram_ladder: Vec<f64>,
}

fn default_max_attempts() -> u32 {
    2
}

fn default_ram_ladder() -> Vec<f64> {
    vec![48.0, 64.0]
}

impl Default for FailureModel {
    /// 11 of 1000 files failed at 48 GB; no failures are assumed at 64 GB.
    fn default() -> Self {
        FailureModel {
            oom_probability_by_ram: vec![
                OomTier {
                    ram_gb: 48.0,
                    probability: 0.011,
                },
                OomTier {
                    ram_gb: 64.0,
                    probability: 0.0,
                },
            ],
            retry_on_oom: false,
            max_attempts: default_max_attempts(),
            ram_ladder: default_ram_ladder(),
        }
    }
}

impl FailureModel {
    pub fn none() -> Self {
        FailureModel {
            oom_probability_by_ram: vec![OomTier {
                ram_gb: 1.0,
                probability: 0.0,
            }],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.oom_probability_by_ram.is_empty() {
            return Err(config_err("failure.oom_probability_by_ram", "needs at least one tier"));
        }
        for t in &self.oom_probability_by_ram {
            if !(0.0..=1.0).contains(&t.probability) {
                return Err(config_err("failure.oom_probability_by_ram", "probabilities must lie in [0, 1]"));
            }
            if !(t.ram_gb > 0.0 && t.ram_gb.is_finite()) {
                return Err(config_err("failure.oom_probability_by_ram", "RAM must be positive"));
            }
        }
        if self.max_attempts == 0 {
            return Err(config_err("failure.max_attempts", "must be at least 1"));
        }
        if self.ram_ladder.iter().any(|r| !(*r > 0.0)) {
            return Err(config_err("failure.ram_ladder", "RAM sizes must be positive"));
        }
        Ok(())
    }

    /// Probability of the largest tier not above `ram_gb` (the smallest tier
    /// when every tier is larger).
    pub fn probability_for(&self, ram_gb: f64) -> f64 {
        let mut tiers: Vec<_> = self.oom_probability_by_ram.clone();
        tiers.sort_by(|a, b| a.ram_gb.total_cmp(&b.ram_gb));
        tiers
            .iter()
            .rev()
            .find(|t| t.ram_gb <= ram_gb)
            .or(tiers.first())
            .map(|t| t.probability)
            .unwrap_or(0.0)
    }

    /// Whether a file that has now run out of memory `oom_failures` times
    /// goes back to the queue. Interruptions do not count.
    pub fn should_retry(&self, oom_failures: u32) -> bool {
        self.retry_on_oom && oom_failures < self.max_attempts
    }

    /// RAM used after `escalations` out-of-memory failures.
    pub fn ram_for(&self, base_ram_gb: f64, escalations: u32) -> f64 {
        let mut ladder = self.ram_ladder.clone();
        ladder.sort_by(f64::total_cmp);
        let mut ram = base_ram_gb;
        for _ in 0..escalations {
            match ladder.iter().find(|r| **r > ram) {
                Some(next) => ram = *next,
                None => break,
            }
        }
        ram
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThroughputModel {
    /// FASTQ GB aligned per task-hour on the VM baseline.
    pub align_gb_per_hour: f64,
    /// FASTQ GB per task-hour through download, conversion and upload.
    pub other_gb_per_hour: f64,
    /// Part of the non-alignment time spent downloading; the rest converts.
    #[serde(default = "default_download_share")]
    pub download_share: f64,
}

fn default_download_share() -> f64 {
    0.5
}

impl ThroughputModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.align_gb_per_hour) || !positive(self.other_gb_per_hour) {
            return Err(config_err("throughput", "rates must be positive"));
        }
        if !(0.0..=1.0).contains(&self.download_share) {
            return Err(config_err("throughput.download_share", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// A measured run used to calibrate stage rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceRun {
    pub task_hours: f64,
    pub backend: BackendProfile,
    pub workers: usize,
    #[serde(default = "default_download_share")]
    pub download_share: f64,
}

impl ReferenceRun {
    /// 138.6 task-hours on 20 r7a.2xlarge instances.
    pub fn ec2_r7a() -> Self {
        ReferenceRun {
            task_hours: 138.6,
            backend: BackendProfile::vm(),
            workers: 20,
            download_share: default_download_share(),
        }
    }
}

/// Derives stage rates so that simulating `workload` on the reference
/// backend reproduces the reference task-hours, with alignment taking
/// `align_fraction` of per-file time.
///
/// Expected index-load time for the reference pool is subtracted first.
pub fn calibrate_throughput(workload: &WorkloadSpec, reference: &ReferenceRun) -> Result<ThroughputModel, SimError> {
    workload.validate()?;
    reference.backend.validate()?;
    if reference.workers == 0 {
        return Err(config_err("reference.workers", "must be at least 1"));
    }
    let entries = workload.entries()?;
    let total_fastq: f64 = entries.iter().map(|e| estimate_fastq_size(e, workload)).sum();
    let backend = &reference.backend;
    let loads = reference.workers.min(entries.len()) as f64;
    let overhead_h = loads * workload.index.load_time_s.mean_s() * backend.speed_factor / 3600.0;
    let per_file_h = reference.task_hours - overhead_h;
    if !(per_file_h > 0.0) {
        return Err(SimError::Calibration {
            reference_h: reference.task_hours,
            overhead_h,
        });
    }
    let f = workload.align_fraction;
    let d = reference.download_share;
    let s_align = backend.stage_factor(backend.stage_speed.align);
    let s_other = d * backend.stage_factor(backend.stage_speed.download)
        + (1.0 - d) * backend.stage_factor(backend.stage_speed.convert);
    // Baseline hours per FASTQ GB, before backend slowdown.
    let per_gb_h = per_file_h / (total_fastq * (f * s_align + (1.0 - f) * s_other));
    Ok(ThroughputModel {
        align_gb_per_hour: 1.0 / (f * per_gb_h),
        other_gb_per_hour: 1.0 / ((1.0 - f) * per_gb_h),
        download_share: d,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub name: String,
    pub seed: u64,
    pub workers: usize,
    pub workload: WorkloadSpec,
    pub backend: BackendProfile,
    pub shape: ResourceShape,
    pub failure: FailureModel,
    pub optimization: OptimizationFlags,
    pub throughput: ThroughputModel,
    pub pricing: PricingTable,
}

impl CampaignConfig {
    fn reference(name: &str, backend: BackendProfile, shape: ResourceShape) -> Self {
        let workload = WorkloadSpec::human_default();
        let throughput =
            calibrate_throughput(&workload, &ReferenceRun::ec2_r7a()).expect("reference run is valid");
        CampaignConfig {
            name: name.to_string(),
            seed: 1,
            workers: 20,
            workload,
            backend,
            shape,
            failure: FailureModel::default(),
            optimization: OptimizationFlags::default(),
            throughput,
            pricing: PricingTable::builtin(),
        }
    }

    /// 20 Fargate tasks with 8 vCPU and 48 GB each.
    pub fn ecs_fargate() -> Self {
        Self::reference("ecs-fargate", BackendProfile::serverless(), ResourceShape::ecs_task())
    }

    /// 20 r7a.2xlarge instances.
    pub fn ec2_r7a() -> Self {
        Self::reference("ec2-r7a", BackendProfile::vm(), ResourceShape::r7a_2xlarge())
    }

    /// The ECS setup on Fargate Spot.
    pub fn ecs_fargate_spot() -> Self {
        Self::reference("ecs-fargate-spot", BackendProfile::serverless_spot(), ResourceShape::ecs_task())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.workers == 0 {
            return Err(config_err("workers", "at least one worker is required"));
        }
        self.workload.validate()?;
        self.backend.validate()?;
        self.failure.validate()?;
        self.throughput.validate()?;
        self.optimization
            .validate()
            .map_err(|(f, r)| config_err(f, r))?;
        self.shape.validate().map_err(|(f, r)| config_err(f, r))?;
        if self.backend.kind == BackendKind::Vm && self.shape.instance_type.is_none() {
            return Err(config_err("shape.instance_type", "required for the vm backend"));
        }
        if let Some(ty) = &self.shape.instance_type {
            if self.backend.kind == BackendKind::Vm && !self.pricing.vm_rates.contains_key(ty) {
                return Err(config_err("shape.instance_type", format!("no price for `{ty}`")));
            }
        }
        Ok(())
    }

    /// Seconds per FASTQ GB for each stage on this backend.
    pub fn stage_rates(&self) -> StageRates {
        let b = &self.backend;
        let t = &self.throughput;
        let other_s = 3600.0 / t.other_gb_per_hour;
        StageRates {
            download_s_per_gb: other_s * t.download_share * b.stage_factor(b.stage_speed.download),
            convert_s_per_gb: other_s * (1.0 - t.download_share) * b.stage_factor(b.stage_speed.convert),
            align_s_per_gb: 3600.0 / t.align_gb_per_hour * b.stage_factor(b.stage_speed.align),
            finalize_s_per_gb: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerFileResult {
    pub accession: String,
    pub worker: WorkerId,
    pub attempts: u32,
    pub interruptions: u32,
    pub oom_failures: u32,
    #[serde(flatten)]
    pub stage_times: StageTimes,
    pub outcome: FileOutcome,
    pub peak_disk_gb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub schema: String,
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub backend: BackendKind,
    pub worker_count: usize,
    pub makespan_s: f64,
    pub aggregate_task_hours: f64,
    pub index_loads: u32,
    pub interruptions: u32,
    pub per_file: Vec<PerFileResult>,
    pub workers: Vec<WorkerStats>,
    pub cost: CostBreakdown,
}

impl SimResult {
    pub fn count(&self, outcome: FileOutcome) -> usize {
        self.per_file.iter().filter(|f| f.outcome == outcome).count()
    }

    pub fn total_stage_times(&self) -> StageTimes {
        let mut t = StageTimes::default();
        for f in &self.per_file {
            t.add(&f.stage_times);
        }
        t
    }
}

/// Largest-first queue of pending files; equal sizes go in manifest order.
#[derive(Debug, Default)]
pub(crate) struct LptQueue {
    heap: BinaryHeap<Pending>,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    size: f64,
    index: usize,
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.size
            .total_cmp(&other.size)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl LptQueue {
    pub(crate) fn push(&mut self, index: usize, size: f64) {
        self.heap.push(Pending { size, index });
    }

    pub(crate) fn pop(&mut self) -> Option<usize> {
        self.heap.pop().map(|p| p.index)
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
struct FileState {
    worker: WorkerId,
    attempts: u32,
    interruptions: u32,
    oom_failures: u32,
    stage_times: StageTimes,
    outcome: Option<FileOutcome>,
    peak_disk_gb: f64,
}

fn dispatch(
    engine: &mut Engine<'_>,
    queue: &mut LptQueue,
    files: &mut [FileState],
    entries: &[FileEntry],
    worker: WorkerId,
) -> Result<(), SimError> {
    let Some(i) = queue.pop() else {
        return engine.terminate(worker);
    };
    let f = &mut files[i];
    f.attempts += 1;
    f.worker = worker;
    let lease = Lease {
        accession: entries[i].accession_id.clone(),
        sra_size_gb: entries[i].sra_size_gb,
        attempt: f.attempts,
        oom_failures: f.oom_failures,
    };
    engine.assign(worker, lease)
}

/// Runs the whole campaign in virtual time.
///
/// Workers provision, load the index, then lease the largest pending file
/// until the queue drains. The pool is capped at the number of files.
pub fn simulate_campaign(cfg: &CampaignConfig) -> Result<SimResult, SimError> {
    cfg.validate()?;
    let entries = cfg.workload.entries()?;
    let pool = cfg.workers.min(entries.len());
    let index_of: std::collections::HashMap<&str, usize> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.accession_id.as_str(), i))
        .collect();

    let mut engine = Engine::new(cfg, 0.0);
    for w in 0..pool {
        engine.add_worker(WorkerId(w as u32))?;
    }
    let mut queue = LptQueue::default();
    for (i, e) in entries.iter().enumerate() {
        queue.push(i, e.sra_size_gb);
    }
    let mut files = vec![FileState::default(); entries.len()];

    while let Some(event) = engine.next_event()? {
        match event {
            EngineEvent::IndexLoaded { worker, accepting, .. } => {
                if accepting {
                    dispatch(&mut engine, &mut queue, &mut files, &entries, worker)?;
                } else if queue.is_empty() {
                    engine.terminate(worker)?;
                }
            }
            EngineEvent::Finished {
                worker,
                lease,
                record,
                can_continue,
            } => {
                let i = index_of[lease.accession.as_str()];
                let f = &mut files[i];
                f.stage_times.add(&record.stage_times);
                f.peak_disk_gb = f.peak_disk_gb.max(record.peak_disk_gb);
                if record.outcome == FileOutcome::FailedOom {
                    f.oom_failures += 1;
                }
                if record.outcome == FileOutcome::FailedOom && cfg.failure.should_retry(f.oom_failures) {
                    queue.push(i, entries[i].sra_size_gb);
                } else {
                    f.outcome = Some(record.outcome);
                }
                if can_continue {
                    dispatch(&mut engine, &mut queue, &mut files, &entries, worker)?;
                } else if queue.is_empty() {
                    engine.terminate(worker)?;
                }
            }
            EngineEvent::Interrupted { lost, .. } => {
                if let Some((lease, partial)) = lost {
                    let i = index_of[lease.accession.as_str()];
                    let f = &mut files[i];
                    f.stage_times.add(&partial);
                    f.interruptions += 1;
                    queue.push(i, entries[i].sra_size_gb);
                }
            }
        }
    }

    let unresolved = files.iter().filter(|f| f.outcome.is_none()).count();
    if unresolved > 0 {
        return Err(SimError::Stalled(unresolved));
    }

    let workers: Vec<WorkerStats> = engine.stats().cloned().collect();
    let busy_s: f64 = workers.iter().map(|w| w.busy_s).sum();
    let makespan_s = workers
        .iter()
        .filter_map(|w| w.ended_at_s)
        .fold(0.0, f64::max);
    let aggregate_task_hours = busy_s / 3600.0;
    let cost = campaign_cost(cfg.backend.kind, &cfg.shape, aggregate_task_hours, pool, &cfg.pricing)?;
    let per_file = entries
        .iter()
        .zip(files)
        .map(|(e, f)| PerFileResult {
            accession: e.accession_id.clone(),
            worker: f.worker,
            attempts: f.attempts,
            interruptions: f.interruptions,
            oom_failures: f.oom_failures,
            stage_times: f.stage_times,
            outcome: f.outcome.expect("checked above"),
            peak_disk_gb: f.peak_disk_gb,
        })
        .collect();

    Ok(SimResult {
        schema: SIM_RESULT_SCHEMA.to_string(),
        schema_version: SIM_RESULT_VERSION,
        name: cfg.name.clone(),
        seed: cfg.seed,
        backend: cfg.backend.kind,
        worker_count: pool,
        makespan_s,
        aggregate_task_hours,
        index_loads: workers.iter().map(|w| w.index_loads).sum(),
        interruptions: workers.iter().map(|w| w.interruptions).sum(),
        per_file,
        workers,
        cost,
    })
}
