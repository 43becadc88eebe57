//! Per-worker pipeline: load the index once, then for each file
//! prefetch → convert → align → finalize, with disk accounting and an
//! early-termination probe during alignment.
//!
//! Stage execution is delegated to a [`StageExecutor`]; the simulator
//! supplies virtual-time durations, tests script outcomes with
//! [`MockExecutor`], and [`ShellExecutor`] runs real tools.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::process::Command;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::{estimate_fastq_size, storage_demand, FileEntry, IndexSpec, WorkloadSpec};

const DISK_EPS_GB: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    LoadingIndex,
    Prefetch,
    Convert,
    Align,
    Finalize,
    Done,
    Failed,
}

impl Phase {
    /// The transition relation of the pipeline.
    pub fn can_enter(self, next: Phase) -> bool {
        use Phase::*;
        matches!(
            (self, next),
            (Idle, LoadingIndex)
                | (Idle, Prefetch)
                | (LoadingIndex, Idle)
                | (Prefetch, Convert)
                | (Convert, Align)
                | (Align, Finalize)
                | (Align, Idle)
                | (Finalize, Done)
                | (Done, Idle)
                | (LoadingIndex | Prefetch | Convert | Align | Finalize, Failed)
        )
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    LoadIndex,
    Prefetch,
    Convert,
    Align,
    Finalize,
}

impl Stage {
    fn phase(self) -> Phase {
        match self {
            Stage::LoadIndex => Phase::LoadingIndex,
            Stage::Prefetch => Phase::Prefetch,
            Stage::Convert => Phase::Convert,
            Stage::Align => Phase::Align,
            Stage::Finalize => Phase::Finalize,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("illegal transition {from} -> {to}")]
    IllegalTransition { from: Phase, to: Phase },
    #[error("index must be loaded before processing files")]
    IndexNotLoaded,
    #[error("worker is {0}, expected Idle")]
    NotIdle(Phase),
    #[error("index load failed: {0}")]
    IndexLoadError(String),
    #[error("{stage:?} stage failed: {reason}")]
    ExecutorFailure { stage: Stage, reason: String },
    #[error("disk usage {used_gb:.3} GB exceeds volume {volume_gb:.3} GB")]
    DiskOverflow { used_gb: f64, volume_gb: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub current: Phase,
    pub accession: Option<String>,
    pub disk_used_gb: f64,
    pub index_loaded: bool,
    /// Provisioned volume size; `None` for storage without a fixed cap.
    pub volume_gb: Option<f64>,
}

impl PipelineState {
    pub fn new(volume_gb: Option<f64>) -> Self {
        PipelineState {
            current: Phase::Idle,
            accession: None,
            disk_used_gb: 0.0,
            index_loaded: false,
            volume_gb,
        }
    }

    pub fn free_disk_gb(&self) -> f64 {
        self.volume_gb
            .map(|v| v - self.disk_used_gb)
            .unwrap_or(f64::INFINITY)
    }

    fn enter(&mut self, next: Phase, trail: &mut Vec<Phase>) -> Result<(), AgentError> {
        if !self.current.can_enter(next) {
            return Err(AgentError::IllegalTransition {
                from: self.current,
                to: next,
            });
        }
        self.current = next;
        trail.push(next);
        Ok(())
    }

    fn set_disk(&mut self, used_gb: f64) -> Result<(), AgentError> {
        if let Some(volume) = self.volume_gb {
            if used_gb > volume + DISK_EPS_GB {
                return Err(AgentError::DiskOverflow {
                    used_gb,
                    volume_gb: volume,
                });
            }
        }
        self.disk_used_gb = used_gb;
        Ok(())
    }

    /// Return to a fresh worker after the underlying capacity was reclaimed:
    /// the index and scratch data are gone.
    pub fn reset_after_interruption(&mut self, baseline_disk_gb: f64) {
        self.current = Phase::Idle;
        self.accession = None;
        self.disk_used_gb = baseline_disk_gb;
        self.index_loaded = false;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    OutOfMemory,
    Tool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRequest<'a> {
    pub stage: Stage,
    pub accession: Option<&'a str>,
    pub sra_gb: f64,
    pub fastq_gb: f64,
    /// Upper bound on wall time, when the platform imposes one.
    pub budget_s: Option<f64>,
    /// For alignment with early termination: fraction of the stage at which
    /// the quality probe runs.
    pub probe_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageOutcome {
    Success { elapsed_s: f64 },
    Failure { reason: FailureReason, detail: String, elapsed_s: f64 },
    Abort { at_fraction: f64, elapsed_s: f64 },
}

pub trait StageExecutor {
    fn execute(&mut self, request: &StageRequest<'_>) -> StageOutcome;
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimes {
    pub download_s: f64,
    pub convert_s: f64,
    pub align_s: f64,
    pub finalize_s: f64,
}

impl StageTimes {
    pub fn total_s(&self) -> f64 {
        self.download_s + self.convert_s + self.align_s + self.finalize_s
    }

    pub fn add(&mut self, other: &StageTimes) {
        self.download_s += other.download_s;
        self.convert_s += other.convert_s;
        self.align_s += other.align_s;
        self.finalize_s += other.finalize_s;
    }

    fn slot(&mut self, stage: Stage) -> Option<&mut f64> {
        match stage {
            Stage::Prefetch => Some(&mut self.download_s),
            Stage::Convert => Some(&mut self.convert_s),
            Stage::Align => Some(&mut self.align_s),
            Stage::Finalize => Some(&mut self.finalize_s),
            Stage::LoadIndex => None,
        }
    }

    /// The portion of these stage times elapsed after `elapsed_s` seconds,
    /// running the stages in pipeline order.
    pub fn truncated(&self, elapsed_s: f64) -> StageTimes {
        let mut left = elapsed_s.max(0.0);
        let mut take = |v: f64| {
            let t = v.min(left);
            left -= t;
            t
        };
        StageTimes {
            download_s: take(self.download_s),
            convert_s: take(self.convert_s),
            align_s: take(self.align_s),
            finalize_s: take(self.finalize_s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileOutcome {
    Done,
    FailedOom,
    Abandoned,
    SkippedStorage,
}

impl FileOutcome {
    pub const ALL: [FileOutcome; 4] = [
        FileOutcome::Done,
        FileOutcome::FailedOom,
        FileOutcome::Abandoned,
        FileOutcome::SkippedStorage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FileOutcome::Done => "done",
            FileOutcome::FailedOom => "failed_oom",
            FileOutcome::Abandoned => "abandoned",
            FileOutcome::SkippedStorage => "skipped_storage",
        }
    }
}

impl fmt::Display for FileOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FileOutcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FileOutcome::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| format!("unknown outcome `{s}`"))
    }
}

/// What happened to one file on one worker.
#[derive(Debug, Clone, PartialEq)]
pub struct FileRecord {
    pub accession: String,
    pub stage_times: StageTimes,
    pub outcome: FileOutcome,
    pub peak_disk_gb: f64,
    pub free_disk_at_start_gb: f64,
    pub storage_demand_gb: f64,
    /// Phases entered, in order.
    pub phases: Vec<Phase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizationFlags {
    pub early_termination: bool,
    pub low_quality_fraction: f64,
    pub checkpoint_fraction: f64,
}

impl Default for OptimizationFlags {
    fn default() -> Self {
        OptimizationFlags {
            early_termination: false,
            low_quality_fraction: 0.34,
            checkpoint_fraction: 0.33,
        }
    }
}

impl OptimizationFlags {
    pub fn validate(&self) -> Result<(), (&'static str, &'static str)> {
        if !(self.checkpoint_fraction > 0.0 && self.checkpoint_fraction < 1.0) {
            return Err(("optimization.checkpoint_fraction", "must lie strictly between 0 and 1"));
        }
        if !(0.0..=1.0).contains(&self.low_quality_fraction) {
            return Err(("optimization.low_quality_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Loads the index into memory. A second call on a loaded worker is a no-op
/// taking zero time.
pub fn load_index<E: StageExecutor + ?Sized>(
    state: &mut PipelineState,
    index: &IndexSpec,
    executor: &mut E,
) -> Result<f64, AgentError> {
    if state.index_loaded {
        return Ok(0.0);
    }
    if state.current != Phase::Idle {
        return Err(AgentError::NotIdle(state.current));
    }
    let mut trail = Vec::new();
    state.enter(Phase::LoadingIndex, &mut trail)?;
    let request = StageRequest {
        stage: Stage::LoadIndex,
        accession: None,
        sra_gb: 0.0,
        fastq_gb: index.size_gb,
        budget_s: None,
        probe_at: None,
    };
    match executor.execute(&request) {
        StageOutcome::Success { elapsed_s } => {
            state.index_loaded = true;
            state.enter(Phase::Idle, &mut trail)?;
            Ok(elapsed_s)
        }
        StageOutcome::Failure { detail, .. } => {
            state.enter(Phase::Failed, &mut trail)?;
            Err(AgentError::IndexLoadError(detail))
        }
        StageOutcome::Abort { .. } => {
            state.enter(Phase::Failed, &mut trail)?;
            Err(AgentError::IndexLoadError("load aborted".into()))
        }
    }
}

/// Runs one file through the pipeline.
///
/// Storage is checked up front against the file's peak footprint; a file
/// that cannot fit is recorded as skipped without running any stage. SRA and
/// scratch data are removed right after conversion and the FASTQ after
/// finalize, so disk usage returns to its starting level on every outcome.
pub fn process_file<E: StageExecutor + ?Sized>(
    state: &mut PipelineState,
    entry: &FileEntry,
    workload: &WorkloadSpec,
    executor: &mut E,
    flags: &OptimizationFlags,
) -> Result<FileRecord, AgentError> {
    if state.current != Phase::Idle {
        return Err(AgentError::NotIdle(state.current));
    }
    if !state.index_loaded {
        return Err(AgentError::IndexNotLoaded);
    }
    let sra = entry.sra_size_gb;
    let fastq = estimate_fastq_size(entry, workload);
    let temp = workload.temp_factor * fastq;
    let demand = storage_demand(entry, workload);
    let baseline = state.disk_used_gb;
    let free = state.free_disk_gb();

    let mut record = FileRecord {
        accession: entry.accession_id.clone(),
        stage_times: StageTimes::default(),
        outcome: FileOutcome::SkippedStorage,
        peak_disk_gb: baseline,
        free_disk_at_start_gb: free,
        storage_demand_gb: demand,
        phases: Vec::with_capacity(6),
    };
    if demand > free + DISK_EPS_GB {
        return Ok(record);
    }

    state.accession = Some(entry.accession_id.clone());
    let request = |stage, probe_at| StageRequest {
        stage,
        accession: Some(entry.accession_id.as_str()),
        sra_gb: sra,
        fastq_gb: fastq,
        budget_s: None,
        probe_at,
    };

    for stage in [Stage::Prefetch, Stage::Convert, Stage::Align, Stage::Finalize] {
        state.enter(stage.phase(), &mut record.phases)?;
        let probe = (stage == Stage::Align && flags.early_termination)
            .then_some(flags.checkpoint_fraction);
        let outcome = executor.execute(&request(stage, probe));
        let elapsed = match &outcome {
            StageOutcome::Success { elapsed_s }
            | StageOutcome::Failure { elapsed_s, .. }
            | StageOutcome::Abort { elapsed_s, .. } => *elapsed_s,
        };
        if let Some(slot) = record.stage_times.slot(stage) {
            *slot += elapsed;
        }
        match outcome {
            StageOutcome::Success { .. } => {}
            StageOutcome::Failure {
                reason: FailureReason::OutOfMemory,
                ..
            } if stage == Stage::Align => {
                state.set_disk(baseline)?;
                state.enter(Phase::Idle, &mut record.phases)?;
                state.accession = None;
                record.outcome = FileOutcome::FailedOom;
                return Ok(record);
            }
            StageOutcome::Abort { .. } if stage == Stage::Align => {
                state.set_disk(baseline)?;
                state.enter(Phase::Idle, &mut record.phases)?;
                state.accession = None;
                record.outcome = FileOutcome::Abandoned;
                return Ok(record);
            }
            StageOutcome::Failure { detail, .. } => {
                state.set_disk(baseline)?;
                state.enter(Phase::Failed, &mut record.phases)?;
                return Err(AgentError::ExecutorFailure { stage, reason: detail });
            }
            StageOutcome::Abort { .. } => {
                state.set_disk(baseline)?;
                state.enter(Phase::Failed, &mut record.phases)?;
                return Err(AgentError::ExecutorFailure {
                    stage,
                    reason: "aborted outside alignment".into(),
                });
            }
        }
        match stage {
            Stage::Prefetch => state.set_disk(baseline + sra)?,
            Stage::Convert => {
                state.set_disk(baseline + sra + fastq + temp)?;
                record.peak_disk_gb = state.disk_used_gb;
                state.set_disk(baseline + fastq)?;
            }
            Stage::Finalize => state.set_disk(baseline)?,
            _ => {}
        }
    }
    state.enter(Phase::Done, &mut record.phases)?;
    state.enter(Phase::Idle, &mut record.phases)?;
    state.accession = None;
    record.outcome = FileOutcome::Done;
    Ok(record)
}

// --- executors --------------------------------------------------------------

/// Per-file draws that decide how a simulated file behaves.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FileFate {
    /// Fraction of the alignment stage at which memory runs out.
    pub oom_at: Option<f64>,
    pub low_quality: bool,
}

/// Seconds per FASTQ GB for each stage, already scaled for the backend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageRates {
    pub download_s_per_gb: f64,
    pub convert_s_per_gb: f64,
    pub align_s_per_gb: f64,
    pub finalize_s_per_gb: f64,
}

impl StageRates {
    pub fn nominal(&self, fastq_gb: f64) -> StageTimes {
        StageTimes {
            download_s: self.download_s_per_gb * fastq_gb,
            convert_s: self.convert_s_per_gb * fastq_gb,
            align_s: self.align_s_per_gb * fastq_gb,
            finalize_s: self.finalize_s_per_gb * fastq_gb,
        }
    }
}

/// Virtual-time executor: durations follow from the stage rates, outcomes
/// from the current [`FileFate`].
#[derive(Debug, Clone)]
pub struct SimulatedExecutor {
    pub rates: StageRates,
    pub index_load_s: f64,
    pub fate: FileFate,
}

impl StageExecutor for SimulatedExecutor {
    fn execute(&mut self, req: &StageRequest<'_>) -> StageOutcome {
        let full = match req.stage {
            Stage::LoadIndex => {
                return StageOutcome::Success {
                    elapsed_s: self.index_load_s,
                }
            }
            Stage::Prefetch => self.rates.download_s_per_gb * req.fastq_gb,
            Stage::Convert => self.rates.convert_s_per_gb * req.fastq_gb,
            Stage::Align => self.rates.align_s_per_gb * req.fastq_gb,
            Stage::Finalize => self.rates.finalize_s_per_gb * req.fastq_gb,
        };
        if req.stage != Stage::Align {
            return StageOutcome::Success { elapsed_s: full };
        }
        let probe = req.probe_at.filter(|_| self.fate.low_quality);
        match (self.fate.oom_at, probe) {
            (Some(oom), Some(p)) if oom < p => oom_failure(oom, full),
            (Some(oom), None) => oom_failure(oom, full),
            (_, Some(p)) => StageOutcome::Abort {
                at_fraction: p,
                elapsed_s: p * full,
            },
            (None, None) => StageOutcome::Success { elapsed_s: full },
        }
    }
}

fn oom_failure(at: f64, full: f64) -> StageOutcome {
    StageOutcome::Failure {
        reason: FailureReason::OutOfMemory,
        detail: "aligner exceeded task memory".into(),
        elapsed_s: at * full,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockStep {
    Succeed,
    Fail(FailureReason),
    /// Quality probe reports a low-quality sample.
    LowQuality,
}

/// Scripted executor. Unscripted stages succeed; each stage takes its entry
/// in `durations` (zero when absent).
#[derive(Debug, Clone, Default)]
pub struct MockExecutor {
    pub durations: HashMap<Stage, f64>,
    pub script: VecDeque<(Stage, MockStep)>,
    pub calls: Vec<Stage>,
}

impl MockExecutor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_duration(mut self, stage: Stage, seconds: f64) -> Self {
        self.durations.insert(stage, seconds);
        self
    }

    pub fn then(mut self, stage: Stage, step: MockStep) -> Self {
        self.script.push_back((stage, step));
        self
    }
}

impl StageExecutor for MockExecutor {
    fn execute(&mut self, req: &StageRequest<'_>) -> StageOutcome {
        self.calls.push(req.stage);
        let full = self.durations.get(&req.stage).copied().unwrap_or(0.0);
        let step = match self.script.front() {
            Some((stage, _)) if *stage == req.stage => self.script.pop_front().map(|(_, s)| s),
            _ => None,
        };
        match step {
            None | Some(MockStep::Succeed) => StageOutcome::Success { elapsed_s: full },
            Some(MockStep::Fail(reason)) => StageOutcome::Failure {
                reason,
                detail: format!("scripted {reason:?} failure"),
                elapsed_s: full,
            },
            Some(MockStep::LowQuality) => match req.probe_at {
                Some(p) => StageOutcome::Abort {
                    at_fraction: p,
                    elapsed_s: p * full,
                },
                None => StageOutcome::Success { elapsed_s: full },
            },
        }
    }
}

/// Runs each stage as a shell command built from a template. Placeholders:
/// `{accession}`, `{workdir}`, `{index_dir}`, `{threads}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellTemplates {
    pub load_index: String,
    pub prefetch: String,
    pub convert: String,
    pub align: String,
    pub finalize: String,
}

impl Default for ShellTemplates {
    fn default() -> Self {
        ShellTemplates {
            load_index: "STAR --genomeDir {index_dir} --genomeLoad LoadAndExit".into(),
            prefetch: "prefetch {accession} -O {workdir}".into(),
            convert: "fasterq-dump {workdir}/{accession} -O {workdir} -t {workdir}/tmp -e {threads}"
                .into(),
            align: "STAR --genomeDir {index_dir} --genomeLoad LoadAndKeep --runThreadN {threads} \
                    --readFilesIn {workdir}/{accession}.fastq --outFileNamePrefix {workdir}/{accession}."
                .into(),
            finalize: "rm -f {workdir}/{accession}.fastq".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShellExecutor {
    pub templates: ShellTemplates,
    pub workdir: String,
    pub index_dir: String,
    pub threads: u32,
}

impl ShellExecutor {
    pub fn render(&self, stage: Stage, accession: Option<&str>) -> String {
        let template = match stage {
            Stage::LoadIndex => &self.templates.load_index,
            Stage::Prefetch => &self.templates.prefetch,
            Stage::Convert => &self.templates.convert,
            Stage::Align => &self.templates.align,
            Stage::Finalize => &self.templates.finalize,
        };
        template
            .replace("{accession}", accession.unwrap_or(""))
            .replace("{workdir}", &self.workdir)
            .replace("{index_dir}", &self.index_dir)
            .replace("{threads}", &self.threads.to_string())
    }
}

impl StageExecutor for ShellExecutor {
    fn execute(&mut self, req: &StageRequest<'_>) -> StageOutcome {
        let command = self.render(req.stage, req.accession);
        let started = std::time::Instant::now();
        let status = Command::new("sh").arg("-c").arg(&command).status();
        let elapsed_s = started.elapsed().as_secs_f64();
        match status {
            Ok(s) if s.success() => StageOutcome::Success { elapsed_s },
            // 137 is SIGKILL from the kernel OOM killer.
            Ok(s) if s.code() == Some(137) && req.stage == Stage::Align => StageOutcome::Failure {
                reason: FailureReason::OutOfMemory,
                detail: format!("`{command}` was killed"),
                elapsed_s,
            },
            Ok(s) => StageOutcome::Failure {
                reason: FailureReason::Tool,
                detail: format!("`{command}` exited with {s}"),
                elapsed_s,
            },
            Err(e) => StageOutcome::Failure {
                reason: FailureReason::Tool,
                detail: format!("cannot spawn `{command}`: {e}"),
                elapsed_s,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loaded(volume: f64) -> PipelineState {
        let mut s = PipelineState::new(Some(volume));
        load_index(&mut s, &IndexSpec::human_release_111(), &mut MockExecutor::new()).unwrap();
        s
    }

    #[test]
    fn load_index_once() {
        let mut s = PipelineState::new(Some(550.0));
        let mut exec = MockExecutor::new().with_duration(Stage::LoadIndex, 450.0);
        let index = IndexSpec::human_release_111();
        assert_eq!(load_index(&mut s, &index, &mut exec).unwrap(), 450.0);
        assert!(s.index_loaded);
        assert_eq!(s.current, Phase::Idle);
        assert_eq!(load_index(&mut s, &index, &mut exec).unwrap(), 0.0);
        assert_eq!(exec.calls, vec![Stage::LoadIndex]);
    }

    #[test]
    fn load_index_failure() {
        let mut s = PipelineState::new(Some(550.0));
        let mut exec = MockExecutor::new().then(Stage::LoadIndex, MockStep::Fail(FailureReason::Tool));
        let err = load_index(&mut s, &IndexSpec::human_release_111(), &mut exec).unwrap_err();
        assert!(matches!(err, AgentError::IndexLoadError(_)));
        assert_eq!(s.current, Phase::Failed);
        assert!(!s.index_loaded);
    }

    #[test]
    fn largest_human_file_completes_within_volume() {
        let mut s = loaded(550.0);
        let w = WorkloadSpec::human_default();
        let rec = process_file(
            &mut s,
            &FileEntry::new("SRR_BIG", 28.7),
            &w,
            &mut MockExecutor::new(),
            &OptimizationFlags::default(),
        )
        .unwrap();
        assert_eq!(rec.outcome, FileOutcome::Done);
        assert!((rec.peak_disk_gb - 345.6).abs() < 0.1, "{}", rec.peak_disk_gb);
        assert_eq!(
            rec.phases,
            vec![Phase::Prefetch, Phase::Convert, Phase::Align, Phase::Finalize, Phase::Done, Phase::Idle]
        );
        assert_eq!(s.disk_used_gb, 0.0);
    }

    #[test]
    fn oversized_file_is_skipped_without_running_stages() {
        let mut s = loaded(100.0);
        let mut exec = MockExecutor::new();
        let rec = process_file(
            &mut s,
            &FileEntry::new("SRR_BIG", 28.7),
            &WorkloadSpec::human_default(),
            &mut exec,
            &OptimizationFlags::default(),
        )
        .unwrap();
        assert_eq!(rec.outcome, FileOutcome::SkippedStorage);
        assert!(rec.phases.is_empty());
        assert_eq!(s.current, Phase::Idle);
        assert!(exec.calls.iter().all(|s| *s == Stage::LoadIndex));
    }

    #[test]
    fn low_quality_probe_abandons_at_checkpoint() {
        let mut s = loaded(550.0);
        let mut exec = MockExecutor::new()
            .with_duration(Stage::Align, 1000.0)
            .then(Stage::Align, MockStep::LowQuality);
        let flags = OptimizationFlags {
            early_termination: true,
            ..Default::default()
        };
        let rec = process_file(&mut s, &FileEntry::new("a", 1.0), &WorkloadSpec::human_default(), &mut exec, &flags)
            .unwrap();
        assert_eq!(rec.outcome, FileOutcome::Abandoned);
        assert!((rec.stage_times.align_s - 330.0).abs() < 1e-9);
        assert_eq!(s.disk_used_gb, 0.0);
        assert!(!rec.phases.contains(&Phase::Finalize));
    }

    #[test]
    fn oom_during_align() {
        let mut s = loaded(550.0);
        let mut exec = MockExecutor::new().then(Stage::Align, MockStep::Fail(FailureReason::OutOfMemory));
        let rec = process_file(
            &mut s,
            &FileEntry::new("a", 1.0),
            &WorkloadSpec::human_default(),
            &mut exec,
            &OptimizationFlags::default(),
        )
        .unwrap();
        assert_eq!(rec.outcome, FileOutcome::FailedOom);
        assert_eq!(s.current, Phase::Idle);
    }

    #[test]
    fn tool_failure_leaves_failed_state() {
        let mut s = loaded(550.0);
        let mut exec = MockExecutor::new().then(Stage::Convert, MockStep::Fail(FailureReason::Tool));
        let err = process_file(
            &mut s,
            &FileEntry::new("a", 1.0),
            &WorkloadSpec::human_default(),
            &mut exec,
            &OptimizationFlags::default(),
        )
        .unwrap_err();
        assert!(matches!(err, AgentError::ExecutorFailure { stage: Stage::Convert, .. }));
        assert_eq!(s.current, Phase::Failed);
        assert_eq!(s.disk_used_gb, 0.0);
    }

    #[test]
    fn preconditions() {
        let mut s = PipelineState::new(Some(550.0));
        let err = process_file(
            &mut s,
            &FileEntry::new("a", 1.0),
            &WorkloadSpec::human_default(),
            &mut MockExecutor::new(),
            &OptimizationFlags::default(),
        )
        .unwrap_err();
        assert_eq!(err, AgentError::IndexNotLoaded);
    }

    #[test]
    fn interruption_reset_forces_reload() {
        let mut s = loaded(550.0);
        s.reset_after_interruption(0.0);
        assert!(!s.index_loaded);
        let mut exec = MockExecutor::new().with_duration(Stage::LoadIndex, 300.0);
        assert_eq!(load_index(&mut s, &IndexSpec::human_release_111(), &mut exec).unwrap(), 300.0);
    }

    #[test]
    fn truncation_follows_stage_order() {
        let t = StageTimes {
            download_s: 10.0,
            convert_s: 20.0,
            align_s: 30.0,
            finalize_s: 0.0,
        };
        let cut = t.truncated(25.0);
        assert_eq!((cut.download_s, cut.convert_s, cut.align_s), (10.0, 15.0, 0.0));
        assert_eq!(t.truncated(1e9), t);
    }

    #[test]
    fn shell_template_rendering() {
        let exec = ShellExecutor {
            templates: ShellTemplates::default(),
            workdir: "/data".into(),
            index_dir: "/index".into(),
            threads: 8,
        };
        assert_eq!(exec.render(Stage::Prefetch, Some("SRR1")), "prefetch SRR1 -O /data");
        assert!(exec.render(Stage::Align, Some("SRR1")).contains("--runThreadN 8"));
    }
}
