use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::SimResult;
use crate::agent::{FileOutcome, StageTimes};
use crate::cost::{usd, BackendKind, CostBreakdown};

pub const SUMMARY_SCHEMA: &str = "star-campaign/summary";
pub const SUMMARY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageHours {
    pub download: f64,
    pub convert: f64,
    pub align: f64,
    pub finalize: f64,
}

impl StageHours {
    pub fn from_times(t: &StageTimes) -> Self {
        StageHours {
            download: t.download_s / 3600.0,
            convert: t.convert_s / 3600.0,
            align: t.align_s / 3600.0,
            finalize: t.finalize_s / 3600.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.download + self.convert + self.align + self.finalize
    }
}

/// Campaign-level metrics shared by simulations and dispatcher runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: String,
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub backend: BackendKind,
    pub worker_count: usize,
    pub files: usize,
    pub outcomes: BTreeMap<FileOutcome, usize>,
    pub makespan_h: f64,
    pub aggregate_task_hours: f64,
    pub stage_hours: StageHours,
    /// Alignment time over all per-file stage time.
    pub align_share: f64,
    pub index_load_hours: f64,
    /// Index load time after interruptions.
    pub reload_overhead_hours: f64,
    pub index_loads: u32,
    pub interruptions: u32,
    pub cost: CostBreakdown,
}

pub fn outcome_counts<I: IntoIterator<Item = FileOutcome>>(outcomes: I) -> BTreeMap<FileOutcome, usize> {
    let mut counts: BTreeMap<FileOutcome, usize> = FileOutcome::ALL.iter().map(|o| (*o, 0)).collect();
    for o in outcomes {
        *counts.entry(o).or_default() += 1;
    }
    counts
}

pub fn align_share(hours: &StageHours) -> f64 {
    let total = hours.total();
    if total > 0.0 {
        hours.align / total
    } else {
        0.0
    }
}

pub fn summarize(result: &SimResult) -> Summary {
    let stage_hours = StageHours::from_times(&result.total_stage_times());
    Summary {
        schema: SUMMARY_SCHEMA.to_string(),
        schema_version: SUMMARY_VERSION,
        name: result.name.clone(),
        seed: result.seed,
        backend: result.backend,
        worker_count: result.worker_count,
        files: result.per_file.len(),
        outcomes: outcome_counts(result.per_file.iter().map(|f| f.outcome)),
        makespan_h: result.makespan_s / 3600.0,
        aggregate_task_hours: result.aggregate_task_hours,
        align_share: align_share(&stage_hours),
        stage_hours,
        index_load_hours: result.workers.iter().map(|w| w.index_load_s).sum::<f64>() / 3600.0,
        reload_overhead_hours: result.workers.iter().map(|w| w.reload_s).sum::<f64>() / 3600.0,
        index_loads: result.index_loads,
        interruptions: result.interruptions,
        cost: result.cost.clone(),
    }
}

impl Summary {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "campaign            {}", self.name);
        let _ = writeln!(out, "backend             {}", self.backend);
        let _ = writeln!(out, "seed                {}", self.seed);
        let _ = writeln!(out, "workers             {}", self.worker_count);
        let _ = writeln!(out, "files               {}", self.files);
        let _ = writeln!(out, "makespan            {:.2} h", self.makespan_h);
        let _ = writeln!(out, "aggregate           {:.2} task-hours", self.aggregate_task_hours);
        let _ = writeln!(out, "index loads         {}", self.index_loads);
        let _ = writeln!(out, "index load time     {:.2} h", self.index_load_hours);
        let _ = writeln!(out, "interruptions       {}", self.interruptions);
        let _ = writeln!(out, "reload overhead     {:.2} h", self.reload_overhead_hours);
        let _ = writeln!(out);
        let _ = writeln!(out, "outcome             files");
        for (o, n) in &self.outcomes {
            let _ = writeln!(out, "{:<20}{n}", o.as_str());
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "stage               hours    share");
        let total = self.stage_hours.total();
        for (name, h) in [
            ("download", self.stage_hours.download),
            ("convert", self.stage_hours.convert),
            ("align", self.stage_hours.align),
            ("finalize", self.stage_hours.finalize),
        ] {
            let share = if total > 0.0 { h / total } else { 0.0 };
            let _ = writeln!(out, "{name:<20}{h:<9.2}{share:.3}");
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "cost item                          USD");
        for line in &self.cost.line_items {
            let _ = writeln!(out, "{:<35}{}", line.label, usd(line.usd));
        }
        let _ = writeln!(out, "{:<35}{}", "compute", usd(self.cost.compute_usd));
        let _ = writeln!(out, "{:<35}{}", "storage", usd(self.cost.storage_usd));
        let _ = writeln!(out, "{:<35}{}", "total", usd(self.cost.total_usd));
        out
    }
}
