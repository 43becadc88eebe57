use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use star_campaign::config::read_file;
use star_campaign::cost::usd;
use star_campaign::scenario::{load_pricing, load_workload};
use star_campaign::sim::BackendProfile;
use star_campaign::{campaign_cost, BackendKind, Catalog, PricingTable, ResourceShape, WorkloadSpec};

use crate::CliError;

/// One `KIND[:INSTANCE][=HOURS]` item of `--scenarios`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: BackendKind,
    pub instance: Option<String>,
    pub hours: Option<f64>,
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, hours) = match s.split_once('=') {
            Some((h, v)) => {
                let hours: f64 = v.trim().parse().map_err(|_| format!("`{s}`: task-hours `{v}` is not a number"))?;
                if !(hours >= 0.0 && hours.is_finite()) {
                    return Err(format!("`{s}`: task-hours must be nonnegative"));
                }
                (h, Some(hours))
            }
            None => (s, None),
        };
        let (kind, instance) = match head.split_once(':') {
            Some((k, i)) => (k, Some(i.trim().to_string())),
            None => (head, None),
        };
        let kind: BackendKind = kind.trim().parse()?;
        if instance.is_some() && kind != BackendKind::Vm {
            return Err(format!("`{s}`: only vm scenarios take an instance type"));
        }
        Ok(Scenario { kind, instance, hours })
    }
}

pub fn parse_scenarios(list: &str) -> Result<Vec<Scenario>, String> {
    let items: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err("no scenarios given".into());
    }
    items.into_iter().map(str::parse).collect()
}

/// Busy task-hours for the whole manifest at the backend's speed, index
/// loads excluded.
pub fn estimated_hours(workload: &WorkloadSpec, kind: BackendKind) -> Result<f64, String> {
    let speed = match kind {
        BackendKind::Vm => BackendProfile::vm(),
        BackendKind::Serverless => BackendProfile::serverless(),
        BackendKind::ServerlessSpot => BackendProfile::serverless_spot(),
    }
    .speed_factor;
    let entries = workload.entries().map_err(|e| e.to_string())?;
    let seconds: f64 = entries.iter().map(|e| workload.estimated_file_time_s(e)).sum();
    Ok(seconds / 3600.0 * speed)
}

fn shape_for(s: &Scenario, workload: &WorkloadSpec) -> ResourceShape {
    match s.kind {
        BackendKind::Vm => {
            let mut shape = ResourceShape::r7a_2xlarge();
            if let Some(i) = &s.instance {
                shape.instance_type = Some(i.clone());
            }
            shape
        }
        _ => ResourceShape {
            vcpu: workload.vcpu,
            ram_gb: workload.ram_gb,
            ..ResourceShape::ecs_task()
        },
    }
}

pub fn render(catalog: &Catalog, workload: &WorkloadSpec, pricing: &PricingTable, scenarios: &[Scenario]) -> Result<String, CliError> {
    let reports = catalog
        .check_all(workload)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut out = String::new();
    let width = reports.iter().map(|r| r.service.len()).max().unwrap_or(0).max(7) + 2;
    let _ = writeln!(out, "{:<width$}{:<13}reasons", "service", "verdict");
    for r in &reports {
        let reasons: Vec<String> = r
            .reasons
            .iter()
            .map(|x| format!("{}{}", if x.hard { "" } else { "(soft) " }, x.detail))
            .collect();
        let reasons = if reasons.is_empty() { "-".to_string() } else { reasons.join("; ") };
        let _ = writeln!(out, "{:<width$}{:<13}{reasons}", r.service, r.verdict.to_string());
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<28}{:>12}{:>12}{:>12}{:>12}", "scenario", "task-hours", "compute", "storage", "total USD");
    for s in scenarios {
        let (hours, note) = match s.hours {
            Some(h) => (h, ""),
            None => (estimated_hours(workload, s.kind).map_err(CliError::Config)?, " (est.)"),
        };
        let shape = shape_for(s, workload);
        let cost = campaign_cost(s.kind, &shape, hours, 1, pricing).map_err(|e| CliError::Config(e.to_string()))?;
        let label = match &s.instance {
            Some(i) => format!("{}:{i}{note}", s.kind),
            None => match &shape.instance_type {
                Some(i) => format!("{}:{i}{note}", s.kind),
                None => format!("{}{note}", s.kind),
            },
        };
        let _ = writeln!(
            out,
            "{label:<28}{hours:>12.1}{:>12}{:>12}{:>12}",
            usd(cost.compute_usd),
            usd(cost.storage_usd),
            usd(cost.total_usd)
        );
    }
    Ok(out)
}

pub fn run(catalog: &Path, workload: &Path, pricing: &Path, scenarios: &str) -> Result<(), CliError> {
    let scenarios = parse_scenarios(scenarios).map_err(|e| CliError::Config(format!("--scenarios: {e}")))?;
    let cat: Catalog = read_file(catalog)?.parse().map_err(|e: star_campaign::config::ConfigError| e.in_file(catalog))?;
    let workload = load_workload(workload)?;
    let pricing = load_pricing(pricing)?;
    print!("{}", render(&cat, &workload, &pricing, &scenarios)?);
    Ok(())
}
