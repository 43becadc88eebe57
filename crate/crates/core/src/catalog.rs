//! Serverless service constraint models and the feasibility rule engine.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::{storage_demand, FileEntry, WorkloadError, WorkloadSpec};

pub const CATALOG_SCHEMA: &str = "star-campaign/catalog";
pub const CATALOG_VERSION: u32 = 1;

const GIB_IN_GB: f64 = 1.073_741_824;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("service `{0}` declares no storage options")]
    NoStorageOptions(String),
    #[error("service `{service}`: {reason}")]
    InvalidService { service: String, reason: String },
    #[error("cannot parse quantity `{input}`: {reason}")]
    Quantity { input: String, reason: String },
    #[error("unsupported catalog schema `{schema}` version {version}")]
    Schema { schema: String, version: u32 },
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

/// A limit that is either a finite bound or explicitly absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Limit {
    Bounded(f64),
    Unbounded,
}

impl Limit {
    pub fn admits(&self, value: f64) -> bool {
        match self {
            Limit::Bounded(cap) => value <= *cap,
            Limit::Unbounded => true,
        }
    }

    pub fn bounded(&self) -> Option<f64> {
        match self {
            Limit::Bounded(v) => Some(*v),
            Limit::Unbounded => None,
        }
    }
}

impl fmt::Display for Limit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Limit::Bounded(v) => write!(f, "{v}"),
            Limit::Unbounded => f.write_str("unbounded"),
        }
    }
}

/// Converts a `"<number> <unit>"` string (or `unbounded`) into seconds or
/// decimal gigabytes. Units: s, min, h, day(s); MB, GB, TB, MiB, GiB, TiB.
pub fn parse_quantity(input: &str, dimension: Dimension) -> Result<Limit, CatalogError> {
    let err = |reason: &str| CatalogError::Quantity {
        input: input.to_string(),
        reason: reason.to_string(),
    };
    let text = input.trim();
    if text.eq_ignore_ascii_case("unbounded") {
        return Ok(Limit::Unbounded);
    }
    let split = text
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '_'))
        .unwrap_or(text.len());
    let (number, unit) = text.split_at(split);
    let value: f64 = number
        .replace('_', "")
        .parse()
        .map_err(|_| err("missing or malformed number"))?;
    let factor = match (dimension, unit.trim()) {
        (Dimension::Duration, "s" | "sec" | "seconds") => 1.0,
        (Dimension::Duration, "min" | "minutes") => 60.0,
        (Dimension::Duration, "h" | "hour" | "hours") => 3600.0,
        (Dimension::Duration, "day" | "days" | "d") => 86_400.0,
        (Dimension::Size, "MB") => 1e-3,
        (Dimension::Size, "GB") => 1.0,
        (Dimension::Size, "TB") => 1e3,
        (Dimension::Size, "MiB") => GIB_IN_GB / 1024.0,
        (Dimension::Size, "GiB") => GIB_IN_GB,
        (Dimension::Size, "TiB") => GIB_IN_GB * 1024.0,
        (_, "") => return Err(err("missing unit")),
        _ => return Err(err("unknown unit")),
    };
    let v = value * factor;
    if !(v > 0.0 && v.is_finite()) {
        return Err(err("bounded quantities must be positive"));
    }
    Ok(Limit::Bounded(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Duration,
    Size,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StorageKind {
    Block,
    Ephemeral,
    NetworkFs,
    Object,
}

impl StorageKind {
    pub fn high_io_suitable(self) -> bool {
        matches!(self, StorageKind::Block | StorageKind::Ephemeral)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StorageOption {
    pub kind: StorageKind,
    pub max_capacity_gb: Limit,
}

impl StorageOption {
    pub fn high_io_suitable(&self) -> bool {
        self.kind.high_io_suitable()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceSpec {
    pub name: String,
    pub max_task_duration_s: Limit,
    pub max_ram_gb: f64,
    pub storage_options: Vec<StorageOption>,
    pub notes: String,
}

impl ServiceSpec {
    pub fn validate(&self) -> Result<(), CatalogError> {
        if self.storage_options.is_empty() {
            return Err(CatalogError::NoStorageOptions(self.name.clone()));
        }
        let bad = |reason: &str| CatalogError::InvalidService {
            service: self.name.clone(),
            reason: reason.to_string(),
        };
        if !(self.max_ram_gb > 0.0 && self.max_ram_gb.is_finite()) {
            return Err(bad("max RAM must be positive"));
        }
        if let Limit::Bounded(d) = self.max_task_duration_s {
            if !(d > 0.0) {
                return Err(bad("max duration must be positive"));
            }
        }
        for opt in &self.storage_options {
            if let Limit::Bounded(c) = opt.max_capacity_gb {
                if !(c > 0.0) {
                    return Err(bad("bounded storage capacity must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Verdicts order as `Infeasible < Conditional < Feasible`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Infeasible,
    Conditional,
    Feasible,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Infeasible => "Infeasible",
            Verdict::Conditional => "Conditional",
            Verdict::Feasible => "Feasible",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReasonCode {
    IndexExceedsRam,
    InsufficientRamHeadroom,
    NoHighIoStorage,
    StorageTooSmall,
    ExecutionTimeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reason {
    pub code: ReasonCode,
    /// Hard reasons rule the service out for every file in the workload.
    pub hard: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub service: String,
    pub verdict: Verdict,
    pub reasons: Vec<Reason>,
}

impl FeasibilityReport {
    fn from_reasons(service: &str, reasons: Vec<Reason>) -> Self {
        let verdict = if reasons.iter().any(|r| r.hard) {
            Verdict::Infeasible
        } else if reasons.is_empty() {
            Verdict::Feasible
        } else {
            Verdict::Conditional
        };
        FeasibilityReport {
            service: service.to_string(),
            verdict,
            reasons,
        }
    }

    pub fn has(&self, code: ReasonCode) -> bool {
        self.reasons.iter().any(|r| r.code == code)
    }
}

/// Matches a workload against a service's limits.
///
/// Storage is satisfied by any high-IO option large enough for the biggest
/// file's peak footprint, or by RAM left over after the aligner's working
/// set (in-memory scratch filesystems).
pub fn check_feasibility(
    service: &ServiceSpec,
    workload: &WorkloadSpec,
) -> Result<FeasibilityReport, CatalogError> {
    service.validate()?;
    workload.validate()?;
    let entries = workload.entries()?;
    let by_size = |a: &&FileEntry, b: &&FileEntry| a.sra_size_gb.total_cmp(&b.sra_size_gb);
    let smallest = entries.iter().min_by(by_size).expect("validated nonempty");
    let largest = entries.iter().max_by(by_size).expect("validated nonempty");

    let mut reasons = Vec::new();
    let index_gb = workload.index.size_gb;
    if service.max_ram_gb < index_gb {
        reasons.push(Reason {
            code: ReasonCode::IndexExceedsRam,
            hard: true,
            detail: format!(
                "index needs {index_gb:.1} GB resident, service allows {:.1} GB",
                service.max_ram_gb
            ),
        });
    } else {
        let working = workload.working_memory_gb();
        if service.max_ram_gb < working {
            reasons.push(Reason {
                code: ReasonCode::InsufficientRamHeadroom,
                hard: false,
                detail: format!(
                    "aligner working set {working:.1} GB exceeds {:.1} GB RAM",
                    service.max_ram_gb
                ),
            });
        }
    }

    let demand = storage_demand(largest, workload);
    let spare_ram = service.max_ram_gb - workload.working_memory_gb();
    let high_io: Vec<_> = service
        .storage_options
        .iter()
        .filter(|o| o.high_io_suitable())
        .collect();
    let fits_high_io = high_io.iter().any(|o| o.max_capacity_gb.admits(demand));
    if !fits_high_io && spare_ram < demand {
        if high_io.is_empty() {
            reasons.push(Reason {
                code: ReasonCode::NoHighIoStorage,
                hard: false,
                detail: format!(
                    "only network/object storage; peak footprint {demand:.1} GB does not fit in spare RAM"
                ),
            });
        } else {
            let best = high_io
                .iter()
                .filter_map(|o| o.max_capacity_gb.bounded())
                .fold(0.0, f64::max);
            reasons.push(Reason {
                code: ReasonCode::StorageTooSmall,
                hard: false,
                detail: format!(
                    "largest file needs {demand:.1} GB of scratch, best option holds {best:.1} GB"
                ),
            });
        }
    }

    if let Limit::Bounded(limit) = service.max_task_duration_s {
        let load = workload.index.load_time_s;
        let shortest = load.min_s + workload.estimated_file_time_s(smallest);
        let longest = load.max_s + workload.estimated_file_time_s(largest);
        if limit < shortest {
            reasons.push(Reason {
                code: ReasonCode::ExecutionTimeLimit,
                hard: true,
                detail: format!(
                    "even the smallest file needs {shortest:.0} s with index load, limit is {limit:.0} s"
                ),
            });
        } else if limit < longest {
            reasons.push(Reason {
                code: ReasonCode::ExecutionTimeLimit,
                hard: false,
                detail: format!(
                    "largest file needs {longest:.0} s with index load, limit is {limit:.0} s"
                ),
            });
        }
    }

    Ok(FeasibilityReport::from_reasons(&service.name, reasons))
}

// --- file format -----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCatalog {
    schema: String,
    version: u32,
    services: Vec<RawService>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawService {
    name: String,
    max_task_duration: String,
    max_ram: String,
    storage: Vec<RawStorage>,
    #[serde(default)]
    notes: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStorage {
    kind: StorageKind,
    max_capacity: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub services: Vec<ServiceSpec>,
}

impl Catalog {
    /// The four services compared for STAR alignment, in table order.
    pub fn builtin() -> Self {
        DEFAULT_CATALOG_YAML
            .parse()
            .expect("shipped catalog is valid")
    }

    pub fn service(&self, name: &str) -> Option<&ServiceSpec> {
        self.services.iter().find(|s| s.name == name)
    }

    pub fn check_all(&self, workload: &WorkloadSpec) -> Result<Vec<FeasibilityReport>, CatalogError> {
        self.services
            .iter()
            .map(|s| check_feasibility(s, workload))
            .collect()
    }
}

pub const DEFAULT_CATALOG_YAML: &str = include_str!("../configs/catalog.yaml");

impl FromStr for Catalog {
    type Err = crate::config::ConfigError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let raw: RawCatalog = crate::config::parse_structured(text)?;
        let at = |path: String, err: CatalogError| crate::config::ConfigError::field(text, path, err.to_string());
        if raw.schema != CATALOG_SCHEMA || raw.version != CATALOG_VERSION {
            return Err(at(
                "schema".into(),
                CatalogError::Schema {
                    schema: raw.schema,
                    version: raw.version,
                },
            ));
        }
        let mut services = Vec::with_capacity(raw.services.len());
        for (i, s) in raw.services.into_iter().enumerate() {
            let duration = parse_quantity(&s.max_task_duration, Dimension::Duration)
                .map_err(|e| at(format!("services[{i}].max_task_duration"), e))?;
            let ram = match parse_quantity(&s.max_ram, Dimension::Size)
                .map_err(|e| at(format!("services[{i}].max_ram"), e))?
            {
                Limit::Bounded(v) => v,
                Limit::Unbounded => {
                    return Err(at(
                        format!("services[{i}].max_ram"),
                        CatalogError::InvalidService {
                            service: s.name.clone(),
                            reason: "RAM must be bounded".into(),
                        },
                    ))
                }
            };
            let mut storage_options = Vec::with_capacity(s.storage.len());
            for (j, o) in s.storage.iter().enumerate() {
                let cap = parse_quantity(&o.max_capacity, Dimension::Size)
                    .map_err(|e| at(format!("services[{i}].storage[{j}].max_capacity"), e))?;
                storage_options.push(StorageOption {
                    kind: o.kind,
                    max_capacity_gb: cap,
                });
            }
            let spec = ServiceSpec {
                name: s.name,
                max_task_duration_s: duration,
                max_ram_gb: ram,
                storage_options,
                notes: s.notes,
            };
            spec.validate()
                .map_err(|e| at(format!("services[{i}].storage"), e))?;
            services.push(spec);
        }
        Ok(Catalog { services })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{FileSet, IndexSpec, LoadInterval};

    fn human() -> WorkloadSpec {
        WorkloadSpec::human_default()
    }

    fn small_genome() -> WorkloadSpec {
        // 2 GB index; largest FASTQ 5 GB.
        let sra = 5.0 / crate::workload::DEFAULT_EXPANSION_FACTOR;
        WorkloadSpec {
            index: IndexSpec {
                genome_label: "small".into(),
                size_gb: 2.0,
                load_time_s: LoadInterval {
                    min_s: 20.0,
                    max_s: 40.0,
                },
            },
            files: FileSet::Manifest {
                entries: vec![FileEntry::new("a", sra), FileEntry::new("b", sra / 2.0)],
                declared_total_gb: None,
                declared_max_gb: None,
            },
            ..human()
        }
    }

    fn builtin(name: &str) -> ServiceSpec {
        Catalog::builtin().service(name).unwrap().clone()
    }

    #[test]
    fn quantities() {
        assert_eq!(parse_quantity("15 min", Dimension::Duration).unwrap(), Limit::Bounded(900.0));
        assert_eq!(parse_quantity("14 days", Dimension::Duration).unwrap(), Limit::Bounded(14.0 * 86400.0));
        let Limit::Bounded(gib) = parse_quantity("32 GiB", Dimension::Size).unwrap() else {
            panic!()
        };
        assert!((gib - 34.359_738_368).abs() < 1e-9);
        assert_eq!(parse_quantity("unbounded", Dimension::Size).unwrap(), Limit::Unbounded);
        assert!(parse_quantity("10", Dimension::Size).is_err());
        assert!(parse_quantity("10 parsecs", Dimension::Size).is_err());
        assert!(parse_quantity("0 GB", Dimension::Size).is_err());
        assert!(parse_quantity("GB", Dimension::Size).is_err());
        assert!(parse_quantity("10 GB", Dimension::Duration).is_err());
    }

    #[test]
    fn lambda_and_azure_are_ruled_out() {
        for name in ["AWS Lambda", "Azure Functions"] {
            let r = check_feasibility(&builtin(name), &human()).unwrap();
            assert_eq!(r.verdict, Verdict::Infeasible, "{name}");
            assert!(r.has(ReasonCode::IndexExceedsRam), "{name}");
        }
    }

    #[test]
    fn cloud_run_is_conditional_for_human() {
        let r = check_feasibility(&builtin("Google Cloud Run"), &human()).unwrap();
        assert_eq!(r.verdict, Verdict::Conditional);
        assert!(r.has(ReasonCode::InsufficientRamHeadroom));
        assert!(r.has(ReasonCode::NoHighIoStorage));
    }

    #[test]
    fn ecs_fargate_is_feasible() {
        let r = check_feasibility(&builtin("AWS ECS + Fargate"), &human()).unwrap();
        assert_eq!(r.verdict, Verdict::Feasible);
        assert!(r.reasons.is_empty());
    }

    #[test]
    fn cloud_run_small_genome_is_feasible() {
        let r = check_feasibility(&builtin("Google Cloud Run"), &small_genome()).unwrap();
        assert_eq!(r.verdict, Verdict::Feasible, "{:?}", r.reasons);
    }

    #[test]
    fn execution_limit_is_hard_when_smallest_file_cannot_finish() {
        let mut svc = builtin("AWS ECS + Fargate");
        svc.max_task_duration_s = Limit::Bounded(100.0);
        let r = check_feasibility(&svc, &human()).unwrap();
        assert_eq!(r.verdict, Verdict::Infeasible);
        assert!(r.reasons.iter().any(|x| x.code == ReasonCode::ExecutionTimeLimit && x.hard));
    }

    #[test]
    fn bounded_block_storage_reports_too_small() {
        let mut svc = builtin("AWS ECS + Fargate");
        svc.storage_options = vec![StorageOption {
            kind: StorageKind::Ephemeral,
            max_capacity_gb: Limit::Bounded(200.0 * GIB_IN_GB),
        }];
        let r = check_feasibility(&svc, &human()).unwrap();
        assert_eq!(r.verdict, Verdict::Conditional);
        assert!(r.has(ReasonCode::StorageTooSmall));
    }

    #[test]
    fn service_without_storage_is_rejected() {
        let mut svc = builtin("AWS Lambda");
        svc.storage_options.clear();
        assert_eq!(
            check_feasibility(&svc, &human()),
            Err(CatalogError::NoStorageOptions("AWS Lambda".into()))
        );
    }

    #[test]
    fn builtin_catalog_declares_cloud_run_preview_limit() {
        let run = builtin("Google Cloud Run");
        assert_eq!(run.max_task_duration_s, Limit::Bounded(3600.0));
        assert!(run.notes.contains("7 days"));
    }
}
