//! Campaign and workload config files.
//!
//! A campaign file names a workload (inline or a path), a backend, a task
//! shape, failure and optimization settings, a throughput model (explicit
//! rates or a reference run to calibrate from) and a pricing table. Paths are
//! resolved against the directory of the file that mentions them.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_yaml::Value;

use crate::agent::OptimizationFlags;
use crate::config::{parse_structured, read_file, ConfigError};
use crate::cost::{PricingTable, ResourceShape};
use crate::sim::{
    calibrate_throughput, BackendProfile, CampaignConfig, FailureModel, ReferenceRun, SimError, ThroughputModel,
};
use crate::workload::{
    parse_manifest, FileEntry, FileSet, IndexSpec, SizeDistribution, WorkloadError, WorkloadSpec,
};

pub const CAMPAIGN_SCHEMA: &str = "star-campaign/campaign";
pub const WORKLOAD_SCHEMA: &str = "star-campaign/workload";
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFiles {
    #[serde(default)]
    distribution: Option<SizeDistribution>,
    /// Path to a TAB-separated manifest.
    #[serde(default)]
    manifest: Option<String>,
    #[serde(default)]
    entries: Option<Vec<FileEntry>>,
    #[serde(default)]
    declared_total_gb: Option<f64>,
    #[serde(default)]
    declared_max_gb: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorkload {
    #[serde(default)]
    schema: Option<String>,
    #[serde(default)]
    version: Option<u32>,
    #[serde(default = "IndexSpec::human_release_111")]
    index: IndexSpec,
    files: RawFiles,
    #[serde(default)]
    expansion_factor: Option<f64>,
    #[serde(default)]
    temp_factor: Option<f64>,
    #[serde(default)]
    align_fraction: Option<f64>,
    #[serde(default)]
    ram_overhead_factor: Option<f64>,
    #[serde(default)]
    fastq_gb_per_hour: Option<f64>,
    #[serde(default)]
    vcpu: Option<u32>,
    #[serde(default)]
    ram_gb: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReference {
    task_hours: f64,
    #[serde(default = "default_reference_workers")]
    workers: usize,
    #[serde(default = "BackendProfile::vm")]
    backend: BackendProfile,
    #[serde(default)]
    download_share: Option<f64>,
}

fn default_reference_workers() -> usize {
    20
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawThroughput {
    #[serde(default)]
    calibrate: Option<RawReference>,
    #[serde(default)]
    align_gb_per_hour: Option<f64>,
    #[serde(default)]
    other_gb_per_hour: Option<f64>,
    #[serde(default)]
    download_share: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCampaign {
    schema: String,
    version: u32,
    name: String,
    #[serde(default = "default_seed")]
    seed: u64,
    workers: usize,
    workload: Value,
    backend: BackendProfile,
    shape: ResourceShape,
    #[serde(default)]
    failure: FailureModel,
    #[serde(default)]
    optimization: OptimizationFlags,
    throughput: RawThroughput,
    /// Path to a pricing file, or `builtin`.
    #[serde(default = "default_pricing")]
    pricing: String,
}

fn default_seed() -> u64 {
    1
}

fn default_pricing() -> String {
    "builtin".to_string()
}

fn resolve(base: Option<&Path>, rel: &str) -> Result<PathBuf, String> {
    let p = Path::new(rel);
    if p.is_absolute() {
        return Ok(p.to_path_buf());
    }
    match base {
        Some(dir) => Ok(dir.join(p)),
        None => Err(format!("relative path `{rel}` needs a config file location")),
    }
}

/// Re-deserializes a nested value, prefixing error paths with `prefix`.
fn from_value<T: DeserializeOwned>(source: &str, prefix: &str, value: Value) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|err| {
        let inner = err.path().to_string();
        let path = if inner == "." {
            prefix.to_string()
        } else {
            format!("{prefix}.{inner}")
        };
        ConfigError::field(source, path, err.into_inner().to_string())
    })
}

fn workload_field(source: &str, prefix: &str, err: WorkloadError) -> ConfigError {
    let field = match &err {
        WorkloadError::Invalid { field, .. } => format!("{prefix}{field}"),
        _ => format!("{prefix}files"),
    };
    ConfigError::field(source, field, err.to_string())
}

fn build_workload(source: &str, prefix: &str, raw: RawWorkload, base: Option<&Path>) -> Result<WorkloadSpec, ConfigError> {
    if let Some(schema) = &raw.schema {
        if schema != WORKLOAD_SCHEMA || raw.version.unwrap_or(0) != CONFIG_VERSION {
            return Err(ConfigError::field(
                source,
                format!("{prefix}schema"),
                format!("unsupported workload schema `{schema}` version {}", raw.version.unwrap_or(0)),
            ));
        }
    }
    let f = raw.files;
    let chosen = [f.distribution.is_some(), f.manifest.is_some(), f.entries.is_some()]
        .iter()
        .filter(|b| **b)
        .count();
    if chosen != 1 {
        return Err(ConfigError::field(
            source,
            format!("{prefix}files"),
            "give exactly one of `distribution`, `manifest` or `entries`",
        ));
    }
    let files = if let Some(d) = f.distribution {
        FileSet::Distribution(d)
    } else {
        let entries = match (f.manifest, f.entries) {
            (Some(rel), _) => {
                let path = resolve(base, &rel)
                    .map_err(|m| ConfigError::field(source, format!("{prefix}files.manifest"), m))?;
                let text = read_file(&path)?;
                parse_manifest(&text).map_err(|e| ConfigError::new(e.to_string()).in_file(&path))?
            }
            (None, Some(entries)) => entries,
            (None, None) => unreachable!("checked above"),
        };
        FileSet::Manifest {
            entries,
            declared_total_gb: f.declared_total_gb,
            declared_max_gb: f.declared_max_gb,
        }
    };
    let d = WorkloadSpec::human_default();
    let w = WorkloadSpec {
        index: raw.index,
        files,
        expansion_factor: raw.expansion_factor.unwrap_or(d.expansion_factor),
        temp_factor: raw.temp_factor.unwrap_or(d.temp_factor),
        align_fraction: raw.align_fraction.unwrap_or(d.align_fraction),
        ram_overhead_factor: raw.ram_overhead_factor.unwrap_or(d.ram_overhead_factor),
        fastq_gb_per_hour: raw.fastq_gb_per_hour.unwrap_or(d.fastq_gb_per_hour),
        vcpu: raw.vcpu.unwrap_or(d.vcpu),
        ram_gb: raw.ram_gb.unwrap_or(d.ram_gb),
    };
    w.validate().map_err(|e| workload_field(source, prefix, e))?;
    Ok(w)
}

/// Parses a workload document. `base` is the directory used to resolve a
/// manifest path.
pub fn parse_workload(text: &str, base: Option<&Path>) -> Result<WorkloadSpec, ConfigError> {
    let raw: RawWorkload = parse_structured(text)?;
    build_workload(text, "", raw, base)
}

pub fn load_workload(path: &Path) -> Result<WorkloadSpec, ConfigError> {
    let text = read_file(path)?;
    parse_workload(&text, path.parent()).map_err(|e| e.in_file(path))
}

pub fn load_pricing(path: &Path) -> Result<PricingTable, ConfigError> {
    let text = read_file(path)?;
    text.parse::<PricingTable>().map_err(|e| e.in_file(path))
}

fn sim_field(source: &str, err: SimError) -> ConfigError {
    match err {
        SimError::Config { field, reason } => ConfigError::field(source, field, reason),
        SimError::Workload(e) => workload_field(source, "workload.", e),
        other => ConfigError::field(source, "throughput", other.to_string()),
    }
}

/// Parses a campaign document. Referenced files are resolved against
/// `base`; without one, only inline workloads and the builtin pricing work.
pub fn parse_campaign(text: &str, base: Option<&Path>) -> Result<CampaignConfig, ConfigError> {
    let raw: RawCampaign = parse_structured(text)?;
    if raw.schema != CAMPAIGN_SCHEMA || raw.version != CONFIG_VERSION {
        return Err(ConfigError::field(
            text,
            "schema",
            format!("unsupported campaign schema `{}` version {}", raw.schema, raw.version),
        ));
    }
    let workload = match raw.workload {
        Value::String(rel) => {
            let path = resolve(base, &rel).map_err(|m| ConfigError::field(text, "workload", m))?;
            load_workload(&path)?
        }
        inline => {
            let w: RawWorkload = from_value(text, "workload", inline)?;
            build_workload(text, "workload.", w, base)?
        }
    };
    let pricing = if raw.pricing == "builtin" {
        PricingTable::builtin()
    } else {
        let path = resolve(base, &raw.pricing).map_err(|m| ConfigError::field(text, "pricing", m))?;
        load_pricing(&path)?
    };
    let t = raw.throughput;
    let throughput = match (t.calibrate, t.align_gb_per_hour, t.other_gb_per_hour) {
        (Some(r), None, None) => {
            let reference = ReferenceRun {
                task_hours: r.task_hours,
                backend: r.backend,
                workers: r.workers,
                download_share: r.download_share.or(t.download_share).unwrap_or(0.5),
            };
            calibrate_throughput(&workload, &reference).map_err(|e| match e {
                SimError::Config { field, reason } => {
                    ConfigError::field(text, format!("throughput.calibrate.{field}"), reason)
                }
                other => ConfigError::field(text, "throughput.calibrate", other.to_string()),
            })?
        }
        (None, Some(align), Some(other)) => ThroughputModel {
            align_gb_per_hour: align,
            other_gb_per_hour: other,
            download_share: t.download_share.unwrap_or(0.5),
        },
        _ => {
            return Err(ConfigError::field(
                text,
                "throughput",
                "give either `calibrate` or both `align_gb_per_hour` and `other_gb_per_hour`",
            ))
        }
    };
    let cfg = CampaignConfig {
        name: raw.name,
        seed: raw.seed,
        workers: raw.workers,
        workload,
        backend: raw.backend,
        shape: raw.shape,
        failure: raw.failure,
        optimization: raw.optimization,
        throughput,
        pricing,
    };
    cfg.validate().map_err(|e| sim_field(text, e))?;
    Ok(cfg)
}

pub fn load_campaign(path: &Path) -> Result<CampaignConfig, ConfigError> {
    let text = read_file(path)?;
    parse_campaign(&text, path.parent()).map_err(|e| e.in_file(path))
}

/// Directory of the scenario files shipped with the crate.
pub fn shipped_configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}
