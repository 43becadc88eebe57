//! Itemized cost estimates for serverless-container, spot and VM execution
//! plus per-worker block-storage volumes.
//!
//! All currency arithmetic is exact decimal; rounding happens only when a
//! value is rendered.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{parse_structured, ConfigError};

pub const PRICING_SCHEMA: &str = "star-campaign/pricing";
pub const PRICING_VERSION: u32 = 1;
pub const DEFAULT_PRICING_YAML: &str = include_str!("../configs/pricing.yaml");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("unknown instance type `{0}`")]
    UnknownInstanceType(String),
    #[error("usage must be a finite nonnegative number of hours, got {0}")]
    InvalidUsage(f64),
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("vm backend needs an instance type on the resource shape")]
    MissingInstanceType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Serverless,
    ServerlessSpot,
    Vm,
}

impl BackendKind {
    pub const ALL: [BackendKind; 3] = [
        BackendKind::Serverless,
        BackendKind::ServerlessSpot,
        BackendKind::Vm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Serverless => "serverless",
            BackendKind::ServerlessSpot => "serverless-spot",
            BackendKind::Vm => "vm",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BackendKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown backend `{s}` (expected serverless, serverless-spot or vm)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingTable {
    pub schema: String,
    pub version: u32,
    #[serde(default)]
    pub region: String,
    pub serverless_vcpu_per_hour: Decimal,
    pub serverless_gb_ram_per_hour: Decimal,
    pub spot_discount: Decimal,
    pub vm_rates: BTreeMap<String, Decimal>,
    pub ebs_gb_month: Decimal,
    pub ebs_throughput_mibps_month: Decimal,
    pub ebs_free_throughput_mibps: Decimal,
    pub ebs_free_iops: Decimal,
    pub ebs_iops_month: Decimal,
    pub hours_per_month: Decimal,
}

impl PricingTable {
    /// us-east-1 on-demand rates shipped with the crate.
    pub fn builtin() -> Self {
        DEFAULT_PRICING_YAML.parse().expect("shipped pricing is valid")
    }

    pub fn validate(&self) -> Result<(), (String, String)> {
        let fail = |f: &str, m: &str| Err((f.to_string(), m.to_string()));
        if self.schema != PRICING_SCHEMA || self.version != PRICING_VERSION {
            return fail("schema", "unsupported pricing schema or version");
        }
        let rates = [
            ("serverless_vcpu_per_hour", self.serverless_vcpu_per_hour),
            ("serverless_gb_ram_per_hour", self.serverless_gb_ram_per_hour),
            ("ebs_gb_month", self.ebs_gb_month),
            ("ebs_throughput_mibps_month", self.ebs_throughput_mibps_month),
            ("ebs_free_throughput_mibps", self.ebs_free_throughput_mibps),
            ("ebs_free_iops", self.ebs_free_iops),
            ("ebs_iops_month", self.ebs_iops_month),
        ];
        for (name, v) in rates {
            if v.is_sign_negative() && !v.is_zero() {
                return fail(name, "rates must be nonnegative");
            }
        }
        for (ty, v) in &self.vm_rates {
            if v.is_sign_negative() && !v.is_zero() {
                return Err((format!("vm_rates.{ty}"), "rates must be nonnegative".into()));
            }
        }
        if self.spot_discount < Decimal::ZERO || self.spot_discount > Decimal::ONE {
            return fail("spot_discount", "must lie in [0, 1]");
        }
        if self.hours_per_month <= Decimal::ZERO {
            return fail("hours_per_month", "must be positive");
        }
        Ok(())
    }
}

impl FromStr for PricingTable {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let table: PricingTable = parse_structured(text)?;
        table
            .validate()
            .map_err(|(field, msg)| ConfigError::field(text, field, msg))?;
        Ok(table)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeSpec {
    pub size_gb: f64,
    pub throughput_mibps: f64,
    pub iops: f64,
}

impl VolumeSpec {
    /// gp3, 550 GB, 500 MiB/s, 3000 IOPS.
    pub fn gp3_550() -> Self {
        VolumeSpec {
            size_gb: 550.0,
            throughput_mibps: 500.0,
            iops: 3000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceShape {
    pub vcpu: u32,
    pub ram_gb: f64,
    #[serde(default)]
    pub volume: Option<VolumeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_type: Option<String>,
}

impl ResourceShape {
    pub fn ecs_task() -> Self {
        ResourceShape {
            vcpu: 8,
            ram_gb: 48.0,
            volume: Some(VolumeSpec::gp3_550()),
            instance_type: None,
        }
    }

    pub fn r7a_2xlarge() -> Self {
        ResourceShape {
            vcpu: 8,
            ram_gb: 64.0,
            volume: Some(VolumeSpec::gp3_550()),
            instance_type: Some("r7a.2xlarge".to_string()),
        }
    }

    pub fn validate(&self) -> Result<(), (&'static str, &'static str)> {
        if self.vcpu == 0 {
            return Err(("shape.vcpu", "must be at least 1"));
        }
        if !(self.ram_gb > 0.0 && self.ram_gb.is_finite()) {
            return Err(("shape.ram_gb", "must be positive"));
        }
        if let Some(v) = &self.volume {
            let ok = |x: f64| x >= 0.0 && x.is_finite();
            if !(v.size_gb > 0.0 && ok(v.size_gb) && ok(v.throughput_mibps) && ok(v.iops)) {
                return Err(("shape.volume", "size must be positive, throughput and IOPS nonnegative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineItem {
    pub label: String,
    pub quantity: Decimal,
    pub unit: String,
    pub rate: Decimal,
    pub usd: Decimal,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub compute_usd: Decimal,
    pub storage_usd: Decimal,
    pub total_usd: Decimal,
    pub line_items: Vec<LineItem>,
}

fn hours(h: f64) -> Result<Decimal, CostError> {
    if !(h >= 0.0 && h.is_finite()) {
        return Err(CostError::InvalidUsage(h));
    }
    Decimal::try_from(h).map_err(|_| CostError::InvalidUsage(h))
}

fn dec(x: f64) -> Decimal {
    Decimal::try_from(x).unwrap_or_default()
}

fn serverless_lines(
    shape: &ResourceShape,
    task_hours: Decimal,
    pricing: &PricingTable,
    spot: bool,
) -> Vec<LineItem> {
    let vcpu_hours = Decimal::from(shape.vcpu) * task_hours;
    let gb_hours = dec(shape.ram_gb) * task_hours;
    let vcpu_usd = vcpu_hours * pricing.serverless_vcpu_per_hour;
    let ram_usd = gb_hours * pricing.serverless_gb_ram_per_hour;
    let mut lines = vec![
        LineItem {
            label: "serverless vCPU".into(),
            quantity: vcpu_hours,
            unit: "vCPU-hour".into(),
            rate: pricing.serverless_vcpu_per_hour,
            usd: vcpu_usd,
        },
        LineItem {
            label: "serverless memory".into(),
            quantity: gb_hours,
            unit: "GB-hour".into(),
            rate: pricing.serverless_gb_ram_per_hour,
            usd: ram_usd,
        },
    ];
    if spot {
        let on_demand = vcpu_usd + ram_usd;
        lines.push(LineItem {
            label: "spot discount".into(),
            quantity: on_demand,
            unit: "USD".into(),
            rate: -pricing.spot_discount,
            usd: -(on_demand * pricing.spot_discount),
        });
    }
    lines
}

/// `(vcpu × vcpu_rate + ram × ram_rate) × hours`, discounted when on spot.
pub fn serverless_compute_cost(
    shape: &ResourceShape,
    task_hours: f64,
    pricing: &PricingTable,
    spot: bool,
) -> Result<Decimal, CostError> {
    let h = hours(task_hours)?;
    Ok(serverless_lines(shape, h, pricing, spot)
        .iter()
        .map(|l| l.usd)
        .sum())
}

fn vm_line(instance_type: &str, h: Decimal, pricing: &PricingTable) -> Result<LineItem, CostError> {
    let rate = *pricing
        .vm_rates
        .get(instance_type)
        .ok_or_else(|| CostError::UnknownInstanceType(instance_type.to_string()))?;
    Ok(LineItem {
        label: format!("{instance_type} on-demand"),
        quantity: h,
        unit: "instance-hour".into(),
        rate,
        usd: rate * h,
    })
}

pub fn vm_compute_cost(
    instance_type: &str,
    instance_hours: f64,
    pricing: &PricingTable,
) -> Result<Decimal, CostError> {
    Ok(vm_line(instance_type, hours(instance_hours)?, pricing)?.usd)
}

fn volume_lines(volume: &VolumeSpec, h: Decimal, pricing: &PricingTable) -> Vec<LineItem> {
    let size = dec(volume.size_gb);
    let throughput = (dec(volume.throughput_mibps) - pricing.ebs_free_throughput_mibps).max(Decimal::ZERO);
    let iops = (dec(volume.iops) - pricing.ebs_free_iops).max(Decimal::ZERO);
    let line = |label: &str, qty: Decimal, unit: &str, rate: Decimal| {
        let quantity = qty * h;
        LineItem {
            label: label.into(),
            quantity,
            unit: unit.into(),
            rate: rate / pricing.hours_per_month,
            usd: qty * rate * h / pricing.hours_per_month,
        }
    };
    vec![
        line("block storage capacity", size, "GB-hour", pricing.ebs_gb_month),
        line(
            "block storage throughput",
            throughput,
            "MiBps-hour",
            pricing.ebs_throughput_mibps_month,
        ),
        line("block storage IOPS", iops, "IOPS-hour", pricing.ebs_iops_month),
    ]
}

/// Capacity plus throughput and IOPS above the free tier, prorated over
/// `volume_hours / hours_per_month`.
pub fn volume_cost(volume: &VolumeSpec, volume_hours: f64, pricing: &PricingTable) -> Result<Decimal, CostError> {
    let h = hours(volume_hours)?;
    Ok(volume_lines(volume, h, pricing).iter().map(|l| l.usd).sum())
}

/// Full breakdown for a campaign. Compute and volumes are both billed on
/// aggregate busy task-hours: each worker's volume lives while it works.
pub fn campaign_cost(
    backend: BackendKind,
    shape: &ResourceShape,
    aggregate_task_hours: f64,
    worker_count: usize,
    pricing: &PricingTable,
) -> Result<CostBreakdown, CostError> {
    if worker_count == 0 {
        return Err(CostError::NoWorkers);
    }
    let h = hours(aggregate_task_hours)?;
    let compute_lines = match backend {
        BackendKind::Serverless => serverless_lines(shape, h, pricing, false),
        BackendKind::ServerlessSpot => serverless_lines(shape, h, pricing, true),
        BackendKind::Vm => {
            let ty = shape
                .instance_type
                .as_deref()
                .ok_or(CostError::MissingInstanceType)?;
            vec![vm_line(ty, h, pricing)?]
        }
    };
    let storage_lines = shape
        .volume
        .as_ref()
        .map(|v| volume_lines(v, h, pricing))
        .unwrap_or_default();
    let compute_usd: Decimal = compute_lines.iter().map(|l| l.usd).sum();
    let storage_usd: Decimal = storage_lines.iter().map(|l| l.usd).sum();
    let mut line_items = compute_lines;
    line_items.extend(storage_lines);
    Ok(CostBreakdown {
        compute_usd,
        storage_usd,
        total_usd: compute_usd + storage_usd,
        line_items,
    })
}

pub fn usd(value: Decimal) -> String {
    format!("{:.2}", value.round_dp(2))
}
