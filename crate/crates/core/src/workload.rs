//! Data and resource profile of an alignment campaign.
//!
//! A workload couples the genome index with the set of SRA archives to
//! process. File sizes come either from an explicit manifest or from a
//! `(count, total, max)` descriptor that is expanded into a synthetic
//! manifest on demand.

use std::borrow::Cow;
use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

/// FASTQ bytes produced per SRA byte: 17.3 TB of FASTQ from 2.35 TB of SRA.
pub const DEFAULT_EXPANSION_FACTOR: f64 = 7.362;
pub const DEFAULT_TEMP_FACTOR: f64 = 0.5;
/// Midpoint of the 70-75% alignment share of per-file pipeline time.
pub const DEFAULT_ALIGN_FRACTION: f64 = 0.725;
pub const DEFAULT_RAM_OVERHEAD_FACTOR: f64 = 1.6;
/// Overall FASTQ GB per task-hour on the VM baseline, used for time
/// feasibility estimates (17.3 TB over roughly 138 task-hours).
pub const DEFAULT_FASTQ_GB_PER_HOUR: f64 = 125.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("manifest line {line}: {reason}")]
    ManifestLine { line: usize, reason: String },
    #[error("duplicate accession `{0}` in manifest")]
    DuplicateAccession(String),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error(
        "infeasible size descriptor: count={count}, total={total_gb} GB, max={max_gb} GB ({reason})"
    )]
    InfeasibleDescriptor {
        count: usize,
        total_gb: f64,
        max_gb: f64,
        reason: &'static str,
    },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> WorkloadError {
    WorkloadError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Closed interval of index load times, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadInterval {
    pub min_s: f64,
    pub max_s: f64,
}

impl LoadInterval {
    pub fn mean_s(&self) -> f64 {
        0.5 * (self.min_s + self.max_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSpec {
    pub genome_label: String,
    pub size_gb: f64,
    pub load_time_s: LoadInterval,
}

impl IndexSpec {
    /// Human toplevel genome, release 111. Loading takes 5-10 minutes.
    pub fn human_release_111() -> Self {
        IndexSpec {
            genome_label: "Homo sapiens toplevel, release 111".to_string(),
            size_gb: 29.5,
            load_time_s: LoadInterval {
                min_s: 300.0,
                max_s: 600.0,
            },
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if !(self.size_gb > 0.0 && self.size_gb.is_finite()) {
            return Err(invalid("index.size_gb", "must be positive"));
        }
        let LoadInterval { min_s, max_s } = self.load_time_s;
        if !(min_s >= 0.0 && min_s <= max_s && max_s.is_finite()) {
            return Err(invalid(
                "index.load_time_s",
                format!("need 0 <= min <= max, got [{min_s}, {max_s}]"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub accession_id: String,
    pub sra_size_gb: f64,
}

impl FileEntry {
    pub fn new(accession_id: impl Into<String>, sra_size_gb: f64) -> Self {
        FileEntry {
            accession_id: accession_id.into(),
            sra_size_gb,
        }
    }
}

/// `(count, total, max)` description of a file population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeDistribution {
    pub count: usize,
    pub total_gb: f64,
    pub max_gb: f64,
    #[serde(default = "default_manifest_seed")]
    pub seed: u64,
}

fn default_manifest_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileSet {
    Manifest {
        entries: Vec<FileEntry>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        declared_total_gb: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        declared_max_gb: Option<f64>,
    },
    Distribution(SizeDistribution),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub index: IndexSpec,
    pub files: FileSet,
    #[serde(default = "default_expansion")]
    pub expansion_factor: f64,
    #[serde(default = "default_temp")]
    pub temp_factor: f64,
    #[serde(default = "default_align")]
    pub align_fraction: f64,
    #[serde(default = "default_ram_overhead")]
    pub ram_overhead_factor: f64,
    #[serde(default = "default_fastq_rate")]
    pub fastq_gb_per_hour: f64,
    #[serde(default = "default_vcpu")]
    pub vcpu: u32,
    #[serde(default = "default_ram")]
    pub ram_gb: f64,
}

fn default_expansion() -> f64 {
    DEFAULT_EXPANSION_FACTOR
}

fn default_temp() -> f64 {
    DEFAULT_TEMP_FACTOR
}

fn default_align() -> f64 {
    DEFAULT_ALIGN_FRACTION
}

fn default_ram_overhead() -> f64 {
    DEFAULT_RAM_OVERHEAD_FACTOR
}

fn default_fastq_rate() -> f64 {
    DEFAULT_FASTQ_GB_PER_HOUR
}

fn default_vcpu() -> u32 {
    8
}

fn default_ram() -> f64 {
    48.0
}

impl WorkloadSpec {
    /// The human-genome campaign: 1000 SRA files, 2.35 TB in total, largest
    /// 28.7 GB, on 8 vCPU / 48 GB tasks.
    pub fn human_default() -> Self {
        WorkloadSpec {
            index: IndexSpec::human_release_111(),
            files: FileSet::Distribution(SizeDistribution {
                count: 1000,
                total_gb: 2350.0,
                max_gb: 28.7,
                seed: default_manifest_seed(),
            }),
            expansion_factor: DEFAULT_EXPANSION_FACTOR,
            temp_factor: DEFAULT_TEMP_FACTOR,
            align_fraction: DEFAULT_ALIGN_FRACTION,
            ram_overhead_factor: DEFAULT_RAM_OVERHEAD_FACTOR,
            fastq_gb_per_hour: DEFAULT_FASTQ_GB_PER_HOUR,
            vcpu: 8,
            ram_gb: 48.0,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        self.index.validate()?;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.expansion_factor) {
            return Err(invalid("expansion_factor", "must be positive"));
        }
        if !(self.temp_factor >= 0.0 && self.temp_factor.is_finite()) {
            return Err(invalid("temp_factor", "must be nonnegative"));
        }
        if !(self.align_fraction > 0.0 && self.align_fraction < 1.0) {
            return Err(invalid("align_fraction", "must lie strictly between 0 and 1"));
        }
        if !(self.ram_overhead_factor >= 1.0 && self.ram_overhead_factor.is_finite()) {
            return Err(invalid("ram_overhead_factor", "must be at least 1"));
        }
        if !positive(self.fastq_gb_per_hour) {
            return Err(invalid("fastq_gb_per_hour", "must be positive"));
        }
        if self.vcpu == 0 {
            return Err(invalid("vcpu", "must be at least 1"));
        }
        if !positive(self.ram_gb) {
            return Err(invalid("ram_gb", "must be positive"));
        }
        match &self.files {
            FileSet::Manifest {
                entries,
                declared_total_gb,
                declared_max_gb,
            } => {
                validate_manifest(entries)?;
                let total: f64 = entries.iter().map(|e| e.sra_size_gb).sum();
                if let Some(declared) = declared_total_gb {
                    if (total - declared).abs() > 1e-3 * declared.abs() {
                        return Err(invalid(
                            "files.declared_total_gb",
                            format!("manifest sums to {total} GB, declared {declared} GB"),
                        ));
                    }
                }
                if let Some(declared) = declared_max_gb {
                    let max = entries.iter().map(|e| e.sra_size_gb).fold(0.0, f64::max);
                    if (max - declared).abs() > 1e-9 * declared.abs().max(1.0) {
                        return Err(invalid(
                            "files.declared_max_gb",
                            format!("largest entry is {max} GB, declared {declared} GB"),
                        ));
                    }
                }
            }
            FileSet::Distribution(d) => check_descriptor(d.count, d.total_gb, d.max_gb)?,
        }
        Ok(())
    }

    /// Concrete file list, synthesizing one from the descriptor if needed.
    pub fn entries(&self) -> Result<Cow<'_, [FileEntry]>, WorkloadError> {
        match &self.files {
            FileSet::Manifest { entries, .. } => Ok(Cow::Borrowed(entries.as_slice())),
            FileSet::Distribution(d) => {
                generate_synthetic_manifest(d.count, d.total_gb, d.max_gb, d.seed).map(Cow::Owned)
            }
        }
    }

    /// Working memory needed to hold the index plus aligner buffers.
    pub fn working_memory_gb(&self) -> f64 {
        self.index.size_gb * self.ram_overhead_factor
    }

    /// Estimated pipeline time for one file on the VM baseline, excluding
    /// the index load.
    pub fn estimated_file_time_s(&self, entry: &FileEntry) -> f64 {
        estimate_fastq_size(entry, self) / self.fastq_gb_per_hour * 3600.0
    }
}

pub fn estimate_fastq_size(entry: &FileEntry, workload: &WorkloadSpec) -> f64 {
    entry.sra_size_gb * workload.expansion_factor
}

/// Peak simultaneous footprint while converting: the SRA archive, the FASTQ
/// output and the converter's scratch space.
pub fn storage_demand(entry: &FileEntry, workload: &WorkloadSpec) -> f64 {
    let fastq = estimate_fastq_size(entry, workload);
    entry.sra_size_gb + fastq + workload.temp_factor * fastq
}

fn validate_manifest(entries: &[FileEntry]) -> Result<(), WorkloadError> {
    if entries.is_empty() {
        return Err(WorkloadError::EmptyManifest);
    }
    let mut seen = HashSet::with_capacity(entries.len());
    for e in entries {
        if e.accession_id.trim().is_empty() {
            return Err(invalid("files.entries", "empty accession id"));
        }
        if !(e.sra_size_gb > 0.0 && e.sra_size_gb.is_finite()) {
            return Err(invalid(
                "files.entries",
                format!("accession `{}` has non-positive size", e.accession_id),
            ));
        }
        if !seen.insert(e.accession_id.as_str()) {
            return Err(WorkloadError::DuplicateAccession(e.accession_id.clone()));
        }
    }
    Ok(())
}

/// Parses the tab-separated accession manifest (`accession<TAB>size_gb`).
/// Blank lines and lines starting with `#` are ignored.
pub fn parse_manifest(text: &str) -> Result<Vec<FileEntry>, WorkloadError> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(id), Some(size), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(WorkloadError::ManifestLine {
                line: line_no,
                reason: "expected exactly two tab-separated fields".into(),
            });
        };
        let id = id.trim();
        if id.is_empty() {
            return Err(WorkloadError::ManifestLine {
                line: line_no,
                reason: "empty accession id".into(),
            });
        }
        let size: f64 = size.trim().parse().map_err(|_| WorkloadError::ManifestLine {
            line: line_no,
            reason: format!("size `{}` is not a number", size.trim()),
        })?;
        if !(size > 0.0 && size.is_finite()) {
            return Err(WorkloadError::ManifestLine {
                line: line_no,
                reason: format!("size must be positive, got {size}"),
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(WorkloadError::DuplicateAccession(id.to_string()));
        }
        entries.push(FileEntry::new(id, size));
    }
    if entries.is_empty() {
        return Err(WorkloadError::EmptyManifest);
    }
    Ok(entries)
}

pub fn render_manifest(entries: &[FileEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&e.accession_id);
        out.push('\t');
        out.push_str(&e.sra_size_gb.to_string());
        out.push('\n');
    }
    out
}

fn check_descriptor(count: usize, total_gb: f64, max_gb: f64) -> Result<(), WorkloadError> {
    let fail = |reason| WorkloadError::InfeasibleDescriptor {
        count,
        total_gb,
        max_gb,
        reason,
    };
    if count == 0 {
        return Err(fail("count must be at least 1"));
    }
    if !(total_gb > 0.0 && total_gb.is_finite() && max_gb > 0.0 && max_gb.is_finite()) {
        return Err(fail("sizes must be positive and finite"));
    }
    let mean = total_gb / count as f64;
    if max_gb < mean * (1.0 - 1e-12) {
        return Err(fail("max is below the mean"));
    }
    if count == 1 {
        if (max_gb - total_gb).abs() > 0.01 * max_gb {
            return Err(fail("a single file must equal the total"));
        }
    } else if max_gb >= total_gb {
        return Err(fail("max leaves no room for the remaining files"));
    }
    Ok(())
}

/// Synthesizes a deterministic manifest with the given count, total and
/// maximum. Sizes are drawn log-normally (mean = total/count, sigma chosen so
/// the expected sample maximum lands on `max_gb`), the largest is pinned to
/// `max_gb` and the rest rescaled to hit the total exactly.
pub fn generate_synthetic_manifest(
    count: usize,
    total_gb: f64,
    max_gb: f64,
    seed: u64,
) -> Result<Vec<FileEntry>, WorkloadError> {
    check_descriptor(count, total_gb, max_gb)?;
    let name = |i: usize| format!("SYN{:06}", i + 1);
    if count == 1 {
        return Ok(vec![FileEntry::new(name(0), total_gb)]);
    }

    let mean = total_gb / count as f64;
    let sigma = lognormal_sigma(count, mean, max_gb);
    let mu = mean.ln() - 0.5 * sigma * sigma;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes: Vec<f64> = if sigma > 0.0 {
        let dist = LogNormal::new(mu, sigma).expect("sigma is finite and positive");
        (0..count).map(|_| dist.sample(&mut rng)).collect()
    } else {
        vec![mean; count]
    };

    let argmax = sizes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    sizes[argmax] = max_gb;

    // Water-fill the remainder: scale the others to the remaining total,
    // clamping anything that would exceed the maximum.
    let remaining = total_gb - max_gb;
    let mut fixed = vec![false; count];
    fixed[argmax] = true;
    loop {
        let fixed_sum: f64 = (0..count)
            .filter(|&i| fixed[i] && i != argmax)
            .map(|i| sizes[i])
            .sum();
        let free_sum: f64 = (0..count).filter(|&i| !fixed[i]).map(|i| sizes[i]).sum();
        let scale = (remaining - fixed_sum) / free_sum;
        let mut clamped = false;
        for i in 0..count {
            if !fixed[i] {
                sizes[i] *= scale;
                if sizes[i] > max_gb {
                    sizes[i] = max_gb;
                    fixed[i] = true;
                    clamped = true;
                }
            }
        }
        if !clamped || fixed.iter().all(|&f| f) {
            break;
        }
    }

    Ok(sizes
        .into_iter()
        .enumerate()
        .map(|(i, s)| FileEntry::new(name(i), s))
        .collect())
}

/// Smaller root of `sigma^2/2 - z*sigma + ln(max/mean) = 0`, where `z` is the
/// standard-normal quantile of the expected maximum of `count` draws.
fn lognormal_sigma(count: usize, mean: f64, max_gb: f64) -> f64 {
    let ratio = (max_gb / mean).ln();
    if ratio <= 0.0 {
        return 0.0;
    }
    let q = count as f64 / (count as f64 + 1.0);
    let z = Normal::standard().inverse_cdf(q);
    let disc = z * z - 2.0 * ratio;
    if disc <= 0.0 {
        z
    } else {
        z - disc.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_workload(expansion: f64, temp: f64) -> WorkloadSpec {
        WorkloadSpec {
            expansion_factor: expansion,
            temp_factor: temp,
            ..WorkloadSpec::human_default()
        }
    }

    #[test]
    fn fastq_size_of_largest_human_file() {
        let w = WorkloadSpec::human_default();
        let fastq = estimate_fastq_size(&FileEntry::new("a", 28.7), &w);
        assert!((fastq - 211.29).abs() < 0.01, "{fastq}");
        assert!(fastq <= 220.0);
    }

    #[test]
    fn fastq_identity_expansion() {
        let w = unit_workload(1.0, 0.0);
        assert_eq!(estimate_fastq_size(&FileEntry::new("a", 1.0), &w), 1.0);
    }

    #[test]
    fn aggregate_fastq_matches_reported_total() {
        let w = WorkloadSpec::human_default();
        let entries = w.entries().unwrap();
        let fastq: f64 = entries.iter().map(|e| estimate_fastq_size(e, &w)).sum();
        assert!((fastq / 1000.0 - 17.3).abs() < 0.05, "{fastq}");
    }

    #[test]
    fn storage_demand_examples() {
        let w = WorkloadSpec::human_default();
        let d = storage_demand(&FileEntry::new("a", 28.7), &w);
        assert!((d - 345.6).abs() < 0.1, "{d}");
        assert!(d <= 550.0);
        let w = unit_workload(1.0, 0.0);
        assert_eq!(storage_demand(&FileEntry::new("a", 10.0), &w), 20.0);
    }

    #[test]
    fn synthetic_manifest_human_descriptor() {
        let m = generate_synthetic_manifest(1000, 2350.0, 28.7, 42).unwrap();
        assert_eq!(m.len(), 1000);
        let total: f64 = m.iter().map(|e| e.sra_size_gb).sum();
        let max = m.iter().map(|e| e.sra_size_gb).fold(0.0, f64::max);
        assert!((total - 2350.0).abs() <= 2.35, "{total}");
        assert!((max - 28.7).abs() <= 0.287, "{max}");
        assert!(m.iter().all(|e| e.sra_size_gb > 0.0));
    }

    #[test]
    fn synthetic_manifest_forced_cases() {
        let one = generate_synthetic_manifest(1, 10.0, 10.0, 3).unwrap();
        assert_eq!(one, vec![FileEntry::new("SYN000001", 10.0)]);
        let four = generate_synthetic_manifest(4, 40.0, 10.0, 7).unwrap();
        for e in &four {
            assert!((e.sra_size_gb - 10.0).abs() < 1e-9, "{e:?}");
        }
    }

    #[test]
    fn synthetic_manifest_rejects_infeasible() {
        assert!(generate_synthetic_manifest(10, 100.0, 5.0, 1).is_err());
        assert!(generate_synthetic_manifest(0, 100.0, 5.0, 1).is_err());
        assert!(generate_synthetic_manifest(3, 10.0, 10.0, 1).is_err());
        assert!(generate_synthetic_manifest(1, 10.0, 20.0, 1).is_err());
    }

    #[test]
    fn manifest_parsing() {
        let text = "# header\nSRR1\t1.5\n\nSRR2\t28.7\r\n";
        let m = parse_manifest(text).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[1], FileEntry::new("SRR2", 28.7));
        assert_eq!(parse_manifest(&render_manifest(&m)).unwrap(), m);

        let err = parse_manifest("SRR1\t1\nSRR2 2\n").unwrap_err();
        assert!(matches!(err, WorkloadError::ManifestLine { line: 2, .. }));
        assert!(matches!(
            parse_manifest("SRR1\t1\nSRR1\t2\n"),
            Err(WorkloadError::DuplicateAccession(_))
        ));
        assert!(matches!(parse_manifest("SRR1\t-1\n"), Err(WorkloadError::ManifestLine { .. })));
        assert_eq!(parse_manifest("# nothing\n"), Err(WorkloadError::EmptyManifest));
    }

    #[test]
    fn declared_totals_are_checked() {
        let mut w = WorkloadSpec::human_default();
        w.files = FileSet::Manifest {
            entries: vec![FileEntry::new("a", 1.0), FileEntry::new("b", 2.0)],
            declared_total_gb: Some(3.0),
            declared_max_gb: Some(2.0),
        };
        w.validate().unwrap();
        w.files = FileSet::Manifest {
            entries: vec![FileEntry::new("a", 1.0), FileEntry::new("b", 2.0)],
            declared_total_gb: Some(3.1),
            declared_max_gb: None,
        };
        assert!(w.validate().is_err());
    }

    #[test]
    fn align_fraction_bounds() {
        let mut w = WorkloadSpec::human_default();
        w.align_fraction = 1.0;
        assert!(w.validate().is_err());
        w.align_fraction = 0.0;
        assert!(w.validate().is_err());
    }
}
