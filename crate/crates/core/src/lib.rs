//! Planning, costing and simulation of large RNA-seq alignment campaigns on
//! serverless container platforms.

// Range checks are written `!(x > 0.0)` on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod catalog;
pub mod config;
pub mod cost;
pub mod dispatcher;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod workload;

pub use catalog::{check_feasibility, Catalog, FeasibilityReport, ServiceSpec, Verdict};
pub use cost::{campaign_cost, BackendKind, CostBreakdown, PricingTable, ResourceShape};
pub use sim::{calibrate_throughput, simulate_campaign, CampaignConfig, SimResult};
pub use workload::{FileEntry, WorkloadSpec};
