//! The JSON run summary.

use std::collections::BTreeMap;

use fors_core::metrics::MetricReport;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MethodName};

/// Bumped whenever a field of [`RunReport`] changes meaning or shape.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    /// The sampler stopped early; counts and statistics may be partial.
    Failed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counts {
    pub samples: u64,
    pub outer_iterations: u64,
    pub estimator_draws: u64,
    pub clipped_draws: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_queries: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_queries: Option<u64>,
    /// Number of noise levels `T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule_len: Option<u64>,
    /// Step-size budget `G`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_budget: Option<f64>,
}

/// One row of a method-by-eps comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchRow {
    pub method: MethodName,
    pub eps: f64,
    pub schedule_len: u64,
    pub n_chains: u64,
    pub total_score_queries: u64,
    pub queries_per_chain: f64,
    /// KS distance of coordinate 1 against the analytic `p₁`.
    pub ks: f64,
    pub ks_p_value: f64,
    /// Euclidean distance between the sample mean and the mean of `p₁`.
    pub mean_error: f64,
    pub samples_file: String,
}

/// Excluded from determinism comparisons.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub wall_clock_seconds: f64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub counts: Counts,
    pub metrics: Vec<MetricReport>,
    pub statistics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<BenchRow>>,
    pub timing: Timing,
}

impl RunReport {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool: format!("fors {}", env!("CARGO_PKG_VERSION")),
            status: RunStatus::Ok,
            error: None,
            seed: config.seed,
            config,
            counts: Counts::default(),
            metrics: Vec::new(),
            statistics: BTreeMap::new(),
            table: None,
            timing: Timing::default(),
        }
    }

    pub fn metric(&self, name: &str) -> Option<&MetricReport> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn stat(&self, name: &str) -> Option<f64> {
        self.statistics.get(name).copied()
    }
}

/// Named scalar results; non-finite values are dropped so the JSON
/// re-parses to an equal report.
#[derive(Debug, Default)]
pub struct Stats(pub BTreeMap<String, f64>);

impl Stats {
    pub fn put(&mut self, name: impl Into<String>, value: f64) {
        let name = name.into();
        if value.is_finite() {
            self.0.insert(name, value);
        } else {
            log::warn!("statistic {name} is not finite ({value}); omitted from the summary");
        }
    }
}

/// Names a metric, dropping non-finite optional fields.
pub fn named(mut m: MetricReport, name: impl Into<String>) -> MetricReport {
    m.name = name.into();
    let keep = |v: Option<f64>| v.filter(|x| x.is_finite());
    m.standard_error = keep(m.standard_error);
    m.critical_value = keep(m.critical_value);
    m.p_value = keep(m.p_value);
    m
}
