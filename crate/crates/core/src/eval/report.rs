use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, CODE_VERSION};
use crate::error::Result;
use crate::nn::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    /// SHA-256 of every checkpoint file involved, by role.
    pub checkpoints: BTreeMap<String, String>,
}

/// Per-sample metric rows with their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub kind: String,
    pub per_sample: Vec<BTreeMap<String, f64>>,
    pub aggregate: BTreeMap<String, f64>,
    pub meta: ReportMeta,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

impl ReportMeta {
    pub fn new(cfg: &ExperimentConfig, checkpoints: &[(&str, &Path)]) -> Result<Self> {
        let mut m = BTreeMap::new();
        for (role, p) in checkpoints {
            m.insert(role.to_string(), file_sha256(p)?);
        }
        Ok(Self { config_hash: cfg.hash(), seed: cfg.seed, code_version: CODE_VERSION.into(), checkpoints: m })
    }
}

impl MetricReport {
    /// Builds the report; each aggregate is the mean of the rows that carry
    /// that metric.
    pub fn new(kind: &str, per_sample: Vec<BTreeMap<String, f64>>, meta: ReportMeta) -> Self {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for row in &per_sample {
            for (k, v) in row {
                let e = sums.entry(k.clone()).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
        let aggregate = sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
        Self { kind: kind.into(), per_sample, aggregate, meta }
    }

    /// Adds an aggregate-only value (for metrics defined over the whole set).
    pub fn with_aggregate(mut self, key: &str, value: f64) -> Self {
        self.aggregate.insert(key.into(), value);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn summary_table(&self) -> String {
        let w = self.aggregate.keys().map(|k| k.len()).max().unwrap_or(6).max(6);
        let mut s = format!("{} ({} samples)\n", self.kind, self.per_sample.len());
        s += &format!("{:<w$}  {:>12}\n", "metric", "mean");
        for (k, v) in &self.aggregate {
            s += &format!("{k:<w$}  {v:>12.6}\n");
        }
        s
    }
}
