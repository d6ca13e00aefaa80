//! Result persistence: per-date loss records as flat CSV, a JSON manifest
//! per run, and the derived summary tables.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{Approach, FittedModel, HarnessError};
use crate::eval::LossKind;

/// One loss observation. `delta = 0` marks evaluation against the true
/// covariance (simulation) or the designated proxy (real data).
#[derive(Debug, Clone)]
pub struct LossRecord {
    pub replication: usize,
    pub delta: f64,
    pub approach: Approach,
    pub model: FittedModel,
    /// Test index (simulation) or ISO date (real data).
    pub date: String,
    pub loss_kind: LossKind,
    pub value: f64,
    pub horizon: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub kind: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub master_seed: u64,
    pub version: String,
    pub wall_time_secs: f64,
    pub threads: usize,
    pub failures: Vec<ReplicationFailure>,
    /// Nonpositive forecasts clamped to the floor before loss evaluation.
    pub clamped_forecasts: usize,
}

impl RunManifest {
    pub fn new(kind: &str, config: serde_json::Value, master_seed: u64) -> Self {
        let canonical = config.to_string();
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let config_hash = format!("{:x}", hasher.finalize());
        RunManifest {
            kind: kind.to_string(),
            config,
            config_hash,
            master_seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_secs: 0.0,
            threads: rayon::current_num_threads(),
            failures: Vec::new(),
            clamped_forecasts: 0,
        }
    }
}

/// All records of one run plus its manifest; every summary quantity is
/// recomputable from `records` alone.
#[derive(Debug, Clone)]
pub struct ResultStore {
    pub records: Vec<LossRecord>,
    pub manifest: RunManifest,
}

impl ResultStore {
    pub fn write_losses_csv(&self, path: &Path) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| HarnessError::config("output", e.to_string()))?;
        w.write_record([
            "replication",
            "delta",
            "approach",
            "model",
            "date",
            "loss_kind",
            "value",
            "horizon",
        ])
        .map_err(|e| HarnessError::config("output", e.to_string()))?;
        for r in &self.records {
            w.write_record([
                r.replication.to_string(),
                r.delta.to_string(),
                r.approach.label().to_string(),
                r.model.label().to_string(),
                r.date.clone(),
                r.loss_kind.label().to_string(),
                r.value.to_string(),
                r.horizon.to_string(),
            ])
            .map_err(|e| HarnessError::config("output", e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_manifest(&self, path: &Path) -> Result<(), HarnessError> {
        let mut f = std::fs::File::create(path)?;
        let json = serde_json::to_string_pretty(&self.manifest)?;
        f.write_all(json.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    /// Writes `losses.csv`, `summary.csv` and `manifest.json` (and, for
    /// runs with a pooled across-model confidence set, `mcs_models.csv`)
    /// into the directory.
    pub fn write_all(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        self.write_losses_csv(&dir.join("losses.csv"))?;
        let summary = super::summarize(self)?;
        summary.write_csv(&dir.join("summary.csv"))?;
        if !summary.pooled_mcs.is_empty() {
            summary.write_pooled_mcs_csv(&dir.join("mcs_models.csv"))?;
        }
        self.write_manifest(&dir.join("manifest.json"))?;
        Ok(())
    }

    /// Loads a persisted run directory (losses.csv + manifest.json) so the
    /// summary can be recomputed from the records alone.
    pub fn load(dir: &Path) -> Result<ResultStore, HarnessError> {
        let records = Self::read_losses_csv(&dir.join("losses.csv"))?;
        let manifest_raw: serde_json::Value =
            serde_json::from_reader(std::fs::File::open(dir.join("manifest.json"))?)?;
        let kind = manifest_raw
            .get("kind")
            .and_then(|v| v.as_str())
            .unwrap_or("study")
            .to_string();
        let master_seed = manifest_raw
            .get("master_seed")
            .and_then(|v| v.as_u64())
            .unwrap_or_default();
        let config = manifest_raw.get("config").cloned().unwrap_or(serde_json::Value::Null);
        let mut manifest = RunManifest::new(&kind, config, master_seed);
        manifest.config_hash = manifest_raw
            .get("config_hash")
            .and_then(|v| v.as_str())
            .unwrap_or(&manifest.config_hash)
            .to_string();
        Ok(ResultStore { records, manifest })
    }

    /// Reads a losses.csv back into records (for `summarize` on persisted
    /// runs).
    pub fn read_losses_csv(path: &Path) -> Result<Vec<LossRecord>, HarnessError> {
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| HarnessError::config("input", e.to_string()))?;
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| HarnessError::config("input", e.to_string()))?;
            let field = |k: usize| -> Result<&str, HarnessError> {
                row.get(k).ok_or_else(|| {
                    HarnessError::config("input", format!("row {}: missing field {k}", i + 2))
                })
            };
            let parse_err = |what: &str| {
                HarnessError::config("input", format!("row {}: bad {what}", i + 2))
            };
            let approach = match field(2)? {
                "base" => Approach::Base,
                "bu" => Approach::Bu,
                "shr" => Approach::Shr,
                "shr_a" => Approach::ShrA,
                "shr_b" => Approach::ShrB,
                other => {
                    return Err(HarnessError::config(
                        "input",
                        format!("row {}: unknown approach {other}", i + 2),
                    ))
                }
            };
            let model = match field(3)? {
                "sbekk" => FittedModel::SBekk,
                "dcc" => FittedModel::Dcc,
                "edcc" => FittedModel::Edcc,
                other => {
                    return Err(HarnessError::config(
                        "input",
                        format!("row {}: unknown model {other}", i + 2),
                    ))
                }
            };
            let loss_kind = match field(5)? {
                "mse" => LossKind::Mse,
                "mae" => LossKind::Mae,
                "qlike" => LossKind::Qlike,
                other => {
                    return Err(HarnessError::config(
                        "input",
                        format!("row {}: unknown loss kind {other}", i + 2),
                    ))
                }
            };
            records.push(LossRecord {
                replication: field(0)?.parse().map_err(|_| parse_err("replication"))?,
                delta: field(1)?.parse().map_err(|_| parse_err("delta"))?,
                approach,
                model,
                date: field(4)?.to_string(),
                loss_kind,
                value: field(6)?.parse().map_err(|_| parse_err("value"))?,
                horizon: field(7)?.parse().map_err(|_| parse_err("horizon"))?,
            });
        }
        Ok(records)
    }
}
