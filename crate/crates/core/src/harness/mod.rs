//! Experiment orchestration: replicated simulation studies, the
//! rolling-window real-data protocol, result persistence and summaries.

mod ingest;
mod realdata;
mod store;
mod study;
mod summarize;

pub use ingest::{ingest_realized_cov, ingest_returns, IngestError, RealizedCovSet, ReturnsTable};
pub use realdata::run_real_data;
pub use store::{LossRecord, ReplicationFailure, ResultStore, RunManifest};
pub use study::run_simulation_study;
pub use summarize::{summarize, DmSummaryKind, PooledMcsEntry, StudySummary, SummaryBlock};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgp::{DgpSpec, SamplerError, WeightScheme};
use crate::eval::{EvalError, LossKind};
use crate::models::ModelError;
use crate::reconcile::ReconcileError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error at {field}: {message}")]
    ConfigurationError { field: String, message: String },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Reconcile(#[from] ReconcileError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl HarnessError {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::ConfigurationError { field: field.into(), message: message.into() }
    }
}

/// Portfolio-variance forecasting approaches under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    Base,
    Bu,
    Shr,
    ShrA,
    ShrB,
}

impl Approach {
    pub fn label(&self) -> &'static str {
        match self {
            Approach::Base => "base",
            Approach::Bu => "bu",
            Approach::Shr => "shr",
            Approach::ShrA => "shr_a",
            Approach::ShrB => "shr_b",
        }
    }

    pub fn all() -> [Approach; 5] {
        [Approach::Base, Approach::Bu, Approach::Shr, Approach::ShrA, Approach::ShrB]
    }
}

/// Multivariate models available for estimation (the full BEKK is
/// simulation-only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FittedModel {
    #[serde(rename = "sbekk")]
    SBekk,
    Dcc,
    Edcc,
}

impl FittedModel {
    pub fn label(&self) -> &'static str {
        match self {
            FittedModel::SBekk => "sbekk",
            FittedModel::Dcc => "dcc",
            FittedModel::Edcc => "edcc",
        }
    }
}

fn default_approaches() -> Vec<Approach> {
    Approach::all().to_vec()
}

fn default_loss_kinds() -> Vec<LossKind> {
    LossKind::all().to_vec()
}

/// Configuration of a replicated simulation study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub dgp: DgpSpec,
    pub fitted_models: Vec<FittedModel>,
    #[serde(default = "default_approaches")]
    pub approaches: Vec<Approach>,
    pub q_replications: usize,
    /// Noise levels for proxy-based evaluation; the true-covariance
    /// evaluation (recorded as delta = 0) is always produced.
    #[serde(default)]
    pub delta_grid: Vec<f64>,
    #[serde(default = "default_loss_kinds")]
    pub loss_kinds: Vec<LossKind>,
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.dgp
            .validate()
            .map_err(|e| HarnessError::config("dgp", e.to_string()))?;
        if self.q_replications == 0 {
            return Err(HarnessError::config("q_replications", "must be >= 1"));
        }
        if self.fitted_models.is_empty() {
            return Err(HarnessError::config("fitted_models", "must not be empty"));
        }
        if self.approaches.is_empty() {
            return Err(HarnessError::config("approaches", "must not be empty"));
        }
        if self.loss_kinds.is_empty() {
            return Err(HarnessError::config("loss_kinds", "must not be empty"));
        }
        for (k, &d) in self.delta_grid.iter().enumerate() {
            if !(d > 0.0 && d <= 1.0) {
                return Err(HarnessError::config(
                    format!("delta_grid[{k}]"),
                    format!("{d} outside (0, 1]"),
                ));
            }
        }
        Ok(())
    }
}

fn default_window_length() -> usize {
    1500
}

fn default_horizons() -> Vec<usize> {
    vec![1, 5, 22]
}

fn default_weight_scheme() -> WeightScheme {
    WeightScheme::Equal
}

fn default_demean() -> bool {
    true
}

/// Configuration of the rolling-window real-data experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealDataConfig {
    pub returns_path: PathBuf,
    /// Directory of per-date matrices or a single long-format file; squared
    /// returns are used when absent.
    #[serde(default)]
    pub realized_cov_path: Option<PathBuf>,
    #[serde(default = "default_window_length")]
    pub window_length: usize,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    #[serde(default = "default_weight_scheme")]
    pub weight_scheme: WeightScheme,
    pub fitted_models: Vec<FittedModel>,
    #[serde(default = "default_approaches")]
    pub approaches: Vec<Approach>,
    #[serde(default = "default_loss_kinds")]
    pub loss_kinds: Vec<LossKind>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_demean")]
    pub demean: bool,
}

impl RealDataConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.window_length < 100 {
            return Err(HarnessError::config("window_length", "must be >= 100"));
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|&h| h == 0) {
            return Err(HarnessError::config("horizons", "must be nonempty positive integers"));
        }
        if self.fitted_models.is_empty() {
            return Err(HarnessError::config("fitted_models", "must not be empty"));
        }
        if self.approaches.is_empty() {
            return Err(HarnessError::config("approaches", "must not be empty"));
        }
        if self.loss_kinds.is_empty() {
            return Err(HarnessError::config("loss_kinds", "must not be empty"));
        }
        Ok(())
    }
}
