//! Scheduled forecasting: model configurations, training and scoring of the
//! built-in algorithms, recurrence-based job scheduling, and job execution.

mod algorithms;
mod engine;
mod history;
mod schedule;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::SeriesId;
use crate::store::{ForecastId, StoreError};
use crate::time::Instant;

pub use algorithms::{calendar_features, ridge_features, score, train, RidgeParameters, CALENDAR_FEATURES};
pub use engine::Engine;
pub use history::{regular_window, MAX_FILL_STEPS};
pub use schedule::{Recurrence, Scheduler};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(pub u32);

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelVersionId(pub u64);

impl fmt::Display for ModelVersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

fn default_lags() -> Vec<usize> {
    vec![1, 2, 96]
}

fn default_ridge() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Algorithm {
    /// Repeats the last observed value.
    Persistence,
    /// Copies the value observed 24 h earlier.
    SeasonalNaive,
    /// Ridge regression on own lags, optional calendar one-hots, and the
    /// same-time-yesterday values of `feature_series`; rolled forward
    /// recursively.
    RidgeAutoregressive {
        #[serde(default = "default_lags")]
        lags: Vec<usize>,
        #[serde(default = "default_ridge")]
        ridge: f64,
        #[serde(default = "default_true")]
        calendar: bool,
    },
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Persistence => "persistence",
            Algorithm::SeasonalNaive => "seasonal_naive",
            Algorithm::RidgeAutoregressive { .. } => "ridge_autoregressive",
        }
    }
}

fn default_training_days() -> u32 {
    28
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub id: ModelId,
    pub name: String,
    pub target: SeriesId,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub feature_series: Vec<SeriesId>,
    pub train_schedule: Recurrence,
    pub score_schedule: Recurrence,
    /// Length of the training window ending at the training instant.
    #[serde(default = "default_training_days")]
    pub training_days: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParameters {
    None,
    Ridge(RidgeParameters),
}

/// An immutable trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelVersion {
    pub id: ModelVersionId,
    pub config: ModelId,
    pub trained_at: Instant,
    pub parameters: ModelParameters,
    /// Expected squared error at each of the 96 horizon steps.
    pub residual_variance_per_step: Vec<f64>,
    pub training_window: (Instant, Instant),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Train,
    Score,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Job {
    pub config: ModelId,
    pub kind: JobKind,
    /// Scheduled occurrence: the training cut-off or the issue time.
    pub at: Instant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JobOutcome {
    Trained { version: ModelVersionId },
    Scored { forecast: ForecastId, version: ModelVersionId },
    Failed { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job: Job,
    pub outcome: JobOutcome,
}

impl JobRecord {
    pub fn succeeded(&self) -> bool {
        !matches!(self.outcome, JobOutcome::Failed { .. })
    }
}

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("unknown model config {0}")]
    UnknownConfig(ModelId),
    #[error("insufficient history for {algorithm}: need {required} points, have {got}")]
    InsufficientHistory { algorithm: &'static str, required: usize, got: usize },
    #[error("history gap of {steps} steps before {at} exceeds the {max}-step fill limit")]
    GapTooLarge { at: Instant, steps: usize, max: usize },
    #[error("issue time {0} is not on the hourly grid")]
    NotOnHourlyGrid(Instant),
    #[error("no trained version of {config} at or before {at}")]
    NoTrainedVersion { config: ModelId, at: Instant },
    #[error("model version parameters do not match algorithm {0}")]
    ParameterMismatch(&'static str),
    #[error("fit failed: {0}")]
    Fit(#[from] crate::grid::GridError),
    #[error(transparent)]
    Store(#[from] StoreError),
}
