//! Persistence for readings, issued forecasts, and model metadata.
//!
//! [`Storage`] is the contract the rest of the system talks to;
//! [`EmbeddedStore`] is the default implementation: in-memory indexes backed
//! by an optional append-only journal that is replayed on open.

mod csv_io;
mod embedded;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecast::{JobRecord, ModelId, ModelVersion, ModelVersionId};
use crate::grid::RelationalModel;
use crate::registry::SeriesId;
use crate::time::{Instant, HORIZON_STEPS, STEP_MINUTES};

pub use csv_io::{read_readings_csv, write_forecasts_csv, write_readings_csv, CsvRowError};
pub use embedded::EmbeddedStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub timestamp: Instant,
    pub value: f64,
}

impl DataPoint {
    pub fn new(timestamp: Instant, value: f64) -> Self {
        DataPoint { timestamp, value }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ForecastId(pub u64);

/// One issued 24 h forecast: 96 points at 15-minute spacing after `issue_time`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub series: SeriesId,
    pub model_version: ModelVersionId,
    pub issue_time: Instant,
    pub points: Vec<DataPoint>,
}

impl ForecastRecord {
    pub fn validate(&self) -> Result<(), StoreError> {
        let bad = |reason: &str| Err(StoreError::InvalidForecast(reason.to_string()));
        if self.points.len() != HORIZON_STEPS {
            return bad(&format!("expected {HORIZON_STEPS} points, got {}", self.points.len()));
        }
        if self.points[0].timestamp < self.issue_time {
            return bad("first point precedes issue time");
        }
        let spacing = chrono::Duration::minutes(STEP_MINUTES);
        if self.points.windows(2).any(|w| w[1].timestamp - w[0].timestamp != spacing) {
            return bad("points are not at 15-minute spacing");
        }
        if self.points.iter().any(|p| !p.value.is_finite()) {
            return bad("non-finite forecast value");
        }
        Ok(())
    }

    /// Value forecast for `timestamp`, if it falls on one of the points.
    pub fn value_at(&self, timestamp: Instant) -> Option<(usize, f64)> {
        let first = self.points.first()?.timestamp;
        let offset = (timestamp - first).num_minutes();
        if offset < 0 || offset % STEP_MINUTES != 0 {
            return None;
        }
        let k = (offset / STEP_MINUTES) as usize;
        self.points.get(k).filter(|p| p.timestamp == timestamp).map(|p| (k, p.value))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredForecast {
    pub id: ForecastId,
    /// Monotone storage sequence; breaks issue-time ties.
    pub sequence: u64,
    pub record: ForecastRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectedPoint {
    pub timestamp: Instant,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Points inserted or whose value changed.
    pub upserted: usize,
    /// Points already stored with the same value.
    pub unchanged: usize,
    pub rejected: Vec<RejectedPoint>,
}

/// A fitted relational model persisted as a versioned record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationalModelRecord {
    pub name: String,
    pub version: u32,
    pub fitted_at: Instant,
    pub model: RelationalModel,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown series {0}")]
    UnknownSeries(SeriesId),
    #[error("invalid range: from {from} is after to {to}")]
    InvalidRange { from: Instant, to: Instant },
    #[error("invalid forecast: {0}")]
    InvalidForecast(String),
    #[error("forecast for series {series} by {version} at {issue_time} already stored with different content")]
    ForecastConflict { series: SeriesId, version: ModelVersionId, issue_time: Instant },
    #[error("no forecast for series {series} issued at or before {as_of}")]
    ForecastNotFound { series: SeriesId, as_of: Instant },
    #[error("model version {0} already stored")]
    DuplicateVersion(ModelVersionId),
    #[error("journal i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal encoding: {0}")]
    Encoding(#[from] serde_json::Error),
}

/// Storage contract. Implementations must give readers consistent
/// snapshots: a batch is either fully visible or not at all.
pub trait Storage: Send + Sync {
    /// Makes a series known to the store. Idempotent.
    fn declare_series(&self, series: SeriesId, resolution_minutes: i64) -> Result<(), StoreError>;
    fn has_series(&self, series: SeriesId) -> bool;

    /// Upserts points keyed by `(series, timestamp)`; misaligned or
    /// non-finite points are rejected individually.
    fn ingest(&self, series: SeriesId, points: &[DataPoint]) -> Result<IngestReport, StoreError>;
    /// Points in `[from, to)`, time-ordered.
    fn read_range(&self, series: SeriesId, from: Instant, to: Instant) -> Result<Vec<DataPoint>, StoreError>;
    /// Most recent point with timestamp ≤ `at`.
    fn last_at_or_before(&self, series: SeriesId, at: Instant) -> Result<Option<DataPoint>, StoreError>;

    /// Stores a forecast. Re-storing an identical record for the same
    /// (series, version, issue time) returns the existing id.
    fn store_forecast(&self, record: ForecastRecord) -> Result<ForecastId, StoreError>;
    fn latest_forecast(&self, series: SeriesId, as_of: Instant) -> Result<StoredForecast, StoreError>;
    fn forecasts(&self, series: SeriesId) -> Vec<StoredForecast>;
    fn forecast_count(&self) -> usize;

    fn put_model_version(&self, version: ModelVersion) -> Result<(), StoreError>;
    fn model_version(&self, id: ModelVersionId) -> Option<ModelVersion>;
    /// Latest version of `config` trained at or before `as_of`.
    fn latest_model_version(&self, config: ModelId, as_of: Instant) -> Option<ModelVersion>;
    fn model_versions(&self, config: ModelId) -> Vec<ModelVersion>;
    fn next_model_version_id(&self) -> ModelVersionId;

    fn put_relational_model(&self, name: &str, fitted_at: Instant, model: RelationalModel)
        -> Result<u32, StoreError>;
    fn relational_models(&self) -> Vec<RelationalModelRecord>;

    fn put_job_record(&self, record: JobRecord) -> Result<(), StoreError>;
    fn job_records(&self) -> Vec<JobRecord>;
}
