use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::{
    DataPoint, ForecastId, ForecastRecord, IngestReport, RejectedPoint, RelationalModelRecord,
    Storage, StoreError, StoredForecast,
};
use crate::forecast::{JobRecord, ModelId, ModelVersion, ModelVersionId};
use crate::grid::RelationalModel;
use crate::registry::SeriesId;
use crate::time::{is_aligned, Instant};

const JOURNAL_FILE: &str = "journal.jsonl";

#[derive(Debug, Default)]
struct SeriesData {
    resolution_minutes: i64,
    points: BTreeMap<Instant, f64>,
}

#[derive(Debug, Default)]
struct Inner {
    series: HashMap<SeriesId, SeriesData>,
    forecasts: Vec<StoredForecast>,
    by_series: HashMap<SeriesId, BTreeMap<(Instant, u64), usize>>,
    by_key: HashMap<(SeriesId, ModelVersionId, Instant), usize>,
    versions: BTreeMap<ModelVersionId, ModelVersion>,
    relational: Vec<RelationalModelRecord>,
    jobs: Vec<JobRecord>,
}

/// One journal line; each line is one atomic batch.
#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Entry {
    Declare { series: SeriesId, resolution_minutes: i64 },
    Ingest { series: SeriesId, points: Vec<DataPoint> },
    Forecast { record: ForecastRecord },
    ModelVersion { version: Box<ModelVersion> },
    Relational { record: RelationalModelRecord },
    Job { record: JobRecord },
}

/// Embedded store: in-memory indexes, optionally journaled to a directory.
#[derive(Debug)]
pub struct EmbeddedStore {
    inner: RwLock<Inner>,
    journal: Option<Mutex<BufWriter<File>>>,
    next_version: AtomicU64,
    dir: Option<PathBuf>,
}

impl Default for EmbeddedStore {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl EmbeddedStore {
    pub fn in_memory() -> Self {
        EmbeddedStore {
            inner: RwLock::new(Inner::default()),
            journal: None,
            next_version: AtomicU64::new(1),
            dir: None,
        }
    }

    /// Opens (or creates) a journaled store in `dir`, replaying any existing
    /// journal. A torn final line from an interrupted write is ignored.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let path = dir.join(JOURNAL_FILE);
        let mut inner = Inner::default();
        let mut max_version = 0;
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let Ok(entry) = serde_json::from_str::<Entry>(&line) else {
                    tracing::warn!("ignoring undecodable journal line");
                    continue;
                };
                if let Entry::ModelVersion { version } = &entry {
                    max_version = max_version.max(version.id.0);
                }
                apply(&mut inner, entry);
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).read(true).open(&path)?;
        // Terminate a torn trailing line so new entries start cleanly.
        let len = file.metadata()?.len();
        if len > 0 {
            use std::io::{Read, Seek, SeekFrom};
            let mut last = [0u8; 1];
            file.seek(SeekFrom::Start(len - 1))?;
            file.read_exact(&mut last)?;
            if last[0] != b'\n' {
                file.write_all(b"\n")?;
            }
        }
        Ok(EmbeddedStore {
            inner: RwLock::new(inner),
            journal: Some(Mutex::new(BufWriter::new(file))),
            next_version: AtomicU64::new(max_version + 1),
            dir: Some(dir.to_path_buf()),
        })
    }

    pub fn directory(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn log(&self, entry: &Entry) -> Result<(), StoreError> {
        if let Some(journal) = &self.journal {
            let mut w = journal.lock();
            serde_json::to_writer(&mut *w, entry)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Ok(())
    }

    /// Number of stored readings across all series.
    pub fn reading_count(&self) -> usize {
        self.inner.read().series.values().map(|s| s.points.len()).sum()
    }

    /// Full dump of all readings, for state comparisons.
    pub fn snapshot_readings(&self) -> BTreeMap<SeriesId, Vec<DataPoint>> {
        self.inner
            .read()
            .series
            .iter()
            .map(|(id, s)| (*id, s.points.iter().map(|(t, v)| DataPoint::new(*t, *v)).collect()))
            .collect()
    }
}

fn apply(inner: &mut Inner, entry: Entry) {
    match entry {
        Entry::Declare { series, resolution_minutes } => {
            inner
                .series
                .entry(series)
                .or_insert_with(|| SeriesData { resolution_minutes, points: BTreeMap::new() });
        }
        Entry::Ingest { series, points } => {
            if let Some(data) = inner.series.get_mut(&series) {
                for p in points {
                    data.points.insert(p.timestamp, p.value);
                }
            }
        }
        Entry::Forecast { record } => {
            let key = (record.series, record.model_version, record.issue_time);
            if inner.by_key.contains_key(&key) {
                return;
            }
            let idx = inner.forecasts.len();
            let sequence = idx as u64;
            inner
                .by_series
                .entry(record.series)
                .or_default()
                .insert((record.issue_time, sequence), idx);
            inner.by_key.insert(key, idx);
            inner.forecasts.push(StoredForecast { id: ForecastId(sequence), sequence, record });
        }
        Entry::ModelVersion { version } => {
            inner.versions.insert(version.id, *version);
        }
        Entry::Relational { record } => inner.relational.push(record),
        Entry::Job { record } => inner.jobs.push(record),
    }
}

impl Storage for EmbeddedStore {
    fn declare_series(&self, series: SeriesId, resolution_minutes: i64) -> Result<(), StoreError> {
        let mut inner = self.inner.write();
        if inner.series.contains_key(&series) {
            return Ok(());
        }
        let entry = Entry::Declare { series, resolution_minutes };
        self.log(&entry)?;
        apply(&mut inner, entry);
        Ok(())
    }

    fn has_series(&self, series: SeriesId) -> bool {
        self.inner.read().series.contains_key(&series)
    }

    fn ingest(&self, series: SeriesId, points: &[DataPoint]) -> Result<IngestReport, StoreError> {
        let mut inner = self.inner.write();
        let data = inner.series.get(&series).ok_or(StoreError::UnknownSeries(series))?;
        let mut report = IngestReport::default();
        let mut accepted: BTreeMap<Instant, f64> = BTreeMap::new();
        for p in points {
            if !is_aligned(p.timestamp, data.resolution_minutes) {
                report.rejected.push(RejectedPoint {
                    timestamp: p.timestamp,
                    reason: format!("not aligned to the {}-minute grid", data.resolution_minutes),
                });
                continue;
            }
            if !p.value.is_finite() {
                report.rejected.push(RejectedPoint {
                    timestamp: p.timestamp,
                    reason: "non-finite value".into(),
                });
                continue;
            }
            // Within one batch the last write wins as well.
            accepted.insert(p.timestamp, p.value);
        }
        let mut changed = Vec::new();
        for (t, v) in accepted {
            match data.points.get(&t) {
                Some(old) if old.to_bits() == v.to_bits() => report.unchanged += 1,
                _ => changed.push(DataPoint::new(t, v)),
            }
        }
        report.upserted = changed.len();
        if !changed.is_empty() {
            let entry = Entry::Ingest { series, points: changed };
            self.log(&entry)?;
            apply(&mut inner, entry);
        }
        Ok(report)
    }

    fn read_range(&self, series: SeriesId, from: Instant, to: Instant) -> Result<Vec<DataPoint>, StoreError> {
        if from > to {
            return Err(StoreError::InvalidRange { from, to });
        }
        let inner = self.inner.read();
        let data = inner.series.get(&series).ok_or(StoreError::UnknownSeries(series))?;
        Ok(data.points.range(from..to).map(|(t, v)| DataPoint::new(*t, *v)).collect())
    }

    fn last_at_or_before(&self, series: SeriesId, at: Instant) -> Result<Option<DataPoint>, StoreError> {
        let inner = self.inner.read();
        let data = inner.series.get(&series).ok_or(StoreError::UnknownSeries(series))?;
        Ok(data.points.range(..=at).next_back().map(|(t, v)| DataPoint::new(*t, *v)))
    }

    fn store_forecast(&self, record: ForecastRecord) -> Result<ForecastId, StoreError> {
        record.validate()?;
        let mut inner = self.inner.write();
        if !inner.series.contains_key(&record.series) {
            return Err(StoreError::UnknownSeries(record.series));
        }
        let key = (record.series, record.model_version, record.issue_time);
        if let Some(&idx) = inner.by_key.get(&key) {
            let existing = &inner.forecasts[idx];
            if existing.record == record {
                return Ok(existing.id);
            }
            return Err(StoreError::ForecastConflict {
                series: record.series,
                version: record.model_version,
                issue_time: record.issue_time,
            });
        }
        let id = ForecastId(inner.forecasts.len() as u64);
        let entry = Entry::Forecast { record };
        self.log(&entry)?;
        apply(&mut inner, entry);
        Ok(id)
    }

    fn latest_forecast(&self, series: SeriesId, as_of: Instant) -> Result<StoredForecast, StoreError> {
        let inner = self.inner.read();
        let not_found = || StoreError::ForecastNotFound { series, as_of };
        let index = inner.by_series.get(&series).ok_or_else(not_found)?;
        let (_, &idx) = index.range(..=(as_of, u64::MAX)).next_back().ok_or_else(not_found)?;
        Ok(inner.forecasts[idx].clone())
    }

    fn forecasts(&self, series: SeriesId) -> Vec<StoredForecast> {
        let inner = self.inner.read();
        inner
            .by_series
            .get(&series)
            .map(|idx| idx.values().map(|&i| inner.forecasts[i].clone()).collect())
            .unwrap_or_default()
    }

    fn forecast_count(&self) -> usize {
        self.inner.read().forecasts.len()
    }

    fn put_model_version(&self, version: ModelVersion) -> Result<(), StoreError> {
        let mut inner = self.inner.write();
        if inner.versions.contains_key(&version.id) {
            return Err(StoreError::DuplicateVersion(version.id));
        }
        self.next_version.fetch_max(version.id.0 + 1, Ordering::SeqCst);
        let entry = Entry::ModelVersion { version: Box::new(version) };
        self.log(&entry)?;
        apply(&mut inner, entry);
        Ok(())
    }

    fn model_version(&self, id: ModelVersionId) -> Option<ModelVersion> {
        self.inner.read().versions.get(&id).cloned()
    }

    fn latest_model_version(&self, config: ModelId, as_of: Instant) -> Option<ModelVersion> {
        self.inner
            .read()
            .versions
            .values()
            .filter(|v| v.config == config && v.trained_at <= as_of)
            .max_by_key(|v| (v.trained_at, v.id))
            .cloned()
    }

    fn model_versions(&self, config: ModelId) -> Vec<ModelVersion> {
        self.inner.read().versions.values().filter(|v| v.config == config).cloned().collect()
    }

    fn next_model_version_id(&self) -> ModelVersionId {
        ModelVersionId(self.next_version.fetch_add(1, Ordering::SeqCst))
    }

    fn put_relational_model(
        &self,
        name: &str,
        fitted_at: Instant,
        model: RelationalModel,
    ) -> Result<u32, StoreError> {
        let mut inner = self.inner.write();
        let version = inner.relational.iter().filter(|r| r.name == name).count() as u32 + 1;
        let entry = Entry::Relational {
            record: RelationalModelRecord { name: name.to_string(), version, fitted_at, model },
        };
        self.log(&entry)?;
        apply(&mut inner, entry);
        Ok(version)
    }

    fn relational_models(&self) -> Vec<RelationalModelRecord> {
        self.inner.read().relational.clone()
    }

    fn put_job_record(&self, record: JobRecord) -> Result<(), StoreError> {
        let mut inner = self.inner.write();
        let entry = Entry::Job { record };
        self.log(&entry)?;
        apply(&mut inner, entry);
        Ok(())
    }

    fn job_records(&self) -> Vec<JobRecord> {
        self.inner.read().jobs.clone()
    }
}
