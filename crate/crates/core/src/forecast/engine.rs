use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use super::{score, train, ForecastError, Job, JobKind, JobOutcome, JobRecord, ModelConfig, ModelId, ModelVersion, Scheduler};
use crate::exec::WorkerPool;
use crate::store::{ForecastId, Storage};
use crate::time::Instant;
use crate::forecast::ModelVersionId;

/// Executes training and scoring jobs against a store. Jobs of one
/// configuration run one at a time; different configurations run
/// concurrently on the worker pool.
pub struct Engine {
    store: Arc<dyn Storage>,
    configs: BTreeMap<ModelId, ModelConfig>,
    locks: BTreeMap<ModelId, Mutex<()>>,
    next_version: AtomicU64,
    pool: WorkerPool,
}

impl Engine {
    pub fn new(store: Arc<dyn Storage>, configs: Vec<ModelConfig>, workers: usize) -> Self {
        let locks = configs.iter().map(|c| (c.id, Mutex::new(()))).collect();
        let configs = configs.into_iter().map(|c| (c.id, c)).collect();
        let next_version = AtomicU64::new(store.next_model_version_id().0);
        Engine { store, configs, locks, next_version, pool: WorkerPool::new(workers) }
    }

    pub fn store(&self) -> &Arc<dyn Storage> {
        &self.store
    }

    pub fn config(&self, id: ModelId) -> Option<&ModelConfig> {
        self.configs.get(&id)
    }

    pub fn configs(&self) -> impl Iterator<Item = &ModelConfig> {
        self.configs.values()
    }

    pub fn workers(&self) -> usize {
        self.pool.workers()
    }

    fn lookup(&self, id: ModelId) -> Result<(&ModelConfig, &Mutex<()>), ForecastError> {
        match (self.configs.get(&id), self.locks.get(&id)) {
            (Some(c), Some(l)) => Ok((c, l)),
            _ => Err(ForecastError::UnknownConfig(id)),
        }
    }

    /// Trains a new version from history strictly before `as_of` and
    /// persists it.
    pub fn train(&self, id: ModelId, as_of: Instant) -> Result<ModelVersion, ForecastError> {
        let (config, lock) = self.lookup(id)?;
        let _guard = lock.lock();
        let id = ModelVersionId(self.next_version.fetch_add(1, Ordering::Relaxed));
        let version = train(config, self.store.as_ref(), as_of, id)?;
        self.store.put_model_version(version.clone())?;
        Ok(version)
    }

    /// Scores the latest version trained at or before `issue_time`.
    pub fn score(&self, id: ModelId, issue_time: Instant) -> Result<(ForecastId, ModelVersionId), ForecastError> {
        let (config, lock) = self.lookup(id)?;
        let _guard = lock.lock();
        let version = self
            .store
            .latest_model_version(id, issue_time)
            .ok_or(ForecastError::NoTrainedVersion { config: id, at: issue_time })?;
        let record = score(config, &version, self.store.as_ref(), issue_time)?;
        let forecast = self.store.store_forecast(record)?;
        Ok((forecast, version.id))
    }

    /// Runs one job and records its outcome; failures, including panics,
    /// become `Failed` records rather than propagating.
    pub fn run_job(&self, job: Job) -> JobRecord {
        let result = catch_unwind(AssertUnwindSafe(|| match job.kind {
            JobKind::Train => self.train(job.config, job.at).map(|v| JobOutcome::Trained { version: v.id }),
            JobKind::Score => {
                self.score(job.config, job.at).map(|(forecast, version)| JobOutcome::Scored { forecast, version })
            }
        }));
        let outcome = match result {
            Ok(Ok(outcome)) => outcome,
            Ok(Err(e)) => JobOutcome::Failed { reason: e.to_string() },
            Err(_) => JobOutcome::Failed { reason: "job panicked".to_string() },
        };
        if let JobOutcome::Failed { reason } = &outcome {
            tracing::warn!(config = %job.config, kind = ?job.kind, at = %job.at, %reason, "job failed");
        }
        let record = JobRecord { job, outcome };
        if let Err(e) = self.store.put_job_record(record.clone()) {
            tracing::error!(error = %e, "could not persist job record");
        }
        record
    }

    /// Runs a batch: jobs of one configuration in order, configurations in
    /// parallel. Records come back ordered by time, kind, configuration.
    pub fn run_jobs(&self, jobs: Vec<Job>) -> Vec<JobRecord> {
        let mut groups: BTreeMap<ModelId, Vec<Job>> = BTreeMap::new();
        for job in jobs {
            groups.entry(job.config).or_default().push(job);
        }
        for group in groups.values_mut() {
            group.sort_by_key(|j| (j.at, j.kind));
        }
        let groups: Vec<Vec<Job>> = groups.into_values().collect();
        let mut records: Vec<JobRecord> = self
            .pool
            .run(groups, |group| group.into_iter().map(|job| self.run_job(job)).collect::<Vec<_>>())
            .into_iter()
            .flatten()
            .collect();
        records.sort_by_key(|r| (r.job.at, r.job.kind, r.job.config));
        records
    }

    /// Runs everything the scheduler reports due at `now`.
    pub fn tick(&self, scheduler: &Scheduler, now: Instant) -> Vec<JobRecord> {
        self.run_jobs(scheduler.due_jobs(now))
    }
}
