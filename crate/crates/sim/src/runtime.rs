//! Simulated-clock driver shared by batch runs and the HTTP service.
//!
//! Each clock advance of one hour ingests that hour's generated readings,
//! runs the scheduler's due jobs, and then runs the grid model at the new
//! clock position.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant as WallClock;

use chrono::Duration;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use flexgrid_core::config::{ConfigError, Installation, InstallationFile, RelationSource};
use flexgrid_core::doms::{self, DomsError, DomsRunResult, WhatIfRequest, SCHEMA};
use flexgrid_core::exec::Execution;
use flexgrid_core::flex::FlexWindow;
use flexgrid_core::forecast::{Engine, Job, JobKind, JobOutcome, JobRecord, Scheduler};
use flexgrid_core::registry::SeriesId;
use flexgrid_core::store::{DataPoint, EmbeddedStore, StoreError, Storage};
use flexgrid_core::time::{hour, parse_instant, Instant};

use crate::scenario::{Scenario, ScenarioError, HISTORY_FILE, INSTALLATION_FILE};

pub const STORE_DIR: &str = "store";

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("history: {0}")]
    Csv(#[from] csv::Error),
    #[error("history row {row}: {reason}")]
    History { row: usize, reason: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug)]
pub struct RuntimeOptions {
    pub workers: usize,
    pub exec: Execution,
    /// Journal the store under `<dir>/store` instead of keeping it in memory.
    pub persist: bool,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        RuntimeOptions { workers: 8, exec: Execution::Parallel, persist: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobFailure {
    pub config: String,
    pub kind: JobKind,
    pub at: Instant,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HourSummary {
    pub at: Instant,
    pub readings_ingested: usize,
    pub train_jobs: usize,
    pub score_jobs: usize,
    pub failed_jobs: usize,
    pub forecasts_issued: usize,
    pub violations: usize,
    pub max_exceedance: f64,
    pub flex_windows: Vec<FlexWindow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doms_error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<JobFailure>,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub readings_ingested: usize,
    pub train_jobs: usize,
    pub score_jobs: usize,
    pub failed_jobs: usize,
    pub forecasts_issued: usize,
    pub violations: usize,
    pub flex_windows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub installation: String,
    pub from: Instant,
    pub to: Instant,
    pub totals: Totals,
    pub hours: Vec<HourSummary>,
    pub wall_seconds: f64,
}

impl RunReport {
    /// The report with every wall-clock field zeroed, for comparing runs.
    pub fn without_timings(&self) -> RunReport {
        let mut r = self.clone();
        r.wall_seconds = 0.0;
        for h in &mut r.hours {
            h.wall_ms = 0.0;
        }
        r
    }
}

pub struct Runtime {
    installation: Installation,
    store: Arc<dyn Storage>,
    engine: Engine,
    scheduler: Scheduler,
    clock: RwLock<Instant>,
    /// Serializes clock advances; readers only take `clock`.
    advancing: Mutex<()>,
    scenario: Option<Scenario>,
    /// Registry id of each generated series, in layout order.
    generated: Vec<SeriesId>,
    exec: Execution,
}

impl Runtime {
    /// Opens the installation in `dir`. A fresh store is seeded from the
    /// history file, relational models are fitted and every forecast model
    /// is trained at the installation's start.
    pub fn open(dir: &Path, options: RuntimeOptions) -> Result<Runtime, RuntimeError> {
        let file = InstallationFile::load(dir.join(INSTALLATION_FILE))?;
        let store: Arc<dyn Storage> = if options.persist {
            Arc::new(EmbeddedStore::open(dir.join(STORE_DIR))?)
        } else {
            Arc::new(EmbeddedStore::in_memory())
        };
        let history = dir.join(HISTORY_FILE);
        Runtime::new(file, store, history.exists().then_some(history.as_path()), options)
    }

    pub fn new(
        file: InstallationFile,
        store: Arc<dyn Storage>,
        history: Option<&Path>,
        options: RuntimeOptions,
    ) -> Result<Runtime, RuntimeError> {
        let scenario = match Scenario::from_installation(&file) {
            Ok(s) => Some(s),
            Err(ScenarioError::NotSimulated) => None,
            Err(e) => return Err(e.into()),
        };
        let mut installation = Installation::from_file(file)?;
        installation.declare_series(store.as_ref())?;
        let start = installation.file.start;
        let generated = match &scenario {
            Some(s) => s
                .layout()
                .plans
                .iter()
                .map(|p| installation.series_ref(&p.key()))
                .collect::<Result<_, _>>()?,
            None => Vec::new(),
        };
        let engine = Engine::new(store.clone(), installation.model_configs.clone(), options.workers);

        let fresh = store.job_records().is_empty() && store.relational_models().is_empty();
        let now = if fresh {
            if let Some(path) = history {
                import_history(&installation, store.as_ref(), path)?;
            }
            installation.fit_relations(store.as_ref(), start)?;
            let jobs = installation
                .model_configs
                .iter()
                .map(|c| Job { config: c.id, kind: JobKind::Train, at: start })
                .collect();
            let failed = engine.run_jobs(jobs).iter().filter(|r| !r.succeeded()).count();
            if failed > 0 {
                tracing::warn!(failed, "initial training left models untrained");
            }
            start
        } else {
            restore_relations(&mut installation, store.as_ref());
            store.job_records().iter().map(|r| r.job.at).max().unwrap_or(start).max(start)
        };

        Ok(Runtime {
            scheduler: Scheduler::new(installation.model_configs.clone(), now),
            installation,
            store,
            engine,
            clock: RwLock::new(now),
            advancing: Mutex::new(()),
            scenario,
            generated,
            exec: options.exec,
        })
    }

    pub fn now(&self) -> Instant {
        *self.clock.read()
    }

    pub fn installation(&self) -> &Installation {
        &self.installation
    }

    pub fn store(&self) -> &Arc<dyn Storage> {
        &self.store
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn scenario(&self) -> Option<&Scenario> {
        self.scenario.as_ref()
    }

    pub fn exec(&self) -> Execution {
        self.exec
    }

    /// Advances the clock hour by hour. Concurrent callers are serialized.
    pub fn advance(&self, hours: u32) -> Vec<HourSummary> {
        let _guard = self.advancing.lock();
        let mut out = Vec::with_capacity(hours as usize);
        for _ in 0..hours {
            let started = WallClock::now();
            let current = self.now();
            let next = current + hour();
            let readings_ingested = self.ingest_generated(current, next);
            let records = self.engine.tick(&self.scheduler, next);
            *self.clock.write() = next;
            let mut summary = self.summarize(next, readings_ingested, &records);
            match self.doms_run(Some(next)) {
                Ok(result) => {
                    summary.violations = result.violations.len();
                    summary.max_exceedance =
                        result.violations.iter().map(|v| v.exceedance_probability).fold(0.0, f64::max);
                    summary.flex_windows = result.flex_windows;
                }
                Err(e) => summary.doms_error = Some(e.to_string()),
            }
            summary.wall_ms = started.elapsed().as_secs_f64() * 1e3;
            tracing::info!(
                at = %next,
                score_jobs = summary.score_jobs,
                failed = summary.failed_jobs,
                violations = summary.violations,
                "hour complete"
            );
            out.push(summary);
        }
        out
    }

    /// Advances `hours` and totals the outcome.
    pub fn run(&self, hours: u32) -> RunReport {
        let started = WallClock::now();
        let from = self.now();
        let summaries = self.advance(hours);
        let mut totals = Totals::default();
        for h in &summaries {
            totals.readings_ingested += h.readings_ingested;
            totals.train_jobs += h.train_jobs;
            totals.score_jobs += h.score_jobs;
            totals.failed_jobs += h.failed_jobs;
            totals.forecasts_issued += h.forecasts_issued;
            totals.violations += h.violations;
            totals.flex_windows += h.flex_windows.len();
        }
        RunReport {
            schema: SCHEMA.into(),
            installation: self.installation.file.name.clone(),
            from,
            to: self.now(),
            totals,
            hours: summaries,
            wall_seconds: started.elapsed().as_secs_f64(),
        }
    }

    /// Grid-model run on the forecasts available at `issue_time` (default:
    /// the clock).
    pub fn doms_run(&self, issue_time: Option<Instant>) -> Result<DomsRunResult, DomsError> {
        let issue = issue_time.unwrap_or_else(|| self.now());
        let model = &self.installation.doms;
        let inputs = doms::gather_inputs(self.store.as_ref(), model, issue)?;
        doms::run(model, &inputs, self.exec)
    }

    pub fn what_if(&self, request: &WhatIfRequest) -> Result<DomsRunResult, DomsError> {
        let issue = request.issue_time.unwrap_or_else(|| self.now());
        let model = &self.installation.doms;
        let inputs = doms::gather_inputs(self.store.as_ref(), model, issue)?;
        doms::what_if(model, &inputs, &request.adjustments, self.exec)
    }

    fn ingest_generated(&self, from: Instant, to: Instant) -> usize {
        let Some(scenario) = &self.scenario else { return 0 };
        let slots: Vec<Instant> = slots_between(from, to).collect();
        let mut count = 0;
        for (plan, &series) in self.generated.iter().enumerate() {
            let points: Vec<DataPoint> =
                slots.iter().map(|&t| DataPoint::new(t, scenario.generator.value(plan, t))).collect();
            match self.store.ingest(series, &points) {
                Ok(r) => count += r.upserted + r.unchanged,
                Err(e) => tracing::warn!(%series, error = %e, "generated readings rejected"),
            }
        }
        count
    }

    fn summarize(&self, at: Instant, readings_ingested: usize, records: &[JobRecord]) -> HourSummary {
        let name = |r: &JobRecord| self.engine.config(r.job.config).map_or_else(|| r.job.config.to_string(), |c| c.name.clone());
        let failures: Vec<JobFailure> = records
            .iter()
            .filter_map(|r| match &r.outcome {
                JobOutcome::Failed { reason } => {
                    Some(JobFailure { config: name(r), kind: r.job.kind, at: r.job.at, reason: reason.clone() })
                }
                _ => None,
            })
            .collect();
        HourSummary {
            at,
            readings_ingested,
            train_jobs: records.iter().filter(|r| r.job.kind == JobKind::Train).count(),
            score_jobs: records.iter().filter(|r| r.job.kind == JobKind::Score).count(),
            failed_jobs: failures.len(),
            forecasts_issued: records.iter().filter(|r| matches!(r.outcome, JobOutcome::Scored { .. })).count(),
            violations: 0,
            max_exceedance: 0.0,
            flex_windows: Vec::new(),
            doms_error: None,
            failures,
            wall_ms: 0.0,
        }
    }
}

/// Loads `series,timestamp,value` rows where `series` is an `entity/signal`
/// reference or a numeric id.
pub fn import_history(installation: &Installation, store: &dyn Storage, path: &Path) -> Result<usize, RuntimeError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(BufReader::new(File::open(path)?));
    let mut ids: HashMap<String, SeriesId> = HashMap::new();
    let mut batches: BTreeMap<SeriesId, Vec<DataPoint>> = BTreeMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |reason: String| RuntimeError::History { row: row + 1, reason };
        let (Some(key), Some(stamp), Some(value)) = (record.get(0), record.get(1), record.get(2)) else {
            return Err(bad("expected three columns".into()));
        };
        let series = match ids.get(key) {
            Some(id) => *id,
            None => {
                let id = match key.parse::<u32>() {
                    Ok(n) => SeriesId(n),
                    Err(_) => installation.series_ref(key).map_err(|e| bad(e.to_string()))?,
                };
                ids.insert(key.to_string(), id);
                id
            }
        };
        let timestamp = parse_instant(stamp).map_err(|e| bad(e.to_string()))?;
        let value: f64 = value.parse().map_err(|_| bad(format!("bad value `{value}`")))?;
        batches.entry(series).or_default().push(DataPoint::new(timestamp, value));
    }
    let mut total = 0;
    for (series, points) in batches {
        let report = store.ingest(series, &points)?;
        total += report.upserted + report.unchanged;
    }
    Ok(total)
}

/// Re-installs the latest stored fit of every fitted relation.
fn restore_relations(installation: &mut Installation, store: &dyn Storage) {
    let records = store.relational_models();
    for r in &installation.relations {
        if !matches!(r.source, RelationSource::Fit { .. }) {
            continue;
        }
        let Some(latest) = records.iter().filter(|m| m.name == r.name).max_by_key(|m| m.version) else { continue };
        let model = latest.model.clone();
        installation.doms.models.retain(|m| !(m.child == model.child && m.parents == model.parents));
        installation.doms.models.push(model);
    }
}

/// The 15-minute slots in `(from, to]`, for `from` on the grid.
pub(crate) fn slots_between(from: Instant, to: Instant) -> impl Iterator<Item = Instant> {
    let n = ((to - from).num_minutes() / 15).max(0);
    (1..=n).map(move |k| from + Duration::minutes(15 * k))
}
