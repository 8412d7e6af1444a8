//! Route table and handlers. Every JSON body carries the `schema` tag and
//! timestamps are RFC 3339 UTC.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant as WallClock;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use flexgrid_core::config::RelationSource;
use flexgrid_core::doms::{DomsRunResult, WhatIfRequest, SCHEMA};
use flexgrid_core::forecast::{JobKind, JobOutcome, ModelId};
use flexgrid_core::registry::{ContextFilter, EntityKind, SeriesId};
use flexgrid_core::store::{read_readings_csv, DataPoint, StoreError};
use flexgrid_core::time::{parse_instant, Instant};
use flexgrid_sim::Runtime;

use crate::error::ApiError;

type ApiResult<T> = Result<T, ApiError>;

/// Longest clock advance accepted in one request.
const MAX_ADVANCE_HOURS: u32 = 24 * 14;

#[derive(Clone)]
pub struct AppState {
    runtime: Arc<Runtime>,
}

pub fn router(runtime: Arc<Runtime>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/clock", get(clock))
        .route("/api/clock/advance", post(advance))
        .route("/api/readings", post(ingest_readings))
        .route("/api/forecasts/{series}", get(latest_forecast))
        .route("/api/doms/run", post(doms_run))
        .route("/api/doms/whatif", post(doms_what_if))
        .route("/api/grid/topology", get(topology))
        .route("/api/registry/signals", get(signals))
        .route("/api/registry/entities", get(entities))
        .route("/api/registry/series", get(series_listing))
        .route("/api/models", get(models))
        .route("/api/jobs", get(jobs))
        .layer(middleware::from_fn(log_requests))
        .with_state(AppState { runtime })
}

async fn log_requests(request: Request, next: Next) -> Response {
    let method = request.method().clone();
    let path = request.uri().path().to_string();
    let started = WallClock::now();
    let response = next.run(request).await;
    tracing::info!(
        %method,
        path,
        status = response.status().as_u16(),
        elapsed_ms = started.elapsed().as_secs_f64() * 1e3,
        "request"
    );
    response
}

/// Runs blocking inference or job work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> ApiResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?
}

fn parse_time(field: &str, value: &str) -> ApiResult<Instant> {
    parse_instant(value).map_err(|e| ApiError::bad_request(format!("{field}: {e}")))
}

fn parse_kind(value: &str) -> ApiResult<EntityKind> {
    serde_json::from_value(Value::String(value.to_string()))
        .map_err(|_| ApiError::bad_request(format!("unknown entity kind `{value}`")))
}

/// A series given by numeric id or `entity/signal` key.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum SeriesRef {
    Id(u32),
    Key(String),
}

impl SeriesRef {
    fn parse(raw: &str) -> SeriesRef {
        raw.parse().map_or_else(|_| SeriesRef::Key(raw.to_string()), SeriesRef::Id)
    }

    fn label(&self) -> String {
        match self {
            SeriesRef::Id(n) => n.to_string(),
            SeriesRef::Key(k) => k.clone(),
        }
    }
}

impl AppState {
    fn resolve(&self, r: &SeriesRef) -> Option<SeriesId> {
        match r {
            SeriesRef::Id(n) => self.runtime.installation().registry.series(SeriesId(*n)).map(|ts| ts.id),
            SeriesRef::Key(k) => self.runtime.installation().series_ref(k).ok(),
        }
    }

    fn key(&self, s: SeriesId) -> Option<String> {
        self.runtime.installation().registry.series_key(s)
    }
}

async fn health(State(st): State<AppState>) -> Json<Value> {
    Json(json!({
        "schema": SCHEMA,
        "status": "ok",
        "installation": st.runtime.installation().file.name,
        "now": st.runtime.now(),
    }))
}

async fn clock(State(st): State<AppState>) -> Json<Value> {
    Json(json!({
        "schema": SCHEMA,
        "start": st.runtime.installation().file.start,
        "now": st.runtime.now(),
    }))
}

#[derive(Debug, Deserialize)]
struct AdvanceRequest {
    #[serde(default = "one")]
    hours: u32,
}

fn one() -> u32 {
    1
}

async fn advance(State(st): State<AppState>, body: Bytes) -> ApiResult<Json<Value>> {
    let request: AdvanceRequest = if body.is_empty() {
        AdvanceRequest { hours: 1 }
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?
    };
    if request.hours == 0 || request.hours > MAX_ADVANCE_HOURS {
        return Err(ApiError::bad_request(format!("hours must lie in 1..={MAX_ADVANCE_HOURS}")));
    }
    let runtime = st.runtime.clone();
    let hours = blocking(move || Ok(runtime.advance(request.hours))).await?;
    Ok(Json(json!({ "schema": SCHEMA, "now": st.runtime.now(), "hours": hours })))
}

#[derive(Debug, Deserialize)]
struct ReadingIn {
    #[serde(alias = "series_id")]
    series: SeriesRef,
    timestamp: Instant,
    value: f64,
}

#[derive(Debug, Deserialize)]
struct ReadingsBody {
    readings: Vec<ReadingIn>,
}

#[derive(Debug, Serialize)]
struct RejectedReading {
    series_id: SeriesId,
    timestamp: Instant,
    reason: String,
}

#[derive(Debug, Serialize)]
struct RowError {
    row: usize,
    reason: String,
}

/// JSON `{readings: [{series, timestamp, value}]}` or CSV
/// `series_id,timestamp,value`. Unknown series reject the whole batch.
async fn ingest_readings(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let is_csv = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("text/csv"));
    let mut row_errors = Vec::new();
    let rows: Vec<(SeriesRef, DataPoint)> = if is_csv {
        let (rows, errors) = read_readings_csv(body.as_ref()).map_err(|e| ApiError::bad_request(e.to_string()))?;
        row_errors.extend(errors.into_iter().map(|e| RowError { row: e.row, reason: e.reason }));
        rows.into_iter().map(|(s, p)| (SeriesRef::Id(s.0), p)).collect()
    } else {
        let parsed: ReadingsBody = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
        parsed.readings.into_iter().map(|r| (r.series, DataPoint::new(r.timestamp, r.value))).collect()
    };

    let mut batches: BTreeMap<SeriesId, Vec<DataPoint>> = BTreeMap::new();
    let mut unknown: Vec<String> = Vec::new();
    for (r, p) in rows {
        match st.resolve(&r) {
            Some(id) => batches.entry(id).or_default().push(p),
            None => unknown.push(r.label()),
        }
    }
    if !unknown.is_empty() {
        unknown.sort();
        unknown.dedup();
        return Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_series", "readings name unknown series; nothing was ingested")
            .with_ids(unknown));
    }

    let store = st.runtime.store().clone();
    let (upserted, unchanged, rejected) = blocking(move || {
        let (mut upserted, mut unchanged, mut rejected) = (0, 0, Vec::new());
        for (series, points) in batches {
            let report = store.ingest(series, &points).map_err(|e| match e {
                StoreError::UnknownSeries(s) => {
                    ApiError::new(StatusCode::NOT_FOUND, "unknown_series", e.to_string()).with_ids([s])
                }
                other => ApiError::internal(other.to_string()),
            })?;
            upserted += report.upserted;
            unchanged += report.unchanged;
            rejected.extend(report.rejected.into_iter().map(|r| RejectedReading {
                series_id: series,
                timestamp: r.timestamp,
                reason: r.reason,
            }));
        }
        Ok((upserted, unchanged, rejected))
    })
    .await?;

    let status = if rejected.is_empty() && row_errors.is_empty() { StatusCode::OK } else { StatusCode::MULTI_STATUS };
    let body = json!({
        "schema": SCHEMA,
        "accepted": upserted + unchanged,
        "upserted": upserted,
        "unchanged": unchanged,
        "rejected": rejected,
        "row_errors": row_errors,
    });
    Ok((status, Json(body)).into_response())
}

#[derive(Debug, Deserialize)]
struct AsOfQuery {
    as_of: Option<String>,
}

async fn latest_forecast(
    State(st): State<AppState>,
    Path(series): Path<String>,
    Query(q): Query<AsOfQuery>,
) -> ApiResult<Json<Value>> {
    let reference = SeriesRef::parse(&series);
    let id = st.resolve(&reference).ok_or_else(|| {
        ApiError::new(StatusCode::NOT_FOUND, "unknown_series", format!("no series `{series}`")).with_ids([&series])
    })?;
    let as_of = match &q.as_of {
        Some(raw) => parse_time("as_of", raw)?,
        None => st.runtime.now(),
    };
    let stored = st.runtime.store().latest_forecast(id, as_of).map_err(|e| match e {
        StoreError::ForecastNotFound { .. } | StoreError::UnknownSeries(_) => {
            ApiError::new(StatusCode::NOT_FOUND, "forecast_not_found", e.to_string()).with_ids([id])
        }
        other => ApiError::internal(other.to_string()),
    })?;
    let version = st.runtime.store().model_version(stored.record.model_version);
    let model = version.as_ref().and_then(|v| st.runtime.engine().config(v.config)).map(|c| c.name.clone());
    let points: Vec<Value> = stored
        .record
        .points
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let sd = version.as_ref().and_then(|v| v.residual_variance_per_step.get(k)).map(|v| v.max(0.0).sqrt());
            json!({ "timestamp": p.timestamp, "value": p.value, "sd": sd })
        })
        .collect();
    Ok(Json(json!({
        "schema": SCHEMA,
        "forecast_id": stored.id,
        "series_id": id,
        "series_key": st.key(id),
        "model_version": stored.record.model_version,
        "model": model,
        "issue_time": stored.record.issue_time,
        "points": points,
    })))
}

#[derive(Debug, Default, Deserialize)]
struct RunRequest {
    issue_time: Option<Instant>,
}

async fn doms_run(State(st): State<AppState>, body: Bytes) -> ApiResult<Json<DomsRunResult>> {
    let request: RunRequest = if body.is_empty() {
        RunRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?
    };
    let runtime = st.runtime.clone();
    blocking(move || Ok(runtime.doms_run(request.issue_time)?)).await.map(Json)
}

async fn doms_what_if(State(st): State<AppState>, body: Bytes) -> ApiResult<Json<DomsRunResult>> {
    let request: WhatIfRequest = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let runtime = st.runtime.clone();
    blocking(move || Ok(runtime.what_if(&request)?)).await.map(Json)
}

async fn topology(State(st): State<AppState>) -> Json<Value> {
    let inst = st.runtime.installation();
    let t = &inst.doms.topology;
    let substations: Vec<Value> = t
        .substations
        .iter()
        .map(|s| {
            let feeders: Vec<Value> = t
                .feeders_of(&s.entity)
                .map(|f| json!({ "entity": f.node.entity, "series_id": f.node.series }))
                .collect();
            json!({ "entity": s.entity, "series_id": s.series, "feeders": feeders })
        })
        .collect();
    let voltage_points: Vec<Value> = t
        .voltage_points
        .iter()
        .map(|v| json!({ "entity": v.node.entity, "series_id": v.node.series, "attached": v.attached }))
        .collect();
    let ranges: Vec<Value> = inst
        .doms
        .ranges
        .iter()
        .map(|r| json!({ "series_id": r.series, "series_key": st.key(r.series), "low": r.low, "high": r.high }))
        .collect();
    let relations: Vec<Value> = inst
        .relations
        .iter()
        .map(|r| {
            let mode = match r.source {
                RelationSource::Fit { .. } => "fit",
                RelationSource::Explicit { .. } => "explicit",
                RelationSource::Network { .. } => "network",
            };
            json!({ "name": r.name, "child": r.child, "parents": r.parents, "mode": mode })
        })
        .collect();
    let (substation_count, feeder_count, voltage_count) = t.counts();
    Json(json!({
        "schema": SCHEMA,
        "counts": {
            "substations": substation_count,
            "feeders": feeder_count,
            "voltage_points": voltage_count,
            "variables": t.series().len(),
            "relational_factors": inst.relation_count(),
        },
        "substations": substations,
        "voltage_points": voltage_points,
        "ranges": ranges,
        "controllables": inst.doms.controllables,
        "relations": relations,
    }))
}

async fn signals(State(st): State<AppState>) -> Json<Value> {
    Json(json!({ "schema": SCHEMA, "signals": st.runtime.installation().registry.signals() }))
}

#[derive(Debug, Deserialize)]
struct EntityQuery {
    kind: Option<String>,
    parent: Option<String>,
}

async fn entities(State(st): State<AppState>, Query(q): Query<EntityQuery>) -> ApiResult<Json<Value>> {
    let registry = &st.runtime.installation().registry;
    let kind = q.kind.as_deref().map(parse_kind).transpose()?;
    let parent = q.parent.as_deref().map(|p| registry.entity_by_name(p));
    let list: Vec<_> = registry
        .entities()
        .into_iter()
        .filter(|e| kind.is_none_or(|k| e.kind == k))
        .filter(|e| parent.is_none_or(|p| p.is_some() && e.parent == p))
        .collect();
    Ok(Json(json!({ "schema": SCHEMA, "entities": list })))
}

#[derive(Debug, Deserialize)]
struct SeriesQuery {
    signal: Option<String>,
    kind: Option<String>,
    parent: Option<String>,
}

async fn series_listing(State(st): State<AppState>, Query(q): Query<SeriesQuery>) -> ApiResult<Json<Value>> {
    let registry = &st.runtime.installation().registry;
    let kind = q.kind.as_deref().map(parse_kind).transpose()?;
    let parent = match q.parent.as_deref() {
        Some(name) => match registry.entity_by_name(name) {
            Some(id) => Some(id),
            None => return Ok(Json(json!({ "schema": SCHEMA, "series": [] }))),
        },
        None => None,
    };
    let listing: Vec<Value> = registry
        .search_context(&ContextFilter { signal: q.signal, kind, parent })
        .into_iter()
        .map(|l| {
            json!({
                "id": l.series.id,
                "key": format!("{}/{}", l.entity.name, l.signal.name),
                "signal": l.signal.name,
                "unit": l.signal.unit,
                "entity": l.entity.name,
                "kind": l.entity.kind,
                "resolution_minutes": l.series.resolution_minutes,
            })
        })
        .collect();
    Ok(Json(json!({ "schema": SCHEMA, "series": listing })))
}

async fn models(State(st): State<AppState>) -> Json<Value> {
    let store = st.runtime.store();
    let list: Vec<Value> = st
        .runtime
        .engine()
        .configs()
        .map(|c| {
            let versions = store.model_versions(c.id);
            let latest = versions.iter().max_by_key(|v| (v.trained_at, v.id));
            json!({
                "id": c.id,
                "name": c.name,
                "target": c.target,
                "target_key": st.key(c.target),
                "algorithm": c.algorithm,
                "features": c.feature_series,
                "versions": versions.len(),
                "latest_version": latest.map(|v| v.id),
                "latest_trained_at": latest.map(|v| v.trained_at),
            })
        })
        .collect();
    Json(json!({ "schema": SCHEMA, "models": list }))
}

#[derive(Debug, Deserialize)]
struct JobQuery {
    kind: Option<JobKind>,
    status: Option<String>,
    config: Option<u32>,
    since: Option<String>,
    limit: Option<usize>,
}

async fn jobs(State(st): State<AppState>, Query(q): Query<JobQuery>) -> ApiResult<Json<Value>> {
    let since = q.since.as_deref().map(|s| parse_time("since", s)).transpose()?;
    let status = q.status.as_deref();
    if status.is_some_and(|s| !["trained", "scored", "failed"].contains(&s)) {
        return Err(ApiError::bad_request("status must be trained, scored or failed"));
    }
    let mut records = st.runtime.store().job_records();
    records.retain(|r| {
        let status_name = match r.outcome {
            JobOutcome::Trained { .. } => "trained",
            JobOutcome::Scored { .. } => "scored",
            JobOutcome::Failed { .. } => "failed",
        };
        q.kind.is_none_or(|k| r.job.kind == k)
            && status.is_none_or(|s| s == status_name)
            && q.config.is_none_or(|c| r.job.config == ModelId(c))
            && since.is_none_or(|t| r.job.at > t)
    });
    records.sort_by_key(|r| r.job);
    let total = records.len();
    let counts = json!({
        "train": records.iter().filter(|r| r.job.kind == JobKind::Train).count(),
        "score": records.iter().filter(|r| r.job.kind == JobKind::Score).count(),
        "failed": records.iter().filter(|r| !r.succeeded()).count(),
    });
    if let Some(limit) = q.limit {
        records.truncate(limit);
    }
    Ok(Json(json!({ "schema": SCHEMA, "total": total, "counts": counts, "jobs": records })))
}
