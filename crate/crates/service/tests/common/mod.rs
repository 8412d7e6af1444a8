#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use flexgrid_sim::{Runtime, RuntimeOptions, Scenario, ScenarioSpec};

pub fn generate(preset: &str, seed: u64, days: u32, inject: bool) -> tempfile::TempDir {
    let mut spec = ScenarioSpec::preset(preset, seed, days).unwrap();
    if inject {
        spec = spec.with_default_injection();
    }
    let dir = tempfile::tempdir().unwrap();
    Scenario::new(spec).unwrap().generate(dir.path()).unwrap();
    dir
}

pub fn open(dir: &tempfile::TempDir) -> Arc<Runtime> {
    Arc::new(Runtime::open(dir.path(), RuntimeOptions { workers: 8, ..Default::default() }).unwrap())
}

pub async fn send(app: &Router, method: Method, uri: &str, content_type: &str, body: Vec<u8>) -> (StatusCode, Value) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", content_type)
        .body(Body::from(body))
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let json = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, json)
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    send(app, Method::GET, uri, "application/json", Vec::new()).await
}

pub async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    send(app, Method::POST, uri, "application/json", serde_json::to_vec(&body).unwrap()).await
}

/// One substation over `bases.len()` feeders tied by an exact-sum relation,
/// with seasonal-naive forecasts everywhere and a load limit on the
/// substation only. Fourteen days of smooth history; clock at go-live.
pub fn sum_fixture(bases: &[f64], limit: f64) -> (tempfile::TempDir, Arc<Runtime>) {
    use flexgrid_core::config::InstallationFile;
    use flexgrid_core::time::{format_instant, parse_instant, step};
    use serde_json::json;

    let start = parse_instant("2024-06-03T00:00:00Z").unwrap();
    let feeders: Vec<String> = (1..=bases.len()).map(|i| format!("SS01-F{i}")).collect();
    let key = |e: &str| format!("{e}/active_power");
    let mut entities = vec![json!({ "name": "SS01", "kind": "substation" })];
    entities.extend(feeders.iter().map(|f| json!({ "name": f, "kind": "feeder", "parent": "SS01" })));
    let all: Vec<String> = std::iter::once("SS01".to_string()).chain(feeders.iter().cloned()).collect();
    let file: InstallationFile = serde_json::from_value(json!({
        "name": "sum-fixture",
        "start": format_instant(start),
        "signals": [{ "name": "active_power", "unit": "kW" }, { "name": "voltage", "unit": "V" }],
        "entities": entities,
        "series": all.iter().map(|e| json!({ "entity": e, "signal": "active_power" })).collect::<Vec<_>>(),
        "grid": {
            "load_signal": "active_power",
            "voltage_signal": "voltage",
            "substations": ["SS01"],
            "feeders": feeders.iter().map(|f| json!({ "entity": f, "substation": "SS01" })).collect::<Vec<_>>(),
        },
        "ranges": [{ "series": key("SS01"), "low": 0.0, "high": limit }],
        "controllables": feeders.iter().map(|f| key(f)).collect::<Vec<_>>(),
        "relations": [{
            "name": "SS01-feeder-sum",
            "child": key("SS01"),
            "parents": feeders.iter().map(|f| key(f)).collect::<Vec<_>>(),
            "mode": "explicit",
            "weights": vec![1.0; bases.len()],
            "residual_variance": 1e-9,
        }],
        "models": all.iter().map(|e| json!({
            "name": format!("{e}-seasonal_naive"),
            "target": key(e),
            "algorithm": { "kind": "seasonal_naive" },
            "training_days": 14,
        })).collect::<Vec<_>>(),
    }))
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("history.csv");
    let mut csv = String::from("series,timestamp,value\n");
    let mut t = start - chrono::Duration::days(14);
    let mut k = 0usize;
    while t < start {
        let values: Vec<f64> = bases
            .iter()
            .enumerate()
            .map(|(i, b)| b * (1.0 + 0.05 * (std::f64::consts::TAU * k as f64 / (7.0 + i as f64)).sin()))
            .collect();
        csv.push_str(&format!("{},{},{}\n", key("SS01"), format_instant(t), values.iter().sum::<f64>()));
        for (f, v) in feeders.iter().zip(&values) {
            csv.push_str(&format!("{},{},{}\n", key(f), format_instant(t), v));
        }
        t += step();
        k += 1;
    }
    std::fs::write(&path, csv).unwrap();
    let store = Arc::new(flexgrid_core::store::EmbeddedStore::in_memory());
    let runtime = Runtime::new(file, store, Some(&path), RuntimeOptions::default()).unwrap();
    (dir, Arc::new(runtime))
}
