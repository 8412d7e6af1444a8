mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::http::{Method, StatusCode};
use serde_json::{json, Value};

use common::{generate, get, open, post, send};
use flexgrid_core::config::InstallationFile;
use flexgrid_core::doms::{DomsRunResult, SCHEMA};
use flexgrid_core::store::EmbeddedStore;
use flexgrid_core::time::{format_instant, parse_instant, HORIZON_STEPS};
use flexgrid_service::router;
use flexgrid_sim::{Runtime, RuntimeOptions};

fn error_code(body: &Value) -> &str {
    body["error"]["code"].as_str().unwrap()
}

#[tokio::test]
async fn health_and_clock() {
    let dir = generate("germany", 1, 14, false);
    let app = router(open(&dir));
    let (status, body) = get(&app, "/api/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["schema"], SCHEMA);
    assert_eq!(body["installation"], "germany");

    let (_, before) = get(&app, "/api/clock").await;
    let (status, advanced) = post(&app, "/api/clock/advance", json!({ "hours": 2 })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(advanced["hours"].as_array().unwrap().len(), 2);
    let start = parse_instant(before["now"].as_str().unwrap()).unwrap();
    let now = parse_instant(advanced["now"].as_str().unwrap()).unwrap();
    assert_eq!(now - start, chrono::Duration::hours(2));
    let (status, body) = post(&app, "/api/clock/advance", json!({ "hours": 0 })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "bad_request");
}

#[tokio::test]
async fn cyprus_topology_counts() {
    let dir = generate("cyprus", 3, 3, false);
    let app = router(open(&dir));
    let (status, body) = get(&app, "/api/grid/topology").await;
    assert_eq!(status, StatusCode::OK);
    let c = &body["counts"];
    assert_eq!((c["substations"].as_u64(), c["feeders"].as_u64(), c["voltage_points"].as_u64()), (Some(15), Some(29), Some(41)));
    assert_eq!(c["variables"], 85);
    assert_eq!(c["relational_factors"], 16);
    let feeders: usize = body["substations"].as_array().unwrap().iter().map(|s| s["feeders"].as_array().unwrap().len()).sum();
    assert_eq!(feeders, 29);
    assert_eq!(body["controllables"].as_array().unwrap().len(), 29);
}

#[tokio::test]
async fn registry_listings_and_filters() {
    let dir = generate("germany", 1, 3, false);
    let app = router(open(&dir));
    let (_, signals) = get(&app, "/api/registry/signals").await;
    assert_eq!(signals["signals"].as_array().unwrap().len(), 13);
    let (_, all) = get(&app, "/api/registry/series").await;
    assert_eq!(all["series"].as_array().unwrap().len(), 18);
    let (_, voltages) = get(&app, "/api/registry/series?signal=volt").await;
    assert_eq!(voltages["series"].as_array().unwrap().len(), 3);
    let (_, feeders) = get(&app, "/api/registry/entities?kind=feeder").await;
    assert_eq!(feeders["entities"].as_array().unwrap().len(), 4);
    let (_, children) = get(&app, "/api/registry/series?parent=SS01").await;
    let keys: Vec<&str> = children["series"].as_array().unwrap().iter().map(|s| s["key"].as_str().unwrap()).collect();
    assert_eq!(keys, ["SS01-F1/active_power", "SS01-F1/frequency", "SS01-F2/active_power", "SS01-F2/power_factor"]);
    let (_, none) = get(&app, "/api/registry/series?parent=nowhere").await;
    assert!(none["series"].as_array().unwrap().is_empty());
    let (status, body) = get(&app, "/api/registry/entities?kind=castle").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "bad_request");
}

#[tokio::test]
async fn empty_registry_gives_empty_listings() {
    let file = InstallationFile::from_toml(
        r#"
name = "empty"
start = "2024-01-01T00:00:00Z"
signals = []
entities = []
series = []

[grid]
load_signal = "active_power"
voltage_signal = "voltage"
substations = []
feeders = []
"#,
    )
    .unwrap();
    let runtime = Runtime::new(file, Arc::new(EmbeddedStore::in_memory()), None, RuntimeOptions::default()).unwrap();
    let app = router(Arc::new(runtime));
    for (uri, field) in [
        ("/api/registry/signals", "signals"),
        ("/api/registry/entities", "entities"),
        ("/api/registry/series", "series"),
        ("/api/jobs", "jobs"),
        ("/api/models", "models"),
    ] {
        let (status, body) = get(&app, uri).await;
        assert_eq!(status, StatusCode::OK, "{uri}");
        assert!(body[field].as_array().unwrap().is_empty(), "{uri}");
    }
}

#[tokio::test]
async fn readings_ingestion_reports() {
    let dir = generate("germany", 1, 3, false);
    let rt = open(&dir);
    let app = router(rt.clone());
    let t = format_instant(rt.now() + chrono::Duration::minutes(15));
    let (status, body) = post(
        &app,
        "/api/readings",
        json!({ "readings": [
            { "series": "SS01/active_power", "timestamp": t, "value": 101.5 },
            { "series": 2, "timestamp": t, "value": 50.0 },
        ]}),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["accepted"], 2);

    let (status, body) = post(
        &app,
        "/api/readings",
        json!({ "readings": [
            { "series": "SS01/active_power", "timestamp": t, "value": 1.0 },
            { "series": "nowhere/active_power", "timestamp": t, "value": 1.0 },
            { "series": 999, "timestamp": t, "value": 1.0 },
        ]}),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(error_code(&body), "unknown_series");
    assert_eq!(body["error"]["ids"], json!(["999", "nowhere/active_power"]));
    // Nothing from the rejected batch was stored.
    let stored = rt.store().last_at_or_before(flexgrid_core::registry::SeriesId(0), rt.now() + chrono::Duration::hours(1));
    assert_eq!(stored.unwrap().unwrap().value, 101.5);

    let misaligned = format_instant(rt.now() + chrono::Duration::minutes(7));
    let (status, body) = post(
        &app,
        "/api/readings",
        json!({ "readings": [
            { "series": 0, "timestamp": t, "value": 101.5 },
            { "series": 0, "timestamp": misaligned, "value": 3.0 },
        ]}),
    )
    .await;
    assert_eq!(status, StatusCode::MULTI_STATUS);
    assert_eq!(body["unchanged"], 1);
    assert_eq!(body["rejected"].as_array().unwrap().len(), 1);
    assert_eq!(body["rejected"][0]["timestamp"], misaligned);

    let csv = format!("series_id,timestamp,value\n1,{t},7.5\n1,not-a-time,1\n");
    let (status, body) = send(&app, Method::POST, "/api/readings", "text/csv", csv.into_bytes()).await;
    assert_eq!(status, StatusCode::MULTI_STATUS);
    assert_eq!(body["accepted"], 1);
    assert_eq!(body["row_errors"][0]["row"], 2);
}

#[tokio::test]
async fn forecasts_by_id_key_and_as_of() {
    let dir = generate("germany", 4, 14, false);
    let rt = open(&dir);
    let app = router(rt.clone());
    let (status, body) = get(&app, "/api/forecasts/0").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(error_code(&body), "forecast_not_found");

    rt.advance(3);
    let (status, body) = get(&app, "/api/forecasts/SS01%2Factive_power").await;
    assert_eq!(status, StatusCode::OK);
    let points = body["points"].as_array().unwrap();
    assert_eq!(points.len(), HORIZON_STEPS);
    assert_eq!(body["issue_time"], format_instant(rt.now()));
    assert!(points.iter().all(|p| p["sd"].as_f64().unwrap() > 0.0));

    let start = rt.installation().file.start;
    let mut issued = Vec::new();
    for minutes in (60..=180).step_by(30) {
        let as_of = format_instant(start + chrono::Duration::minutes(minutes));
        let (status, body) = get(&app, &format!("/api/forecasts/0?as_of={as_of}")).await;
        assert_eq!(status, StatusCode::OK);
        issued.push(parse_instant(body["issue_time"].as_str().unwrap()).unwrap());
    }
    assert!(issued.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(issued.first(), Some(&(start + chrono::Duration::hours(1))));
    assert_eq!(issued.last(), Some(&(start + chrono::Duration::hours(3))));

    let (status, body) = get(&app, "/api/forecasts/nowhere%2Fvoltage").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(error_code(&body), "unknown_series");
    let (status, _) = get(&app, "/api/forecasts/0?as_of=yesterday").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn doms_run_needs_forecasts() {
    let dir = generate("germany", 1, 14, false);
    let rt = open(&dir);
    let app = router(rt.clone());
    let (status, body) = post(&app, "/api/doms/run", json!({})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(error_code(&body), "missing_forecasts");
    assert_eq!(body["error"]["ids"].as_array().unwrap().len(), 9);

    rt.advance(1);
    let (status, body) = send(&app, Method::POST, "/api/doms/run", "application/json", Vec::new()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["schema"], SCHEMA);
    assert_eq!(body["steps"].as_array().unwrap().len(), HORIZON_STEPS);
    assert!(body["violations"].as_array().unwrap().is_empty());
}

fn run_result(body: Value) -> DomsRunResult {
    serde_json::from_value(body).unwrap()
}

async fn apply_requests(app: &axum::Router, baseline: &DomsRunResult) -> DomsRunResult {
    let mut adjustments: BTreeMap<String, Vec<Value>> = BTreeMap::new();
    for r in &baseline.requests {
        adjustments.entry(r.series.to_string()).or_default().push(json!({ "step": r.step, "delta": r.amount }));
    }
    let (status, body) = post(app, "/api/doms/whatif", json!({ "adjustments": adjustments })).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let applied = run_result(body);
    assert!(applied.adjusted);
    applied
}

#[tokio::test]
async fn applying_requests_meets_the_limit_on_an_exact_sum() {
    let (_dir, rt) = common::sum_fixture(&[55.0, 55.0], 100.0);
    rt.advance(1);
    let app = router(rt);
    let (status, body) = post(&app, "/api/doms/run", json!({})).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let baseline = run_result(body);
    assert_eq!(baseline.violations.len(), HORIZON_STEPS);
    let applied = apply_requests(&app, &baseline).await;
    for v in &baseline.violations {
        let est = applied.steps[v.step].estimate(v.series).unwrap();
        assert!((est.mean - v.limit).abs() <= 1e-6 * v.limit, "{} vs {}", est.mean, v.limit);
        assert!(!applied.violations.iter().any(|w| w.series == v.series && w.step == v.step));
    }
    assert!(baseline.requests.iter().all(|r| r.amount < 0.0));
}

#[tokio::test]
async fn what_if_identity_and_validation_on_a_simulated_grid() {
    let dir = generate("germany", 6, 14, true);
    let rt = open(&dir);
    rt.advance(1);
    let app = router(rt.clone());
    let (status, body) = post(&app, "/api/doms/run", json!({})).await;
    assert_eq!(status, StatusCode::OK);
    let baseline = run_result(body);
    assert!(!baseline.violations.is_empty());
    assert!(baseline.violations.iter().any(|v| v.exceedance_probability >= 0.977));

    let (_, body) = post(&app, "/api/doms/whatif", json!({ "adjustments": {} })).await;
    let same = run_result(body);
    for (a, b) in baseline.steps.iter().zip(&same.steps) {
        for (x, y) in a.estimates.iter().zip(&b.estimates) {
            assert!((x.mean - y.mean).abs() <= 1e-9 && (x.sd - y.sd).abs() <= 1e-9);
        }
    }
    assert_eq!(same.violations, baseline.violations);

    // The substation carries its own metering noise, so pinning the
    // feeders closes the gap only by the share of variance they explain.
    let applied = apply_requests(&app, &baseline).await;
    for v in &baseline.violations {
        let est = applied.steps[v.step].estimate(v.series).unwrap();
        assert!((est.mean - v.limit).abs() < (v.predicted_mean - v.limit).abs(), "{} vs {}", est.mean, v.limit);
    }

    let substation = rt.installation().doms.topology.substations[0].series;
    let (status, body) = post(
        &app,
        "/api/doms/whatif",
        json!({ "adjustments": { substation.to_string(): [{ "step": 0, "delta": 1.0 }] } }),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "not_controllable");
    assert_eq!(body["error"]["ids"], json!([substation.to_string()]));

    let feeder = rt.installation().doms.topology.feeders[0].node.series;
    let (status, body) = post(
        &app,
        "/api/doms/whatif",
        json!({ "adjustments": { feeder.to_string(): [{ "step": 96, "delta": 1.0 }] } }),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "step_out_of_range");
}

#[tokio::test]
async fn jobs_and_models_after_one_hour() {
    let dir = generate("germany", 2, 14, false);
    let rt = open(&dir);
    let app = router(rt.clone());
    post(&app, "/api/clock/advance", json!({})).await;
    let (_, body) = get(&app, "/api/jobs?kind=score").await;
    assert_eq!(body["total"], 11);
    assert_eq!(body["counts"]["failed"], 0);
    let (_, body) = get(&app, "/api/jobs?kind=train").await;
    assert_eq!(body["total"], 11, "one bootstrap training per model");
    let (_, body) = get(&app, "/api/jobs?status=failed").await;
    assert_eq!(body["total"], 0);
    let (_, body) = get(&app, "/api/jobs?limit=3").await;
    assert_eq!(body["jobs"].as_array().unwrap().len(), 3);
    assert_eq!(body["total"], 22);
    let (status, _) = get(&app, "/api/jobs?status=sleeping").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (_, body) = get(&app, "/api/models").await;
    let models = body["models"].as_array().unwrap();
    assert_eq!(models.len(), 11);
    assert!(models.iter().all(|m| m["versions"] == 1));
}

#[tokio::test]
async fn reads_do_not_mutate_state() {
    let dir = generate("germany", 2, 14, true);
    let rt = open(&dir);
    rt.advance(1);
    let app = router(rt.clone());
    let snapshot = |rt: &Runtime| (rt.now(), rt.store().forecast_count(), rt.store().job_records().len());
    let before = snapshot(&rt);
    let mut first = Vec::new();
    for uri in ["/api/grid/topology", "/api/registry/series", "/api/jobs", "/api/forecasts/0", "/api/models", "/api/clock"] {
        first.push(get(&app, uri).await);
    }
    let (_, run_a) = post(&app, "/api/doms/run", json!({})).await;
    let (_, run_b) = post(&app, "/api/doms/run", json!({})).await;
    assert_eq!(run_a, run_b);
    for (i, uri) in ["/api/grid/topology", "/api/registry/series", "/api/jobs", "/api/forecasts/0", "/api/models", "/api/clock"]
        .iter()
        .enumerate()
    {
        assert_eq!(get(&app, uri).await, first[i], "{uri}");
    }
    assert_eq!(snapshot(&rt), before);
}
