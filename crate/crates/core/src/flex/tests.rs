use std::collections::BTreeMap;

use super::*;
use crate::factor_graph::infer;
use crate::grid::{build_graph, Feeder, Gaussian, GraphBuildInput, GridNode, GridTopology, RelationKind, RelationalModel};
use crate::time::ymd_hm;

/// Φ(z) by composite Simpson quadrature of the density from 0 to z.
fn normal_cdf_oracle(z: f64) -> f64 {
    let n = 20_000;
    let h = z / n as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(0.0) + pdf(z);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * pdf(i as f64 * h);
    }
    0.5 + s * h / 3.0
}

fn node(name: &str, id: u32) -> GridNode {
    GridNode { entity: name.into(), series: SeriesId(id) }
}

/// Substation 0 = feeders 1 + 2 (floor residual variance), unmetered; an
/// unrelated substation 3 with feeder 4.
fn fixture(var1: f64, var2: f64) -> GridGraph {
    let topology = GridTopology {
        substations: vec![node("SS", 0), node("SS-B", 3)],
        feeders: vec![
            Feeder { node: node("F1", 1), substation: "SS".into() },
            Feeder { node: node("F2", 2), substation: "SS".into() },
            Feeder { node: node("F3", 4), substation: "SS-B".into() },
        ],
        voltage_points: vec![],
    };
    let input = GraphBuildInput {
        topology,
        models: vec![RelationalModel {
            child: SeriesId(0),
            parents: vec![SeriesId(1), SeriesId(2)],
            kind: RelationKind::Linear,
            weights: vec![1.0, 1.0],
            bias: 0.0,
            residual_variance: 1e-9,
            operating_point: None,
        }],
        forecasts: BTreeMap::from([
            (SeriesId(1), vec![Gaussian::new(55.0, var1)]),
            (SeriesId(2), vec![Gaussian::new(55.0, var2)]),
            (SeriesId(3), vec![Gaussian::new(80.0, 16.0)]),
            (SeriesId(4), vec![Gaussian::new(80.0, 16.0)]),
        ]),
        readings: BTreeMap::new(),
    };
    build_graph(&input, 0).unwrap()
}

fn range(series: u32, low: f64, high: f64) -> OperationalRange {
    OperationalRange::new(SeriesId(series), low, high).unwrap()
}

fn t0() -> Instant {
    ymd_hm(2024, 6, 1, 12, 15)
}

#[test]
fn cdf_matches_quadrature_oracle() {
    for z in [-3.0, -2.0, -0.5, 0.0, 0.7, 2.0, 4.0] {
        assert!((standard_normal_cdf(z) - normal_cdf_oracle(z)).abs() < 1e-10, "z = {z}");
    }
}

#[test]
fn mean_at_limit_is_even_odds() {
    let (p_high, _) = exceedance(100.0, 3.0, &range(0, 0.0, 100.0), 1e-9);
    assert_eq!(p_high, 0.5);
}

#[test]
fn two_sigma_exceedance() {
    let (p_high, p_low) = exceedance(110.0, 5.0, &range(0, 0.0, 100.0), 1e-9);
    // 1 − Φ(−2) from the quadrature oracle.
    let expected = 1.0 - normal_cdf_oracle(-2.0);
    assert!((p_high - expected).abs() < 1e-10);
    assert!((p_high - 0.977_249_868).abs() < 1e-8);
    assert!(p_low < 1e-20);
}

#[test]
fn zero_sd_is_deterministic() {
    assert_eq!(exceedance(101.0, 0.0, &range(0, 0.0, 100.0), 1e-9), (1.0, 0.0));
    assert_eq!(exceedance(99.0, 0.0, &range(0, 0.0, 100.0), 1e-9), (0.0, 0.0));
    assert_eq!(exceedance(-1.0, 0.0, &range(0, 0.0, 100.0), 1e-9), (0.0, 1.0));
}

#[test]
fn detects_overloaded_substation_only() {
    let g = fixture(25.0, 25.0);
    let post = infer(&g.graph).unwrap();
    let ranges = [range(0, 0.0, 100.0), range(3, 0.0, 150.0)];
    let v = detect_violations(&g, &post, &ranges, &FlexConfig::default(), t0()).unwrap();
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].series, SeriesId(0));
    assert_eq!(v[0].bound, Bound::High);
    assert!((v[0].predicted_mean - 110.0).abs() < 1e-6);
    assert!(v[0].exceedance_probability > 0.9);
}

#[test]
fn far_tail_never_flags() {
    let g = fixture(25.0, 25.0);
    let post = infer(&g.graph).unwrap();
    // Mean 110, sd ≈ 7.07: high = 110 + 11 sd.
    let ranges = [range(0, 0.0, 110.0 + 11.0 * 50f64.sqrt())];
    let cfg = FlexConfig { p_threshold: 1e-6, ..Default::default() };
    assert!(detect_violations(&g, &post, &ranges, &cfg, t0()).unwrap().is_empty());
}

#[test]
fn low_bound_violation() {
    let g = fixture(25.0, 25.0);
    let post = infer(&g.graph).unwrap();
    let v = detect_violations(&g, &post, &[range(1, 60.0, 90.0)], &FlexConfig::default(), t0()).unwrap();
    assert_eq!(v[0].bound, Bound::Low);
    assert_eq!(v[0].limit, 60.0);
}

#[test]
fn detection_errors() {
    let g = fixture(25.0, 25.0);
    let post = infer(&g.graph).unwrap();
    assert_eq!(
        detect_violations(&g, &post, &[range(99, 0.0, 1.0)], &FlexConfig::default(), t0()),
        Err(FlexError::UnknownSeries(SeriesId(99)))
    );
    let cfg = FlexConfig { p_threshold: 1.0, ..Default::default() };
    assert!(matches!(
        detect_violations(&g, &post, &[], &cfg, t0()),
        Err(FlexError::InvalidThreshold(_))
    ));
}

fn violations(g: &GridGraph, post: &Posterior) -> Vec<Violation> {
    detect_violations(g, post, &[range(0, 0.0, 100.0)], &FlexConfig::default(), t0()).unwrap()
}

fn controllables() -> ControllableSet {
    [1, 2, 4].into_iter().map(SeriesId).collect()
}

#[test]
fn symmetric_feeders_split_equally() {
    let g = fixture(25.0, 25.0);
    let post = infer(&g.graph).unwrap();
    let v = violations(&g, &post);
    let reqs = estimate_flexibility(&g, &post, &v, &controllables(), &FlexConfig::default(), t0()).unwrap();
    assert_eq!(reqs.len(), 2, "unrelated feeder must not be asked");
    for r in &reqs {
        assert!((r.amount + 5.0).abs() < 1e-6, "{}", r.amount);
        assert_eq!(r.covering, vec![v[0].reference()]);
    }
}

#[test]
fn shift_follows_prior_variance() {
    // Dense oracle: E[f_i | s = 100] − 55 = −10 · var_i / (var_1 + var_2 + r).
    let g = fixture(25.0, 100.0);
    let post = infer(&g.graph).unwrap();
    let v = violations(&g, &post);
    let reqs = estimate_flexibility(&g, &post, &v, &controllables(), &FlexConfig::default(), t0()).unwrap();
    assert_eq!(reqs[0].series, SeriesId(2));
    assert!((reqs[0].amount + 8.0).abs() < 1e-6);
    assert_eq!(reqs[1].series, SeriesId(1));
    assert!((reqs[1].amount + 2.0).abs() < 1e-6);
}

#[test]
fn decoupled_controllables_give_nothing() {
    let g = fixture(25.0, 25.0);
    let post = infer(&g.graph).unwrap();
    let v = violations(&g, &post);
    let only_far: ControllableSet = [SeriesId(4)].into_iter().collect();
    assert!(estimate_flexibility(&g, &post, &v, &only_far, &FlexConfig::default(), t0()).unwrap().is_empty());
}

#[test]
fn estimation_errors() {
    let g = fixture(25.0, 25.0);
    let post = infer(&g.graph).unwrap();
    let v = violations(&g, &post);
    let cfg = FlexConfig::default();
    assert_eq!(
        estimate_flexibility(&g, &post, &v, &ControllableSet::default(), &cfg, t0()),
        Err(FlexError::NoControllables)
    );
    let with_violated: ControllableSet = [SeriesId(0), SeriesId(1)].into_iter().collect();
    assert_eq!(
        estimate_flexibility(&g, &post, &v, &with_violated, &cfg, t0()),
        Err(FlexError::ViolatedIsControllable(SeriesId(0)))
    );
    let mut moved = v.clone();
    moved[0].step = 5;
    assert!(matches!(
        estimate_flexibility(&g, &post, &moved, &controllables(), &cfg, t0()),
        Err(FlexError::StepMismatch { .. })
    ));
}

#[test]
fn violation_at_its_limit_needs_no_flex() {
    let g = fixture(25.0, 25.0);
    let post = infer(&g.graph).unwrap();
    let mut v = violations(&g, &post);
    v[0].limit = post.mean(g.variable(SeriesId(0)).unwrap()).unwrap();
    let reqs = estimate_flexibility(&g, &post, &v, &controllables(), &FlexConfig::default(), t0()).unwrap();
    assert!(reqs.is_empty());
}

#[test]
fn csv_exports() {
    let g = fixture(25.0, 25.0);
    let post = infer(&g.graph).unwrap();
    let v = violations(&g, &post);
    let reqs = estimate_flexibility(&g, &post, &v, &controllables(), &FlexConfig::default(), t0()).unwrap();
    let mut buf = Vec::new();
    write_violations_csv(&mut buf, &v).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    let mut buf = Vec::new();
    write_requests_csv(&mut buf, &reqs).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("series_id,step,timestamp,amount,covering\n"));
    assert_eq!(text.lines().count(), 3);
}
