use std::collections::BTreeMap;

use flexgrid_core::grid::{
    build_graph, fit_linear_model, ridge_solve, Feeder, Gaussian, GraphBuildInput, GridNode, GridTopology,
    RelationKind, RelationalModel, StepReading,
};
use flexgrid_core::registry::SeriesId;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn fit_recovers_generating_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 10_000;
    let (w, b, r) = ([0.8, 1.3, -0.4], 5.0, 2.5);
    let parents = DMatrix::from_fn(n, 3, |_, j| rng.random_range(0.0..10.0) * (j + 1) as f64);
    let noise = Normal::new(0.0, f64::sqrt(r)).unwrap();
    let child: Vec<f64> = (0..n)
        .map(|i| (0..3).map(|j| w[j] * parents[(i, j)]).sum::<f64>() + b + noise.sample(&mut rng))
        .collect();
    let ids = [SeriesId(1), SeriesId(2), SeriesId(3)];
    let m = fit_linear_model(SeriesId(0), &ids, &child, &parents, 0.0, 1e-9).unwrap();

    // Standard errors from σ² (XᵀX)⁻¹ on centered columns.
    let means: Vec<f64> = (0..3).map(|j| parents.column(j).mean()).collect();
    let xc = DMatrix::from_fn(n, 3, |i, j| parents[(i, j)] - means[j]);
    let cov = (xc.transpose() * &xc).try_inverse().unwrap() * r;
    for j in 0..3 {
        let se = cov[(j, j)].sqrt();
        assert!((m.weights[j] - w[j]).abs() < 3.0 * se, "w{j}: {} vs {} (se {se})", m.weights[j], w[j]);
    }
    let mv = DVector::from_column_slice(&means);
    let bias_se = (r / n as f64 + (mv.transpose() * &cov * &mv)[(0, 0)]).sqrt();
    assert!((m.bias - b).abs() < 3.0 * bias_se, "bias {} vs {b} (se {bias_se})", m.bias);
    assert!((m.residual_variance - r).abs() < 0.2 * r);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ridge_matches_normal_equations(seed in any::<u64>(), p in 1usize..6, lambda in 0.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 200;
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-5.0..5.0));
        let y: Vec<f64> = (0..n).map(|i| x.row(i).sum() * 0.7 + rng.random_range(-1.0..1.0) + 3.0).collect();
        let fit = ridge_solve(&x, &y, lambda, 1e-9).unwrap();

        let means: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let xc = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - means[j]);
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let w = (xc.transpose() * &xc + DMatrix::identity(p, p) * lambda).lu().solve(&(xc.transpose() * yc)).unwrap();
        for j in 0..p {
            prop_assert!((fit.weights[j] - w[j]).abs() < 1e-6);
        }
        let b = y_mean - (0..p).map(|j| w[j] * means[j]).sum::<f64>();
        prop_assert!((fit.bias - b).abs() < 1e-6);
    }

    #[test]
    fn graph_build_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feeders = rng.random_range(2..6u32);
        let topology = GridTopology {
            substations: vec![GridNode { entity: "S".into(), series: SeriesId(100) }],
            feeders: (0..feeders)
                .map(|f| Feeder { node: GridNode { entity: format!("F{f}"), series: SeriesId(f) }, substation: "S".into() })
                .collect(),
            voltage_points: vec![],
        };
        let mut forecasts = BTreeMap::new();
        let mut readings = BTreeMap::new();
        for f in 0..feeders {
            forecasts.insert(SeriesId(f), vec![Gaussian::new(rng.random_range(0.0..50.0), 4.0); 4]);
            if rng.random_bool(0.5) {
                readings.insert(SeriesId(f), vec![StepReading { step: 1, value: 3.0, noise_variance: 0.1 }]);
            }
        }
        let model = RelationalModel {
            child: SeriesId(100),
            parents: (0..feeders).rev().map(SeriesId).collect(),
            kind: RelationKind::Linear,
            weights: vec![1.0; feeders as usize],
            bias: 0.0,
            residual_variance: 0.01,
            operating_point: None,
        };
        let input = GraphBuildInput { topology, models: vec![model], forecasts, readings };
        let a = build_graph(&input, 1).unwrap();
        let b = build_graph(&input.clone(), 1).unwrap();
        prop_assert_eq!(a.graph.factors(), b.graph.factors());
        prop_assert_eq!(&a.series, &b.series);
        prop_assert!(a.series.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(a.relational_factors, 1);
    }
}
