use flexgrid_core::exec::Execution;
use flexgrid_core::factor_graph::{
    condition, infer, infer_with, linear_factor, Evidence, FactorGraph, GaussianFactor, VariableId,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random connected-ish graph: proper priors on every variable plus
/// random PSD factors of rank ≤ scope size over 2–4 variables.
fn random_factors(rng: &mut ChaCha8Rng, n: usize) -> Vec<GaussianFactor> {
    let mut factors = Vec::new();
    for i in 0..n {
        let mean = rng.random_range(-50.0..50.0);
        let var = rng.random_range(0.5..10.0);
        factors.push(GaussianFactor::prior(VariableId(i), mean, var).unwrap());
    }
    if n < 2 {
        return factors;
    }
    for _ in 0..rng.random_range(0..2 * n) {
        let size = rng.random_range(2..=4.min(n));
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(rng);
        let scope: Vec<VariableId> = all[..size].iter().map(|&i| VariableId(i)).collect();
        let rank = rng.random_range(1..=size);
        let b = DMatrix::from_fn(size, rank, |_, _| rng.random_range(-1.0..1.0));
        let eta = DVector::from_fn(size, |_, _| rng.random_range(-5.0..5.0));
        factors.push(GaussianFactor::new(scope, &b * b.transpose(), eta).unwrap());
    }
    factors
}

fn graph(n: usize, factors: &[GaussianFactor]) -> FactorGraph {
    let mut b = FactorGraph::builder();
    for i in 0..n {
        b.add_variable(format!("v{i}")).unwrap();
    }
    for f in factors {
        b.add_factor(f.clone()).unwrap();
    }
    b.build()
}

/// Dense joint Gaussian: scatter every factor into a full matrix and invert.
fn dense_oracle(n: usize, factors: &[GaussianFactor]) -> (DVector<f64>, DMatrix<f64>) {
    let mut h = DMatrix::zeros(n, n);
    let mut eta = DVector::zeros(n);
    for f in factors {
        for (a, va) in f.scope().iter().enumerate() {
            eta[va.0] += f.eta()[a];
            for (b, vb) in f.scope().iter().enumerate() {
                h[(va.0, vb.0)] += f.information()[(a, b)];
            }
        }
    }
    let cov = h.try_inverse().expect("proper priors make H invertible");
    (&cov * eta, cov)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn matches_dense_oracle(seed in any::<u64>(), n in 1usize..=50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors = random_factors(&mut rng, n);
        let post = infer(&graph(n, &factors)).unwrap();
        let (mean, cov) = dense_oracle(n, &factors);
        for i in 0..n {
            prop_assert!((post.mean(VariableId(i)).unwrap() - mean[i]).abs() < 1e-8);
            prop_assert!((post.variance(VariableId(i)).unwrap() - cov[(i, i)]).abs() < 1e-8);
        }
    }

    #[test]
    fn conditioning_on_posterior_means_changes_nothing(seed in any::<u64>(), n in 2usize..=30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors = random_factors(&mut rng, n);
        let g = graph(n, &factors);
        let post = infer(&g).unwrap();
        let mut evidence = Evidence::new();
        for i in 0..n {
            if rng.random_bool(0.3) {
                evidence.insert(VariableId(i), post.mean(VariableId(i)).unwrap()).unwrap();
            }
        }
        let cond = condition(&g, &evidence).unwrap();
        for &v in cond.variables() {
            prop_assert!((cond.mean(v).unwrap() - post.mean(v).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn conditioning_matches_dense_oracle(seed in any::<u64>(), n in 2usize..=25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors = random_factors(&mut rng, n);
        let g = graph(n, &factors);
        let fixed: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.4)).collect();
        let values: Vec<f64> = fixed.iter().map(|_| rng.random_range(-20.0..20.0)).collect();
        let evidence: Evidence = fixed.iter().zip(&values).map(|(&i, &x)| (VariableId(i), x)).collect();
        let cond = condition(&g, &evidence).unwrap();

        // Gaussian conditioning in moment form: μ_u + Σ_ue Σ_ee⁻¹ (x_e − μ_e).
        let (mean, cov) = dense_oracle(n, &factors);
        let free: Vec<usize> = (0..n).filter(|i| !fixed.contains(i)).collect();
        let pick = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |i, j| cov[(rows[i], cols[j])]);
        let gain = if fixed.is_empty() {
            DMatrix::zeros(free.len(), 0)
        } else {
            pick(&free, &fixed) * pick(&fixed, &fixed).try_inverse().unwrap()
        };
        let shift = DVector::from_fn(fixed.len(), |k, _| values[k] - mean[fixed[k]]);
        let cond_mean = &gain * shift;
        let cond_cov = pick(&free, &free) - &gain * pick(&fixed, &free);
        for (p, &i) in free.iter().enumerate() {
            prop_assert!((cond.mean(VariableId(i)).unwrap() - (mean[i] + cond_mean[p])).abs() < 1e-7);
            prop_assert!((cond.variance(VariableId(i)).unwrap() - cond_cov[(p, p)]).abs() < 1e-7);
        }
    }

    #[test]
    fn factor_order_is_irrelevant(seed in any::<u64>(), n in 1usize..=30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut factors = random_factors(&mut rng, n);
        let a = infer(&graph(n, &factors)).unwrap();
        factors.shuffle(&mut rng);
        let b = infer(&graph(n, &factors)).unwrap();
        for i in 0..n {
            let v = VariableId(i);
            prop_assert!((a.mean(v).unwrap() - b.mean(v).unwrap()).abs() < 1e-9);
            prop_assert!((a.variance(v).unwrap() - b.variance(v).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn splitting_a_factor_is_irrelevant(seed in any::<u64>(), n in 2usize..=30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors = random_factors(&mut rng, n);
        let split: Vec<GaussianFactor> = factors
            .iter()
            .flat_map(|f| {
                let half = |s: f64| GaussianFactor::new(f.scope().to_vec(), f.information() * s, f.eta() * s).unwrap();
                [half(0.25), half(0.75)]
            })
            .collect();
        let a = infer(&graph(n, &factors)).unwrap();
        let b = infer(&graph(n, &split)).unwrap();
        for i in 0..n {
            let v = VariableId(i);
            prop_assert!((a.mean(v).unwrap() - b.mean(v).unwrap()).abs() < 1e-9);
            prop_assert!((a.variance(v).unwrap() - b.variance(v).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn sequential_and_parallel_agree(seed in any::<u64>(), n in 1usize..=50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = graph(n, &random_factors(&mut rng, n));
        let a = infer_with(&g, Execution::Sequential).unwrap();
        let b = infer_with(&g, Execution::Parallel).unwrap();
        prop_assert_eq!(a.means(), b.means());
        prop_assert_eq!(a.marginal_variances(), b.marginal_variances());
    }
}

#[test]
fn near_deterministic_sum_is_conserved() {
    // Substation = Σ feeders at a 1e-9 residual, feeder priors of order 10².
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for feeders in [2usize, 3, 5, 8] {
        let mut b = FactorGraph::builder();
        let ss = b.add_variable("ss").unwrap();
        let fs: Vec<VariableId> = (0..feeders).map(|i| b.add_variable(format!("f{i}")).unwrap()).collect();
        for f in &fs {
            let mean = rng.random_range(20.0..80.0);
            let var = rng.random_range(10.0..100.0);
            b.add_factor(GaussianFactor::prior(*f, mean, var).unwrap()).unwrap();
        }
        b.add_factor(GaussianFactor::prior(ss, 300.0, 400.0).unwrap()).unwrap();
        b.add_factor(linear_factor(ss, &fs, &vec![1.0; feeders], 0.0, 1e-9).unwrap()).unwrap();
        let post = infer(&b.build()).unwrap();
        let total: f64 = fs.iter().map(|f| post.mean(*f).unwrap()).sum();
        let ss_mean = post.mean(ss).unwrap();
        assert!((ss_mean - total).abs() <= 1e-6 * ss_mean.abs(), "{ss_mean} vs {total}");
    }
}
