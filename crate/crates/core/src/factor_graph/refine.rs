//! Iterative refinement of a factorized solve, with residuals accumulated
//! in compensated (double-double) arithmetic directly from the factors.
//!
//! Near-deterministic relations (residual variances of 1e-9 against priors
//! of order 10) give precision matrices with condition numbers near 1e11,
//! so a single solve loses about five digits. The residual `η − Hx`
//! evaluated factor by factor keeps the information that assembly rounds
//! away, and a few correction solves recover full accuracy.

use super::envelope::EnvelopeCholesky;
use super::FactorGraph;

const MAX_ITERATIONS: usize = 6;

#[derive(Clone, Copy, Default)]
struct Compensated {
    hi: f64,
    lo: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let s = self.hi + x;
        let bp = s - self.hi;
        let err = (self.hi - (s - bp)) + (x - bp);
        self.hi = s;
        self.lo += err;
    }

    fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        let err = a.mul_add(b, -p);
        self.add(p);
        self.lo += err;
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// `η − Hx` on the free variables. `x` holds every variable's value (free
/// or fixed); `position[v]` is the free index of `v` or `usize::MAX`.
fn residual(graph: &FactorGraph, x: &[f64], position: &[usize], free_count: usize) -> Vec<f64> {
    let mut acc = vec![Compensated::default(); free_count];
    for f in graph.factors() {
        let scope = f.scope();
        if !scope.iter().any(|v| position[v.0] != usize::MAX) {
            continue;
        }
        if let Some(m) = f.measurement() {
            let mut misfit = Compensated::default();
            misfit.add(m.target);
            for (c, v) in m.coefficients.iter().zip(scope) {
                misfit.add_product(-c, x[v.0]);
            }
            let scaled = misfit.value() / m.variance;
            for (c, v) in m.coefficients.iter().zip(scope) {
                if let Some(p) = free(position, v.0) {
                    acc[p].add_product(*c, scaled);
                }
            }
        } else {
            let j = f.information();
            for (a, va) in scope.iter().enumerate() {
                let Some(p) = free(position, va.0) else { continue };
                acc[p].add(f.eta()[a]);
                for (b, vb) in scope.iter().enumerate() {
                    acc[p].add_product(-j[(a, b)], x[vb.0]);
                }
            }
        }
    }
    acc.into_iter().map(Compensated::value).collect()
}

fn free(position: &[usize], v: usize) -> Option<usize> {
    (position[v] != usize::MAX).then_some(position[v])
}

/// Improves `x` (full-length, fixed entries already set) in place.
pub(crate) fn refine(graph: &FactorGraph, chol: &EnvelopeCholesky, x: &mut [f64], free_vars: &[usize]) {
    let mut position = vec![usize::MAX; x.len()];
    for (p, &v) in free_vars.iter().enumerate() {
        position[v] = p;
    }
    for _ in 0..MAX_ITERATIONS {
        let r = residual(graph, x, &position, free_vars.len());
        let delta = chol.solve(&r);
        let mut step = 0.0f64;
        let mut size = 1.0f64;
        for (&v, d) in free_vars.iter().zip(&delta) {
            x[v] += d;
            step = step.max(d.abs());
            size = size.max(x[v].abs());
        }
        if step <= 4.0 * f64::EPSILON * size {
            break;
        }
    }
}
