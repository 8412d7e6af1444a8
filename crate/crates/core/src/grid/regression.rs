//! Closed-form ridge regression with an unpenalized intercept.
//!
//! The penalized least-squares problem on centered data is solved as an
//! ordinary least-squares problem on the augmented system `[X; √λ I] w = [y; 0]`
//! through a QR factorization.

use nalgebra::{DMatrix, DVector};

use super::{GridError, RelationKind, RelationalModel};
use crate::registry::SeriesId;

pub const DEFAULT_MIN_RESIDUAL_VARIANCE: f64 = 1e-9;

/// Relative size below which an `R` diagonal entry counts as rank loss.
const RANK_RTOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct RidgeSolution {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Unbiased residual variance `SSR / (n − p − 1)`, floored.
    pub residual_variance: f64,
    pub samples: usize,
}

/// Minimizes `Σ (y − Xw − b)² + ridge·‖w‖²` over `w` and `b`. Rows of
/// `design` are samples.
pub fn ridge_solve(
    design: &DMatrix<f64>,
    target: &[f64],
    ridge: f64,
    min_residual_variance: f64,
) -> Result<RidgeSolution, GridError> {
    let (n, p) = design.shape();
    if target.len() != n {
        return Err(GridError::InvalidModel(format!(
            "{} target samples for {} design rows",
            target.len(),
            n
        )));
    }
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(GridError::InvalidModel(format!("ridge must be non-negative, got {ridge}")));
    }
    if n < p + 1 {
        return Err(GridError::InsufficientSamples { required: p + 1, got: n });
    }
    if design.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(GridError::NonFinite("training data".into()));
    }

    let y_mean = target.iter().sum::<f64>() / n as f64;
    let x_mean: Vec<f64> = (0..p).map(|j| design.column(j).sum() / n as f64).collect();

    let weights = if p == 0 {
        Vec::new()
    } else {
        let mut augmented = DMatrix::<f64>::zeros(n + p, p);
        for j in 0..p {
            for i in 0..n {
                augmented[(i, j)] = design[(i, j)] - x_mean[j];
            }
            augmented[(n + j, j)] = ridge.sqrt();
        }
        let mut rhs = DVector::<f64>::zeros(n + p);
        for i in 0..n {
            rhs[i] = target[i] - y_mean;
        }
        let column_scale = augmented.column_iter().map(|c| c.norm()).fold(0.0, f64::max);

        let qr = augmented.qr();
        let r = qr.r();
        for j in 0..p {
            if r[(j, j)].abs() <= RANK_RTOL * column_scale.max(f64::MIN_POSITIVE) {
                return Err(GridError::DegenerateParents { column: j });
            }
        }
        let qtb = qr.q().transpose() * rhs;
        let w = r
            .solve_upper_triangular(&qtb)
            .ok_or(GridError::DegenerateParents { column: 0 })?;
        w.iter().copied().collect::<Vec<f64>>()
    };

    let bias = y_mean - weights.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
    let ssr: f64 = (0..n)
        .map(|i| {
            let fit = bias + (0..p).map(|j| weights[j] * design[(i, j)]).sum::<f64>();
            (target[i] - fit).powi(2)
        })
        .sum();
    let dof = n - p - 1;
    let raw = if dof > 0 { ssr / dof as f64 } else { 0.0 };
    Ok(RidgeSolution {
        weights,
        bias,
        residual_variance: raw.max(min_residual_variance),
        samples: n,
    })
}

/// Fits `child = wᵀ parents + b + ε` from time-aligned histories. Columns of
/// `parent_histories` are the parents, rows the aligned samples.
pub fn fit_linear_model(
    child: SeriesId,
    parents: &[SeriesId],
    child_history: &[f64],
    parent_histories: &DMatrix<f64>,
    ridge: f64,
    min_residual_variance: f64,
) -> Result<RelationalModel, GridError> {
    if parent_histories.ncols() != parents.len() {
        return Err(GridError::InvalidModel(format!(
            "{} history columns for {} parents",
            parent_histories.ncols(),
            parents.len()
        )));
    }
    let fit = ridge_solve(parent_histories, child_history, ridge, min_residual_variance)?;
    Ok(RelationalModel {
        child,
        parents: parents.to_vec(),
        kind: RelationKind::Linear,
        weights: fit.weights,
        bias: fit.bias,
        residual_variance: fit.residual_variance,
        operating_point: None,
    })
}
