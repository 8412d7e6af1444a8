use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{FactorGraphError, VariableId};

/// Relative tolerance for the symmetry and semi-definiteness checks on a
/// caller-supplied information matrix.
const FACTOR_RTOL: f64 = 1e-10;

/// A Gaussian potential `exp(-½ xᵀJx + ηᵀx)` over an ordered scope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFactor {
    scope: Vec<VariableId>,
    information: DMatrix<f64>,
    eta: DVector<f64>,
    /// Set when the factor is a scalar observation `aᵀx = target + ε`, so
    /// residuals can be evaluated without the rounding of `a aᵀ / r`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    measurement: Option<Measurement>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct Measurement {
    pub(crate) coefficients: Vec<f64>,
    pub(crate) target: f64,
    pub(crate) variance: f64,
}

impl GaussianFactor {
    /// Builds a factor from an explicit canonical form, checking dimensions,
    /// symmetry, and positive semi-definiteness of `information`.
    pub fn new(
        scope: Vec<VariableId>,
        information: DMatrix<f64>,
        eta: DVector<f64>,
    ) -> Result<Self, FactorGraphError> {
        let n = scope.len();
        if n == 0 {
            return Err(FactorGraphError::InvalidParameter("empty factor scope".into()));
        }
        if information.nrows() != n || information.ncols() != n || eta.len() != n {
            return Err(FactorGraphError::DimensionMismatch {
                expected: n,
                found: if information.nrows() != n { information.nrows() } else { eta.len() },
            });
        }
        let mut seen = scope.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(FactorGraphError::InvalidParameter(
                "factor scope repeats a variable".into(),
            ));
        }
        if information.iter().chain(eta.iter()).any(|v| !v.is_finite()) {
            return Err(FactorGraphError::InvalidParameter("non-finite factor entry".into()));
        }
        let scale = information.amax().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in (i + 1)..n {
                if (information[(i, j)] - information[(j, i)]).abs() > FACTOR_RTOL * scale {
                    return Err(FactorGraphError::NotSymmetric);
                }
            }
        }
        // Store an exactly symmetric copy so assembly never has to pick a side.
        let information = (&information + information.transpose()) * 0.5;
        if n > 1 {
            let min_eig = SymmetricEigen::new(information.clone()).eigenvalues.min();
            if min_eig < -FACTOR_RTOL * scale {
                return Err(FactorGraphError::NotPositiveSemidefinite);
            }
        } else if information[(0, 0)] < 0.0 {
            return Err(FactorGraphError::NotPositiveSemidefinite);
        }
        Ok(GaussianFactor { scope, information, eta, measurement: None })
    }

    /// Gaussian prior `N(mean, variance)` on one variable.
    pub fn prior(var: VariableId, mean: f64, variance: f64) -> Result<Self, FactorGraphError> {
        sensor_factor(var, mean, variance)
    }

    pub fn scope(&self) -> &[VariableId] {
        &self.scope
    }

    pub fn information(&self) -> &DMatrix<f64> {
        &self.information
    }

    pub fn eta(&self) -> &DVector<f64> {
        &self.eta
    }

    pub(crate) fn measurement(&self) -> Option<&Measurement> {
        self.measurement.as_ref()
    }
}

/// Noisy direct observation `y = x + ε`, `ε ~ N(0, noise_variance)`.
pub fn sensor_factor(
    var: VariableId,
    observation: f64,
    noise_variance: f64,
) -> Result<GaussianFactor, FactorGraphError> {
    if !(noise_variance > 0.0) || !noise_variance.is_finite() {
        return Err(FactorGraphError::InvalidParameter(format!(
            "noise variance must be positive, got {noise_variance}"
        )));
    }
    if !observation.is_finite() {
        return Err(FactorGraphError::InvalidParameter("non-finite observation".into()));
    }
    let precision = 1.0 / noise_variance;
    Ok(GaussianFactor {
        scope: vec![var],
        information: DMatrix::from_element(1, 1, precision),
        eta: DVector::from_element(1, observation * precision),
        measurement: Some(Measurement { coefficients: vec![1.0], target: observation, variance: noise_variance }),
    })
}

/// Conditional `child ~ N(wᵀ·parents + bias, residual_variance)` in canonical
/// form. With `a = [1, -w]` the factor is `J = a aᵀ / r`, `η = (b / r) a`.
pub fn linear_factor(
    child: VariableId,
    parents: &[VariableId],
    weights: &[f64],
    bias: f64,
    residual_variance: f64,
) -> Result<GaussianFactor, FactorGraphError> {
    if weights.len() != parents.len() {
        return Err(FactorGraphError::DimensionMismatch {
            expected: parents.len(),
            found: weights.len(),
        });
    }
    if !(residual_variance > 0.0) || !residual_variance.is_finite() {
        return Err(FactorGraphError::InvalidParameter(format!(
            "residual variance must be positive, got {residual_variance}"
        )));
    }
    if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
        return Err(FactorGraphError::InvalidParameter("non-finite model coefficient".into()));
    }
    let mut scope = Vec::with_capacity(parents.len() + 1);
    scope.push(child);
    scope.extend_from_slice(parents);
    let mut sorted = scope.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(FactorGraphError::InvalidParameter(
            "child and parents must be distinct variables".into(),
        ));
    }

    let a = DVector::from_iterator(
        scope.len(),
        std::iter::once(1.0).chain(weights.iter().map(|w| -w)),
    );
    let information = &a * a.transpose() / residual_variance;
    let eta = &a * (bias / residual_variance);
    let measurement = Measurement { coefficients: a.iter().copied().collect(), target: bias, variance: residual_variance };
    Ok(GaussianFactor { scope, information, eta, measurement: Some(measurement) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(i: usize) -> VariableId {
        VariableId(i)
    }

    #[test]
    fn sensor_canonical_form() {
        let f = sensor_factor(v(0), 5.0, 0.25).unwrap();
        assert_eq!(f.information()[(0, 0)], 4.0);
        assert_eq!(f.eta()[0], 20.0);

        let f = sensor_factor(v(0), 0.0, 1.0).unwrap();
        assert_eq!(f.information()[(0, 0)], 1.0);
        assert_eq!(f.eta()[0], 0.0);

        let f = sensor_factor(v(0), 110.0, 25.0).unwrap();
        assert!((f.information()[(0, 0)] - 0.04).abs() < 1e-15);
        assert!((f.eta()[0] - 4.4).abs() < 1e-12);
    }

    #[test]
    fn sensor_rejects_bad_variance() {
        assert!(matches!(
            sensor_factor(v(0), 1.0, 0.0),
            Err(FactorGraphError::InvalidParameter(_))
        ));
        assert!(sensor_factor(v(0), 1.0, -2.0).is_err());
        assert!(sensor_factor(v(0), 1.0, f64::NAN).is_err());
    }

    #[test]
    fn linear_factor_expansion() {
        let f = linear_factor(v(0), &[v(1)], &[2.0], 0.0, 0.5).unwrap();
        assert_eq!(f.scope(), &[v(0), v(1)]);
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, -4.0, -4.0, 8.0]);
        assert_eq!(f.information(), &expected);
        assert_eq!(f.eta().as_slice(), &[0.0, 0.0]);

        let f = linear_factor(v(0), &[v(1)], &[1.0], 0.0, 1.0).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_eq!(f.information(), &expected);

        let f = linear_factor(v(0), &[v(1), v(2)], &[1.0, 1.0], 0.0, 0.1).unwrap();
        let a = DVector::from_vec(vec![1.0, -1.0, -1.0]);
        let expected = &a * a.transpose() * 10.0;
        assert!((f.information() - expected).amax() < 1e-12);
    }

    #[test]
    fn linear_factor_bias_enters_eta() {
        let f = linear_factor(v(0), &[v(1)], &[3.0], 2.0, 4.0).unwrap();
        assert_eq!(f.eta().as_slice(), &[0.5, -1.5]);
    }

    #[test]
    fn linear_factor_errors() {
        assert!(matches!(
            linear_factor(v(0), &[v(1)], &[1.0, 2.0], 0.0, 1.0),
            Err(FactorGraphError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            linear_factor(v(0), &[v(1)], &[1.0], 0.0, 0.0),
            Err(FactorGraphError::InvalidParameter(_))
        ));
        assert!(linear_factor(v(0), &[v(0)], &[1.0], 0.0, 1.0).is_err());
    }

    #[test]
    fn explicit_factor_validation() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            GaussianFactor::new(vec![v(0), v(1)], asym, DVector::zeros(2)),
            Err(FactorGraphError::NotSymmetric)
        ));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            GaussianFactor::new(vec![v(0), v(1)], indefinite, DVector::zeros(2)),
            Err(FactorGraphError::NotPositiveSemidefinite)
        ));
        assert!(matches!(
            GaussianFactor::new(vec![v(0)], DMatrix::identity(2, 2), DVector::zeros(2)),
            Err(FactorGraphError::DimensionMismatch { .. })
        ));
    }
}
