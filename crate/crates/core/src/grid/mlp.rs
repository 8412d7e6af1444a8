use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{GridError, RelationKind, RelationalModel};
use crate::registry::SeriesId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Logistic,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Logistic => 1.0 / (1.0 + (-z).exp()),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Logistic => {
                let s = self.apply(z);
                s * (1.0 - s)
            }
        }
    }
}

/// Scalar-output network `f(x) = w₂ᵀ σ(W₁ x + b₁) + b₂`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneHiddenLayer {
    /// Hidden × input.
    pub input_weights: DMatrix<f64>,
    pub input_bias: DVector<f64>,
    pub output_weights: DVector<f64>,
    pub output_bias: f64,
    pub activation: Activation,
}

impl OneHiddenLayer {
    pub fn inputs(&self) -> usize {
        self.input_weights.ncols()
    }

    fn check(&self) -> Result<(), GridError> {
        let h = self.input_weights.nrows();
        if self.input_bias.len() != h || self.output_weights.len() != h {
            return Err(GridError::InvalidModel(format!(
                "hidden layer of width {h} has {} biases and {} output weights",
                self.input_bias.len(),
                self.output_weights.len()
            )));
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> f64 {
        let z = &self.input_weights * x + &self.input_bias;
        self.output_weights.dot(&z.map(|v| self.activation.apply(v))) + self.output_bias
    }

    /// ∂f/∂x = W₁ᵀ (σ'(W₁x + b₁) ⊙ w₂).
    pub fn jacobian(&self, x: &DVector<f64>) -> DVector<f64> {
        let z = &self.input_weights * x + &self.input_bias;
        let gate = z.map(|v| self.activation.derivative(v)).component_mul(&self.output_weights);
        self.input_weights.transpose() * gate
    }
}

/// First-order expansion of `net` around `operating_point`, as a relational
/// model `child ≈ J·parents + (f(op) − J·op)`.
pub fn linearize_mlp(
    child: SeriesId,
    parents: &[SeriesId],
    net: &OneHiddenLayer,
    operating_point: &[f64],
    residual_variance: f64,
) -> Result<RelationalModel, GridError> {
    net.check()?;
    if parents.len() != net.inputs() || operating_point.len() != net.inputs() {
        return Err(GridError::InvalidModel(format!(
            "network takes {} inputs; got {} parents and an operating point of length {}",
            net.inputs(),
            parents.len(),
            operating_point.len()
        )));
    }
    if operating_point.iter().any(|v| !v.is_finite()) {
        return Err(GridError::NonFinite("operating point".into()));
    }
    let op = DVector::from_column_slice(operating_point);
    let jac = net.jacobian(&op);
    let value = net.evaluate(&op);
    if jac.iter().any(|v| !v.is_finite()) || !value.is_finite() {
        return Err(GridError::NonFinite("network Jacobian at operating point".into()));
    }
    let model = RelationalModel {
        child,
        parents: parents.to_vec(),
        kind: RelationKind::MlpLinearized,
        weights: jac.iter().copied().collect(),
        bias: value - jac.dot(&op),
        residual_variance,
        operating_point: Some(operating_point.to_vec()),
    };
    model.validate()?;
    Ok(model)
}
