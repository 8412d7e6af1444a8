//! Canonical-form Gaussian factor graphs with exact information-form
//! inference.
//!
//! Every factor contributes `(J, η)` to a joint precision `H` and information
//! vector `η_total`; the posterior mean solves `H μ = η_total` and marginal
//! variances are the diagonal of `H⁻¹`. Both come from one sparse Cholesky
//! factorization of `H`.

mod envelope;
mod factor;
mod inference;
mod refine;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use factor::{linear_factor, sensor_factor, GaussianFactor};
pub use inference::{condition, condition_with, infer, infer_with};

use envelope::SymmetricRows;

/// Dense index of a variable inside one [`FactorGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VariableId(pub usize);

impl fmt::Display for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorGraphError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("information matrix is not symmetric")]
    NotSymmetric,
    #[error("information matrix is not positive semi-definite")]
    NotPositiveSemidefinite,
    #[error("variable label `{0}` declared twice")]
    DuplicateVariable(String),
    #[error("unknown variable {0}")]
    UnknownVariable(String),
    #[error("variable {0} assigned twice in evidence")]
    DuplicateEvidence(String),
    #[error("under-determined graph: variable `{variable}` is not pinned down by any proper factor chain")]
    UnderDetermined { variable: String },
}

/// Collects variables and factors; [`FactorGraphBuilder::build`] freezes them.
#[derive(Clone, Debug, Default)]
pub struct FactorGraphBuilder {
    labels: Vec<String>,
    index: HashMap<String, VariableId>,
    factors: Vec<GaussianFactor>,
}

impl FactorGraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, label: impl Into<String>) -> Result<VariableId, FactorGraphError> {
        let label = label.into();
        if self.index.contains_key(&label) {
            return Err(FactorGraphError::DuplicateVariable(label));
        }
        let id = VariableId(self.labels.len());
        self.index.insert(label.clone(), id);
        self.labels.push(label);
        Ok(id)
    }

    pub fn variable(&self, label: &str) -> Option<VariableId> {
        self.index.get(label).copied()
    }

    pub fn add_factor(&mut self, factor: GaussianFactor) -> Result<(), FactorGraphError> {
        if let Some(bad) = factor.scope().iter().find(|v| v.0 >= self.labels.len()) {
            return Err(FactorGraphError::UnknownVariable(bad.to_string()));
        }
        self.factors.push(factor);
        Ok(())
    }

    pub fn build(self) -> FactorGraph {
        FactorGraph { labels: self.labels, index: self.index, factors: self.factors }
    }
}

/// Immutable set of variables and Gaussian factors.
#[derive(Clone, Debug)]
pub struct FactorGraph {
    labels: Vec<String>,
    index: HashMap<String, VariableId>,
    factors: Vec<GaussianFactor>,
}

impl FactorGraph {
    pub fn builder() -> FactorGraphBuilder {
        FactorGraphBuilder::new()
    }

    pub fn variable_count(&self) -> usize {
        self.labels.len()
    }

    pub fn variables(&self) -> impl Iterator<Item = VariableId> {
        (0..self.labels.len()).map(VariableId)
    }

    pub fn variable(&self, label: &str) -> Option<VariableId> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: VariableId) -> &str {
        &self.labels[id.0]
    }

    pub fn factors(&self) -> &[GaussianFactor] {
        &self.factors
    }

    /// Returns a new graph with `extra` appended to this graph's factors.
    pub fn with_factors(
        &self,
        extra: impl IntoIterator<Item = GaussianFactor>,
    ) -> Result<FactorGraph, FactorGraphError> {
        let mut builder = FactorGraphBuilder {
            labels: self.labels.clone(),
            index: self.index.clone(),
            factors: self.factors.clone(),
        };
        for f in extra {
            builder.add_factor(f)?;
        }
        Ok(builder.build())
    }

    /// Scatters every factor into the joint precision (lower triangle only,
    /// so the assembled matrix is symmetric by construction) and the joint
    /// information vector.
    pub(crate) fn assemble(&self) -> (SymmetricRows, Vec<f64>) {
        let n = self.labels.len();
        let mut h = SymmetricRows::new(n);
        let mut eta = vec![0.0; n];
        for f in &self.factors {
            let scope = f.scope();
            let j = f.information();
            for (a, va) in scope.iter().enumerate() {
                eta[va.0] += f.eta()[a];
                for (b, vb) in scope.iter().enumerate().take(a + 1) {
                    h.add(va.0, vb.0, j[(a, b)]);
                }
            }
        }
        (h, eta)
    }

    /// Dense copy of the assembled precision and information vector.
    pub fn assembled_dense(&self) -> (nalgebra::DMatrix<f64>, nalgebra::DVector<f64>) {
        let (h, eta) = self.assemble();
        let n = h.len();
        let dense = nalgebra::DMatrix::from_fn(n, n, |i, j| h.get(i, j));
        (dense, nalgebra::DVector::from_vec(eta))
    }

    /// Writes the assembled system in coordinate-triplet form: `H i j value`
    /// lines for the upper triangle followed by `eta i value` lines.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> io::Result<()> {
        let (h, eta) = self.assemble();
        writeln!(out, "# n={} labels follow as `var i label`", h.len())?;
        for (i, label) in self.labels.iter().enumerate() {
            writeln!(out, "var {i} {label}")?;
        }
        let mut upper: Vec<(usize, usize, f64)> =
            h.lower_entries().map(|(i, j, v)| (j, i, v)).collect();
        upper.sort_by_key(|&(i, j, _)| (i, j));
        for (i, j, v) in upper {
            writeln!(out, "H {i} {j} {v:e}")?;
        }
        for (i, v) in eta.iter().enumerate() {
            writeln!(out, "eta {i} {v:e}")?;
        }
        Ok(())
    }
}

/// Hard assignments of variables to values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Evidence {
    assignments: BTreeMap<VariableId, f64>,
}

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, var: VariableId, value: f64) -> Result<(), FactorGraphError> {
        if !value.is_finite() {
            return Err(FactorGraphError::InvalidParameter(format!(
                "non-finite evidence for {var}"
            )));
        }
        if self.assignments.insert(var, value).is_some() {
            return Err(FactorGraphError::DuplicateEvidence(var.to_string()));
        }
        Ok(())
    }

    pub fn get(&self, var: VariableId) -> Option<f64> {
        self.assignments.get(&var).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VariableId, f64)> + '_ {
        self.assignments.iter().map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

impl FromIterator<(VariableId, f64)> for Evidence {
    /// Later duplicates overwrite earlier ones; use [`Evidence::insert`] to
    /// reject them instead.
    fn from_iter<I: IntoIterator<Item = (VariableId, f64)>>(iter: I) -> Self {
        Evidence { assignments: iter.into_iter().collect() }
    }
}

/// Posterior means and marginal variances over a set of variables (all of a
/// graph's variables for [`infer`], the free ones for [`condition`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    variables: Vec<VariableId>,
    mean: Vec<f64>,
    marginal_variance: Vec<f64>,
    #[serde(skip)]
    position: HashMap<VariableId, usize>,
}

impl Posterior {
    pub(crate) fn new(variables: Vec<VariableId>, mean: Vec<f64>, marginal_variance: Vec<f64>) -> Self {
        let position = variables.iter().enumerate().map(|(p, v)| (*v, p)).collect();
        Posterior { variables, mean, marginal_variance, position }
    }

    pub fn variables(&self) -> &[VariableId] {
        &self.variables
    }

    pub fn means(&self) -> &[f64] {
        &self.mean
    }

    pub fn marginal_variances(&self) -> &[f64] {
        &self.marginal_variance
    }

    pub fn contains(&self, var: VariableId) -> bool {
        self.position.contains_key(&var)
    }

    pub fn mean(&self, var: VariableId) -> Option<f64> {
        self.position.get(&var).map(|&p| self.mean[p])
    }

    pub fn variance(&self, var: VariableId) -> Option<f64> {
        self.position.get(&var).map(|&p| self.marginal_variance[p])
    }

    pub fn sd(&self, var: VariableId) -> Option<f64> {
        self.variance(var).map(f64::sqrt)
    }
}
