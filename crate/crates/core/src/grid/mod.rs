//! Grid model: topology, operational ranges, relational models between grid
//! series, and per-horizon-step factor-graph construction.

mod build;
mod mlp;
mod regression;

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factor_graph::FactorGraphError;
use crate::registry::SeriesId;

pub use build::{build_graph, build_graph_with, Gaussian, GraphBuildInput, GridGraph, StepReading};
pub use mlp::{linearize_mlp, Activation, OneHiddenLayer};
pub use regression::{fit_linear_model, ridge_solve, RidgeSolution, DEFAULT_MIN_RESIDUAL_VARIANCE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid operational range for series {series}: low {low} must be below high {high}")]
    InvalidRange { series: SeriesId, low: f64, high: f64 },
    #[error("invalid relational model: {0}")]
    InvalidModel(String),
    #[error("insufficient samples: need at least {required}, got {got}")]
    InsufficientSamples { required: usize, got: usize },
    #[error("degenerate regressor column {column}: constant or collinear with ridge = 0")]
    DegenerateParents { column: usize },
    #[error("non-finite linearization: {0}")]
    NonFinite(String),
    #[error("series {0} is not reached by any forecast, reading, or relational model")]
    Unreachable(SeriesId),
    #[error(transparent)]
    Graph(#[from] FactorGraphError),
}

/// A grid element and the series carrying its modelled quantity (load for
/// substations and feeders, voltage for voltage points).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridNode {
    pub entity: String,
    pub series: SeriesId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feeder {
    #[serde(flatten)]
    pub node: GridNode,
    pub substation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoltagePoint {
    #[serde(flatten)]
    pub node: GridNode,
    /// Substation or feeder the measurement point hangs off.
    pub attached: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridTopology {
    pub substations: Vec<GridNode>,
    pub feeders: Vec<Feeder>,
    pub voltage_points: Vec<VoltagePoint>,
}

impl GridTopology {
    pub fn validate(&self) -> Result<(), GridError> {
        let mut names = HashSet::new();
        let mut series = HashSet::new();
        let nodes = self
            .substations
            .iter()
            .chain(self.feeders.iter().map(|f| &f.node))
            .chain(self.voltage_points.iter().map(|v| &v.node));
        for node in nodes {
            if !names.insert(node.entity.as_str()) {
                return Err(GridError::InvalidTopology(format!("entity `{}` listed twice", node.entity)));
            }
            if !series.insert(node.series) {
                return Err(GridError::InvalidTopology(format!("series {} used by two elements", node.series)));
            }
        }
        let substations: HashSet<&str> = self.substations.iter().map(|s| s.entity.as_str()).collect();
        for f in &self.feeders {
            if !substations.contains(f.substation.as_str()) {
                return Err(GridError::InvalidTopology(format!(
                    "feeder `{}` references unknown substation `{}`",
                    f.node.entity, f.substation
                )));
            }
        }
        let feeders: HashSet<&str> = self.feeders.iter().map(|f| f.node.entity.as_str()).collect();
        for v in &self.voltage_points {
            if !substations.contains(v.attached.as_str()) && !feeders.contains(v.attached.as_str()) {
                return Err(GridError::InvalidTopology(format!(
                    "voltage point `{}` attached to unknown element `{}`",
                    v.node.entity, v.attached
                )));
            }
        }
        Ok(())
    }

    /// All grid series, ascending.
    pub fn series(&self) -> Vec<SeriesId> {
        let set: BTreeSet<SeriesId> = self
            .substations
            .iter()
            .chain(self.feeders.iter().map(|f| &f.node))
            .chain(self.voltage_points.iter().map(|v| &v.node))
            .map(|n| n.series)
            .collect();
        set.into_iter().collect()
    }

    pub fn node_by_entity(&self, entity: &str) -> Option<&GridNode> {
        self.substations
            .iter()
            .chain(self.feeders.iter().map(|f| &f.node))
            .chain(self.voltage_points.iter().map(|v| &v.node))
            .find(|n| n.entity == entity)
    }

    pub fn feeders_of<'a>(&'a self, substation: &'a str) -> impl Iterator<Item = &'a Feeder> + 'a {
        self.feeders.iter().filter(move |f| f.substation == substation)
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (self.substations.len(), self.feeders.len(), self.voltage_points.len())
    }
}

/// Desired operating band of one series, in the series' units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperationalRange {
    pub series: SeriesId,
    pub low: f64,
    pub high: f64,
}

impl OperationalRange {
    pub fn new(series: SeriesId, low: f64, high: f64) -> Result<Self, GridError> {
        let r = OperationalRange { series, low, high };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.low < self.high) {
            return Err(GridError::InvalidRange { series: self.series, low: self.low, high: self.high });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    #[default]
    Linear,
    MlpLinearized,
}

/// `child = wᵀ parents + bias + ε`, `ε ~ N(0, residual_variance)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationalModel {
    pub child: SeriesId,
    pub parents: Vec<SeriesId>,
    #[serde(default)]
    pub kind: RelationKind,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub residual_variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operating_point: Option<Vec<f64>>,
}

impl RelationalModel {
    pub fn validate(&self) -> Result<(), GridError> {
        if self.weights.len() != self.parents.len() {
            return Err(GridError::InvalidModel(format!(
                "{} weights for {} parents",
                self.weights.len(),
                self.parents.len()
            )));
        }
        if !(self.residual_variance > 0.0) {
            return Err(GridError::InvalidModel(format!(
                "residual variance must be positive, got {}",
                self.residual_variance
            )));
        }
        if self.parents.contains(&self.child) {
            return Err(GridError::InvalidModel("child listed among its parents".into()));
        }
        Ok(())
    }

    /// Series touched by the model, child first.
    pub fn series(&self) -> impl Iterator<Item = SeriesId> + '_ {
        std::iter::once(self.child).chain(self.parents.iter().copied())
    }
}
