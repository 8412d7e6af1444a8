use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{GridError, GridTopology, RelationalModel};
use crate::factor_graph::{linear_factor, sensor_factor, FactorGraph, GaussianFactor, VariableId};
use crate::registry::SeriesId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub variance: f64,
}

impl Gaussian {
    pub fn new(mean: f64, variance: f64) -> Self {
        Gaussian { mean, variance }
    }
}

/// A live observation (or strong what-if evidence) at one horizon step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReading {
    pub step: usize,
    pub value: f64,
    pub noise_variance: f64,
}

/// Everything needed to build the graphs of one forecast issue.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GraphBuildInput {
    pub topology: GridTopology,
    pub models: Vec<RelationalModel>,
    /// Per-series forecast priors, indexed by horizon step.
    pub forecasts: BTreeMap<SeriesId, Vec<Gaussian>>,
    pub readings: BTreeMap<SeriesId, Vec<StepReading>>,
}

/// A built per-step graph together with the series ↔ variable mapping.
#[derive(Clone, Debug)]
pub struct GridGraph {
    pub step: usize,
    pub graph: FactorGraph,
    pub series: Vec<SeriesId>,
    variables: BTreeMap<SeriesId, VariableId>,
    pub relational_factors: usize,
}

impl GridGraph {
    pub fn variable(&self, series: SeriesId) -> Option<VariableId> {
        self.variables.get(&series).copied()
    }

    pub fn series_of(&self, var: VariableId) -> SeriesId {
        self.series[var.0]
    }

    /// The same step graph with `extra` factors appended.
    pub fn with_factors(&self, extra: impl IntoIterator<Item = GaussianFactor>) -> Result<GridGraph, GridError> {
        Ok(GridGraph { graph: self.graph.with_factors(extra)?, ..self.clone() })
    }
}

/// One variable per grid series (ascending id); forecast priors, then
/// readings, then relational factors, each in ascending series order.
pub fn build_graph(input: &GraphBuildInput, step: usize) -> Result<GridGraph, GridError> {
    build_graph_with(input, step, &[])
}

/// [`build_graph`] with step-specific relational models (for example
/// surrogates linearized at this step's operating point) added to
/// `input.models`.
pub fn build_graph_with(
    input: &GraphBuildInput,
    step: usize,
    step_models: &[RelationalModel],
) -> Result<GridGraph, GridError> {
    input.topology.validate()?;
    let mut all: BTreeSet<SeriesId> = input.topology.series().into_iter().collect();
    for m in input.models.iter().chain(step_models) {
        m.validate()?;
        all.extend(m.series());
    }
    let series: Vec<SeriesId> = all.into_iter().collect();

    let mut builder = FactorGraph::builder();
    let mut variables = BTreeMap::new();
    for s in &series {
        let v = builder.add_variable(format!("{s}@{step}"))?;
        variables.insert(*s, v);
    }
    let mut supported = vec![false; series.len()];

    for (s, priors) in &input.forecasts {
        let (Some(&var), Some(prior)) = (variables.get(s), priors.get(step)) else { continue };
        builder.add_factor(GaussianFactor::prior(var, prior.mean, prior.variance)?)?;
        supported[var.0] = true;
    }
    for (s, readings) in &input.readings {
        let Some(&var) = variables.get(s) else { continue };
        for r in readings.iter().filter(|r| r.step == step) {
            builder.add_factor(sensor_factor(var, r.value, r.noise_variance)?)?;
            supported[var.0] = true;
        }
    }

    let mut models: Vec<&RelationalModel> = input.models.iter().chain(step_models).collect();
    models.sort_by(|a, b| (a.child, &a.parents).cmp(&(b.child, &b.parents)));
    for m in &models {
        let child = variables[&m.child];
        let parents: Vec<VariableId> = m.parents.iter().map(|p| variables[p]).collect();
        builder.add_factor(linear_factor(child, &parents, &m.weights, m.bias, m.residual_variance)?)?;
        for v in std::iter::once(child).chain(parents) {
            supported[v.0] = true;
        }
    }

    if let Some(i) = supported.iter().position(|s| !s) {
        return Err(GridError::Unreachable(series[i]));
    }

    Ok(GridGraph { step, graph: builder.build(), series, variables, relational_factors: models.len() })
}
