//! The per-issue operational run: pull the latest forecasts, build one graph
//! per horizon step, infer, flag range violations, and size the flexibility
//! that would clear them. What-if runs add operator adjustments as strong
//! evidence on controllable series.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::factor_graph::{infer, sensor_factor, FactorGraphError, Posterior};
use crate::flex::{
    aggregate_requests, detect_violations, estimate_flexibility, ControllableSet, FlexConfig, FlexError,
    FlexRequest, FlexWindow, Violation,
};
use crate::grid::{
    build_graph_with, linearize_mlp, Gaussian, GraphBuildInput, GridError, GridGraph, GridTopology, OneHiddenLayer,
    OperationalRange, RelationalModel, StepReading,
};
use crate::registry::SeriesId;
use crate::store::{StoreError, Storage};
use crate::time::{step_time, Instant, HORIZON_STEPS};

/// Version tag carried by every wire-format document.
pub const SCHEMA: &str = "flexgrid/v1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DomsSettings {
    pub p_threshold: f64,
    pub deadband: f64,
    pub limit_rtol: f64,
    /// Prior sd as a fraction of the forecast mean when the producing model
    /// version carries no residual variance.
    pub default_relative_sd: f64,
    /// Lower bound on any forecast prior variance.
    pub min_prior_variance: f64,
    /// Variance of the evidence factors that pin what-if adjustments.
    pub evidence_variance: f64,
    /// Sensor noise sd as a fraction of the reading (at least 1 unit scale).
    pub reading_relative_sd: f64,
}

impl Default for DomsSettings {
    fn default() -> Self {
        let flex = FlexConfig::default();
        DomsSettings {
            p_threshold: flex.p_threshold,
            deadband: flex.deadband,
            limit_rtol: flex.limit_rtol,
            default_relative_sd: 0.1,
            min_prior_variance: 1e-6,
            evidence_variance: 1e-9,
            reading_relative_sd: 0.01,
        }
    }
}

impl DomsSettings {
    pub fn flex(&self) -> FlexConfig {
        FlexConfig { p_threshold: self.p_threshold, deadband: self.deadband, limit_rtol: self.limit_rtol }
    }
}

/// Static description of the supervised grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomsModel {
    pub topology: GridTopology,
    pub models: Vec<RelationalModel>,
    pub ranges: Vec<OperationalRange>,
    pub controllables: ControllableSet,
    /// Nonlinear relations, linearized at each step's forecast means.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub surrogates: Vec<SurrogateRelation>,
    #[serde(default)]
    pub settings: DomsSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateRelation {
    pub child: SeriesId,
    pub parents: Vec<SeriesId>,
    pub network: OneHiddenLayer,
    pub residual_variance: f64,
}

impl DomsModel {
    /// Surrogates linearized at the parents' prior means for `step`.
    fn step_models(&self, inputs: &DomsInputs, step: usize) -> Result<Vec<RelationalModel>, DomsError> {
        self.surrogates
            .iter()
            .map(|s| {
                let op = s
                    .parents
                    .iter()
                    .map(|p| inputs.build.forecasts.get(p).and_then(|f| f.get(step)).map(|g| g.mean))
                    .collect::<Option<Vec<f64>>>()
                    .ok_or_else(|| DomsError::MissingForecasts(s.parents.clone()))?;
                Ok(linearize_mlp(s.child, &s.parents, &s.network, &op, s.residual_variance)?)
            })
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum DomsError {
    #[error("no forecast covering the horizon for series {0:?}")]
    MissingForecasts(Vec<SeriesId>),
    #[error("series {0} is not controllable")]
    NotControllable(SeriesId),
    #[error("step {step} for series {series} is outside 0..{HORIZON_STEPS}")]
    StepOutOfRange { series: SeriesId, step: usize },
    #[error("non-finite delta for series {series} at step {step}")]
    InvalidDelta { series: SeriesId, step: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Flex(#[from] FlexError),
    #[error(transparent)]
    Graph(#[from] FactorGraphError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDelta {
    pub step: usize,
    pub delta: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WhatIfRequest {
    pub issue_time: Option<Instant>,
    #[serde(default)]
    pub adjustments: BTreeMap<SeriesId, Vec<StepDelta>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesEstimate {
    pub series: SeriesId,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub step: usize,
    pub timestamp: Instant,
    pub estimates: Vec<SeriesEstimate>,
}

impl StepResult {
    pub fn estimate(&self, series: SeriesId) -> Option<&SeriesEstimate> {
        self.estimates.iter().find(|e| e.series == series)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomsRunResult {
    pub schema: String,
    pub issue_time: Instant,
    pub adjusted: bool,
    pub steps: Vec<StepResult>,
    pub violations: Vec<Violation>,
    pub requests: Vec<FlexRequest>,
    pub flex_windows: Vec<FlexWindow>,
}

/// Forecast priors and readings for every horizon step of one issue.
#[derive(Clone, Debug)]
pub struct DomsInputs {
    pub issue_time: Instant,
    pub build: GraphBuildInput,
}

/// Latest forecasts issued at or before `issue_time` that cover all 96 step
/// timestamps, plus any readings stored at those timestamps.
pub fn gather_inputs(store: &dyn Storage, model: &DomsModel, issue_time: Instant) -> Result<DomsInputs, DomsError> {
    let settings = &model.settings;
    let mut forecasts = BTreeMap::new();
    let mut readings = BTreeMap::new();
    let mut missing = Vec::new();
    let first = step_time(issue_time, 0);
    let last = step_time(issue_time, HORIZON_STEPS - 1);

    for series in model.topology.series() {
        let stored = match store.latest_forecast(series, issue_time) {
            Ok(f) => f,
            Err(StoreError::ForecastNotFound { .. } | StoreError::UnknownSeries(_)) => {
                missing.push(series);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let version = store.model_version(stored.record.model_version);
        let priors: Option<Vec<Gaussian>> = (0..HORIZON_STEPS)
            .map(|k| {
                let (own_step, mean) = stored.record.value_at(step_time(issue_time, k))?;
                let variance = version
                    .as_ref()
                    .and_then(|v| v.residual_variance_per_step.get(own_step).copied())
                    .filter(|v| v.is_finite())
                    .unwrap_or_else(|| (settings.default_relative_sd * mean).powi(2));
                Some(Gaussian::new(mean, variance.max(settings.min_prior_variance)))
            })
            .collect();
        match priors {
            Some(p) => {
                forecasts.insert(series, p);
            }
            None => missing.push(series),
        }

        let observed: Vec<StepReading> = store
            .read_range(series, first, last + chrono::Duration::nanoseconds(1))?
            .into_iter()
            .filter_map(|p| {
                let k = (p.timestamp - first).num_minutes() / crate::time::STEP_MINUTES;
                let sd = settings.reading_relative_sd * p.value.abs().max(1.0);
                (step_time(issue_time, k as usize) == p.timestamp)
                    .then(|| StepReading { step: k as usize, value: p.value, noise_variance: sd * sd })
            })
            .collect();
        if !observed.is_empty() {
            readings.insert(series, observed);
        }
    }
    if !missing.is_empty() {
        return Err(DomsError::MissingForecasts(missing));
    }
    let build = GraphBuildInput {
        topology: model.topology.clone(),
        models: model.models.clone(),
        forecasts,
        readings,
    };
    Ok(DomsInputs { issue_time, build })
}

/// Builds the graph for one step without running anything on it.
pub fn step_graph(model: &DomsModel, inputs: &DomsInputs, step: usize) -> Result<GridGraph, DomsError> {
    Ok(build_graph_with(&inputs.build, step, &model.step_models(inputs, step)?)?)
}

/// Baseline run over all 96 steps.
pub fn run(model: &DomsModel, inputs: &DomsInputs, exec: Execution) -> Result<DomsRunResult, DomsError> {
    run_steps(model, inputs, &BTreeMap::new(), exec)
}

/// Re-runs with each adjustment pinned by strong evidence at the baseline
/// posterior mean plus its delta.
pub fn what_if(
    model: &DomsModel,
    inputs: &DomsInputs,
    adjustments: &BTreeMap<SeriesId, Vec<StepDelta>>,
    exec: Execution,
) -> Result<DomsRunResult, DomsError> {
    let mut per_step: BTreeMap<usize, Vec<(SeriesId, f64)>> = BTreeMap::new();
    for (series, deltas) in adjustments {
        if !model.controllables.contains(*series) {
            return Err(DomsError::NotControllable(*series));
        }
        for d in deltas {
            if d.step >= HORIZON_STEPS {
                return Err(DomsError::StepOutOfRange { series: *series, step: d.step });
            }
            if !d.delta.is_finite() {
                return Err(DomsError::InvalidDelta { series: *series, step: d.step });
            }
            per_step.entry(d.step).or_default().push((*series, d.delta));
        }
    }
    run_steps(model, inputs, &per_step, exec)
}

struct StepOutcome {
    result: StepResult,
    violations: Vec<Violation>,
    requests: Vec<FlexRequest>,
}

fn run_steps(
    model: &DomsModel,
    inputs: &DomsInputs,
    adjustments: &BTreeMap<usize, Vec<(SeriesId, f64)>>,
    exec: Execution,
) -> Result<DomsRunResult, DomsError> {
    for c in &model.controllables.0 {
        if !model.topology.series().contains(c) {
            return Err(FlexError::UnknownSeries(*c).into());
        }
    }
    let outcomes = exec.map_range(HORIZON_STEPS, |k| run_step(model, inputs, k, adjustments.get(&k)));
    let mut steps = Vec::with_capacity(HORIZON_STEPS);
    let mut violations = Vec::new();
    let mut requests = Vec::new();
    for outcome in outcomes {
        let outcome = outcome?;
        steps.push(outcome.result);
        violations.extend(outcome.violations);
        requests.extend(outcome.requests);
    }
    let mut ordered = requests.clone();
    ordered.sort_by_key(|r| (r.series, r.step));
    let flex_windows = aggregate_requests(&ordered);
    Ok(DomsRunResult {
        schema: SCHEMA.to_string(),
        issue_time: inputs.issue_time,
        adjusted: !adjustments.is_empty(),
        steps,
        violations,
        requests,
        flex_windows,
    })
}

fn run_step(
    model: &DomsModel,
    inputs: &DomsInputs,
    step: usize,
    adjustments: Option<&Vec<(SeriesId, f64)>>,
) -> Result<StepOutcome, DomsError> {
    let timestamp = step_time(inputs.issue_time, step);
    let mut grid = step_graph(model, inputs, step)?;
    let mut posterior = infer(&grid.graph)?;
    if let Some(adjustments) = adjustments {
        let mut evidence = Vec::with_capacity(adjustments.len());
        for (series, delta) in adjustments {
            let var = grid.variable(*series).ok_or(FlexError::UnknownSeries(*series))?;
            let at = posterior.mean(var).expect("baseline covers every variable") + delta;
            evidence.push(sensor_factor(var, at, model.settings.evidence_variance)?);
        }
        grid = grid.with_factors(evidence)?;
        posterior = infer(&grid.graph)?;
    }

    let flex = model.settings.flex();
    let violations = detect_violations(&grid, &posterior, &model.ranges, &flex, timestamp)?;
    let requests = if violations.is_empty() || model.controllables.0.is_empty() {
        Vec::new()
    } else {
        size_flexibility(&grid, &posterior, &violations, &model.controllables, &flex, timestamp)?
    };
    let estimates = grid
        .series
        .iter()
        .map(|&series| {
            let var = grid.variable(series).expect("own series");
            SeriesEstimate {
                series,
                mean: posterior.mean(var).expect("full posterior"),
                sd: posterior.sd(var).expect("full posterior"),
            }
        })
        .collect();
    Ok(StepOutcome { result: StepResult { step, timestamp, estimates }, violations, requests })
}

/// A violated series that is itself controllable is asked to move straight
/// to its limit; the remaining controllables are sized by joint
/// conditioning with every violated series at its limit.
fn size_flexibility(
    grid: &GridGraph,
    posterior: &Posterior,
    violations: &[Violation],
    controllables: &ControllableSet,
    flex: &FlexConfig,
    timestamp: Instant,
) -> Result<Vec<FlexRequest>, DomsError> {
    let violated: BTreeSet<SeriesId> = violations.iter().map(|v| v.series).collect();
    let others: ControllableSet = controllables.0.difference(&violated).copied().collect();
    let covering: Vec<_> = violations.iter().map(Violation::reference).collect();
    let mut requests: Vec<FlexRequest> = violations
        .iter()
        .filter(|v| controllables.contains(v.series))
        .map(|v| FlexRequest {
            series: v.series,
            step: v.step,
            timestamp,
            amount: v.limit - v.predicted_mean,
            covering: covering.clone(),
        })
        .filter(|r| r.amount.abs() > flex.deadband)
        .collect();
    if !others.0.is_empty() {
        requests.extend(estimate_flexibility(grid, posterior, violations, &others, flex, timestamp)?);
    }
    requests.sort_by(|a, b| b.amount.abs().total_cmp(&a.amount.abs()).then(a.series.cmp(&b.series)));
    Ok(requests)
}
