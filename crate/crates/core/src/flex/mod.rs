//! Operational-range violation detection and flexibility estimation.
//!
//! Flexibility is read off the joint Gaussian: pin every violated variable at
//! its limit, and the shift this induces in each controllable series'
//! posterior mean is the amount requested at that location.

mod aggregate;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::factor_graph::{condition, Evidence, FactorGraphError, Posterior};
use crate::grid::{GridGraph, OperationalRange};
use crate::registry::SeriesId;
use crate::time::{format_instant, Instant};

pub use aggregate::{aggregate_requests, FlexWindow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlexError {
    #[error("series {0} is not a variable of the grid graph")]
    UnknownSeries(SeriesId),
    #[error("p_threshold must lie strictly between 0 and 1, got {0}")]
    InvalidThreshold(f64),
    #[error("no controllable series given")]
    NoControllables,
    #[error("violated series {0} is itself controllable")]
    ViolatedIsControllable(SeriesId),
    #[error("violation at step {violation} passed to the graph of step {graph}")]
    StepMismatch { violation: usize, graph: usize },
    #[error(transparent)]
    Graph(#[from] FactorGraphError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    High,
    Low,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub series: SeriesId,
    pub step: usize,
    pub timestamp: Instant,
    pub bound: Bound,
    pub limit: f64,
    pub predicted_mean: f64,
    pub predicted_sd: f64,
    pub exceedance_probability: f64,
}

impl Violation {
    pub fn reference(&self) -> ViolationRef {
        ViolationRef { series: self.series, step: self.step, bound: self.bound }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ViolationRef {
    pub series: SeriesId,
    pub step: usize,
    pub bound: Bound,
}

/// Buy-side request: change `series` by `amount` (negative = consume less)
/// at `step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlexRequest {
    pub series: SeriesId,
    pub step: usize,
    pub timestamp: Instant,
    pub amount: f64,
    pub covering: Vec<ViolationRef>,
}

/// Series whose demand or generation can be adjusted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControllableSet(pub BTreeSet<SeriesId>);

impl ControllableSet {
    pub fn contains(&self, s: SeriesId) -> bool {
        self.0.contains(&s)
    }
}

impl FromIterator<SeriesId> for ControllableSet {
    fn from_iter<I: IntoIterator<Item = SeriesId>>(iter: I) -> Self {
        ControllableSet(iter.into_iter().collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlexConfig {
    /// A violation is flagged when its exceedance probability is strictly
    /// above this.
    pub p_threshold: f64,
    /// Requests with |amount| at or below this are dropped (series units).
    pub deadband: f64,
    /// Means within this relative distance of a limit count as on it.
    pub limit_rtol: f64,
}

impl Default for FlexConfig {
    fn default() -> Self {
        FlexConfig { p_threshold: 0.5, deadband: 0.1, limit_rtol: 1e-6 }
    }
}

fn standard_normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// Probabilities `(P[x > high], P[x < low])` for `x ~ N(mean, sd²)`.
/// A zero `sd` degrades to a deterministic comparison.
pub fn exceedance(mean: f64, sd: f64, range: &OperationalRange, limit_rtol: f64) -> (f64, f64) {
    let snap = |limit: f64| {
        if (mean - limit).abs() <= limit_rtol * limit.abs().max(1.0) {
            limit
        } else {
            mean
        }
    };
    let (mh, ml) = (snap(range.high), snap(range.low));
    if sd <= 0.0 {
        return (f64::from(u8::from(mh > range.high)), f64::from(u8::from(ml < range.low)));
    }
    (standard_normal_cdf((mh - range.high) / sd), standard_normal_cdf((range.low - ml) / sd))
}

/// Violations of `ranges` under `posterior` at the graph's step.
pub fn detect_violations(
    grid: &GridGraph,
    posterior: &Posterior,
    ranges: &[OperationalRange],
    config: &FlexConfig,
    timestamp: Instant,
) -> Result<Vec<Violation>, FlexError> {
    if !(config.p_threshold > 0.0 && config.p_threshold < 1.0) {
        return Err(FlexError::InvalidThreshold(config.p_threshold));
    }
    let mut out = Vec::new();
    for range in ranges {
        let var = grid.variable(range.series).ok_or(FlexError::UnknownSeries(range.series))?;
        let (Some(mean), Some(var_)) = (posterior.mean(var), posterior.variance(var)) else {
            return Err(FlexError::UnknownSeries(range.series));
        };
        let sd = var_.max(0.0).sqrt();
        let (p_high, p_low) = exceedance(mean, sd, range, config.limit_rtol);
        let (bound, limit, p) =
            if p_high >= p_low { (Bound::High, range.high, p_high) } else { (Bound::Low, range.low, p_low) };
        if p > config.p_threshold {
            out.push(Violation {
                series: range.series,
                step: grid.step,
                timestamp,
                bound,
                limit,
                predicted_mean: mean,
                predicted_sd: sd,
                exceedance_probability: p,
            });
        }
    }
    Ok(out)
}

/// Flexibility needed to bring every violated variable of this step onto its
/// limit. All `violations` are conditioned jointly.
pub fn estimate_flexibility(
    grid: &GridGraph,
    baseline: &Posterior,
    violations: &[Violation],
    controllables: &ControllableSet,
    config: &FlexConfig,
    timestamp: Instant,
) -> Result<Vec<FlexRequest>, FlexError> {
    if controllables.0.is_empty() {
        return Err(FlexError::NoControllables);
    }
    for c in &controllables.0 {
        grid.variable(*c).ok_or(FlexError::UnknownSeries(*c))?;
    }
    if violations.is_empty() {
        return Ok(Vec::new());
    }

    let mut targets: BTreeMap<SeriesId, f64> = BTreeMap::new();
    for v in violations {
        if v.step != grid.step {
            return Err(FlexError::StepMismatch { violation: v.step, graph: grid.step });
        }
        if controllables.contains(v.series) {
            return Err(FlexError::ViolatedIsControllable(v.series));
        }
        grid.variable(v.series).ok_or(FlexError::UnknownSeries(v.series))?;
        targets.insert(v.series, v.limit);
    }
    let mut evidence = Evidence::new();
    for (s, limit) in &targets {
        evidence.insert(grid.variable(*s).expect("checked above"), *limit)?;
    }
    let conditioned = condition(&grid.graph, &evidence)?;

    let covering: Vec<ViolationRef> = violations.iter().map(Violation::reference).collect();
    let mut requests: Vec<FlexRequest> = controllables
        .0
        .iter()
        .filter_map(|c| {
            let var = grid.variable(*c)?;
            let amount = conditioned.mean(var)? - baseline.mean(var)?;
            (amount.is_finite() && amount.abs() > config.deadband).then(|| FlexRequest {
                series: *c,
                step: grid.step,
                timestamp,
                amount,
                covering: covering.clone(),
            })
        })
        .collect();
    requests.sort_by(|a, b| b.amount.abs().total_cmp(&a.amount.abs()).then(a.series.cmp(&b.series)));
    Ok(requests)
}

/// Audit export, one row per violation.
pub fn write_violations_csv<W: Write>(writer: W, violations: &[Violation]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "series_id", "step", "timestamp", "bound", "limit", "predicted_mean", "predicted_sd",
        "exceedance_probability",
    ])?;
    for v in violations {
        w.write_record([
            v.series.to_string(),
            v.step.to_string(),
            format_instant(v.timestamp),
            match v.bound {
                Bound::High => "high".into(),
                Bound::Low => "low".into(),
            },
            v.limit.to_string(),
            v.predicted_mean.to_string(),
            v.predicted_sd.to_string(),
            v.exceedance_probability.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Audit export, one row per (series, step) request.
pub fn write_requests_csv<W: Write>(writer: W, requests: &[FlexRequest]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["series_id", "step", "timestamp", "amount", "covering"])?;
    for r in requests {
        let covering: Vec<String> = r.covering.iter().map(|c| c.series.to_string()).collect();
        w.write_record([
            r.series.to_string(),
            r.step.to_string(),
            format_instant(r.timestamp),
            r.amount.to_string(),
            covering.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
