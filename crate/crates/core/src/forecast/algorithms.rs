use chrono::{Datelike, Duration, Timelike};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::history::{regular_window, MAX_FILL_STEPS};
use super::{Algorithm, ForecastError, ModelConfig, ModelParameters, ModelVersion, ModelVersionId};
use crate::grid::{ridge_solve, DEFAULT_MIN_RESIDUAL_VARIANCE};
use crate::registry::SeriesId;
use crate::store::{DataPoint, ForecastRecord, Storage};
use crate::time::{step, step_time, Instant, HORIZON_STEPS};

/// Hour-of-day (hours 1–23) and day-of-week (Tuesday–Sunday) indicators;
/// midnight and Monday are the reference categories absorbed by the
/// intercept.
pub const CALENDAR_FEATURES: usize = 23 + 6;

const SEASON: usize = HORIZON_STEPS;
const HOLDOUT_DAYS: usize = 7;
const MIN_DAYS_FOR_HOLDOUT: usize = 14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeParameters {
    pub lags: Vec<usize>,
    pub calendar: bool,
    pub features: Vec<SeriesId>,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl RidgeParameters {
    fn max_lag(&self) -> usize {
        self.lags.iter().copied().max().unwrap_or(1)
    }

    fn predict(&self, features: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(features).map(|(w, x)| w * x).sum::<f64>()
    }
}

pub fn calendar_features(t: Instant) -> [f64; CALENDAR_FEATURES] {
    let mut out = [0.0; CALENDAR_FEATURES];
    let hour = t.hour() as usize;
    if hour > 0 {
        out[hour - 1] = 1.0;
    }
    let dow = t.weekday().num_days_from_monday() as usize;
    if dow > 0 {
        out[23 + dow - 1] = 1.0;
    }
    out
}

/// Regressor row for predicting the value at `t`: own lags, then calendar
/// indicators, then same-time-yesterday exogenous values.
pub fn ridge_features(lag_values: &[f64], calendar: bool, t: Instant, exogenous: &[f64]) -> Vec<f64> {
    let mut row = Vec::with_capacity(lag_values.len() + CALENDAR_FEATURES + exogenous.len());
    row.extend_from_slice(lag_values);
    if calendar {
        row.extend_from_slice(&calendar_features(t));
    }
    row.extend_from_slice(exogenous);
    row
}

fn is_hourly(t: Instant) -> bool {
    t.minute() == 0 && t.second() == 0 && t.nanosecond() == 0
}

/// Regularized training history strictly before `as_of`.
struct TrainingData {
    start: Instant,
    end: Instant,
    values: Vec<f64>,
    exogenous: Vec<Vec<f64>>,
}

impl TrainingData {
    fn time(&self, idx: usize) -> Instant {
        self.start + step() * idx as i32
    }
}

fn load_training(
    config: &ModelConfig,
    store: &dyn Storage,
    as_of: Instant,
) -> Result<Option<TrainingData>, ForecastError> {
    let window_start = as_of - Duration::days(i64::from(config.training_days));
    let points = store.read_range(config.target, window_start, as_of)?;
    let (Some(first), Some(last)) = (points.first(), points.last()) else {
        return Ok(None);
    };
    let (start, end) = (first.timestamp, last.timestamp);
    let values = regular_window(store, config.target, start, end)?;
    let exogenous = config
        .feature_series
        .iter()
        .map(|s| regular_window(store, *s, start, end))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(TrainingData { start, end, values, exogenous }))
}

fn lag_diffs(values: &[f64], lag: usize) -> Vec<f64> {
    values.windows(lag + 1).map(|w| w[lag] - w[0]).collect()
}

fn mean_square(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64
    }
}

fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Hourly issue indices inside the holdout with a full 96-step future.
fn holdout_issues(data: &TrainingData, split: usize, min_history: usize) -> Vec<usize> {
    let n = data.values.len();
    (split.max(min_history)..n.saturating_sub(SEASON))
        .filter(|&i| is_hourly(data.time(i)))
        .collect()
}

/// Per-step mean squared error of `forecaster` over holdout issues.
fn holdout_variance(
    data: &TrainingData,
    issues: &[usize],
    forecaster: impl Fn(usize) -> Vec<f64>,
) -> Vec<f64> {
    let mut sums = vec![0.0; HORIZON_STEPS];
    for &i in issues {
        let f = forecaster(i);
        for (h, sum) in sums.iter_mut().enumerate() {
            *sum += (data.values[i + 1 + h] - f[h]).powi(2);
        }
    }
    let count = issues.len().max(1) as f64;
    sums.into_iter().map(|s| s / count).collect()
}

fn fit_ridge(
    data: &TrainingData,
    upto: usize,
    lags: &[usize],
    ridge: f64,
    calendar: bool,
    features: &[SeriesId],
) -> Result<(RidgeParameters, f64), ForecastError> {
    let max_lag = lags.iter().copied().max().unwrap_or(1).max(if features.is_empty() { 0 } else { SEASON });
    let rows: Vec<Vec<f64>> = (max_lag..upto)
        .map(|i| {
            let lag_values: Vec<f64> = lags.iter().map(|k| data.values[i - k]).collect();
            let exo: Vec<f64> = data.exogenous.iter().map(|x| x[i - SEASON]).collect();
            ridge_features(&lag_values, calendar, data.time(i), &exo)
        })
        .collect();
    let p = lags.len() + if calendar { CALENDAR_FEATURES } else { 0 } + features.len();
    let design = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    let target: Vec<f64> = data.values[max_lag..upto].to_vec();
    let fit = ridge_solve(&design, &target, ridge, DEFAULT_MIN_RESIDUAL_VARIANCE)?;
    Ok((
        RidgeParameters {
            lags: lags.to_vec(),
            calendar,
            features: features.to_vec(),
            weights: fit.weights,
            bias: fit.bias,
        },
        fit.residual_variance,
    ))
}

/// Recursive 96-step roll-forward. `history` ends at the issue instant;
/// `yesterday[j][h]` is feature `j` 24 h before step `h`.
fn roll_forward(params: &RidgeParameters, history: &[f64], issue: Instant, yesterday: &[Vec<f64>]) -> Vec<f64> {
    let mut buffer = history.to_vec();
    let base = history.len() - 1;
    for h in 1..=HORIZON_STEPS {
        let idx = base + h;
        let lag_values: Vec<f64> = params.lags.iter().map(|k| buffer[idx - k]).collect();
        let exo: Vec<f64> = yesterday.iter().map(|x| x[h - 1]).collect();
        let t = issue + step() * h as i32;
        buffer.push(params.predict(&ridge_features(&lag_values, params.calendar, t, &exo)));
    }
    buffer.split_off(base + 1)
}

/// Fits `config` on history strictly before `as_of`.
pub fn train(
    config: &ModelConfig,
    store: &dyn Storage,
    as_of: Instant,
    version_id: ModelVersionId,
) -> Result<ModelVersion, ForecastError> {
    let algorithm = config.algorithm.name();
    let data = load_training(config, store, as_of)?;
    let required = match &config.algorithm {
        Algorithm::Persistence => 1,
        Algorithm::SeasonalNaive => SEASON,
        Algorithm::RidgeAutoregressive { lags, calendar, .. } => {
            let max_lag = lags.iter().copied().max().unwrap_or(1).max(if config.feature_series.is_empty() {
                0
            } else {
                SEASON
            });
            let params = lags.len() + if *calendar { CALENDAR_FEATURES } else { 0 } + config.feature_series.len() + 1;
            max_lag + 2 * params
        }
    };
    let got = data.as_ref().map_or(0, |d| d.values.len());
    let Some(data) = data.filter(|_| got >= required) else {
        return Err(ForecastError::InsufficientHistory { algorithm, required, got });
    };
    let n = data.values.len();
    let use_holdout = n >= MIN_DAYS_FOR_HOLDOUT * SEASON;
    let split = if use_holdout { n - HOLDOUT_DAYS * SEASON } else { n };

    let (parameters, residual_variance_per_step) = match &config.algorithm {
        Algorithm::Persistence => {
            let var = sample_variance(&lag_diffs(&data.values, SEASON));
            (ModelParameters::None, vec![var; HORIZON_STEPS])
        }
        Algorithm::SeasonalNaive => {
            let variance = if use_holdout {
                let issues = holdout_issues(&data, split, SEASON - 1);
                holdout_variance(&data, &issues, |i| data.values[i + 1 - SEASON..=i].to_vec())
            } else {
                vec![mean_square(&lag_diffs(&data.values, SEASON)); HORIZON_STEPS]
            };
            (ModelParameters::None, variance)
        }
        Algorithm::RidgeAutoregressive { lags, ridge, calendar } => {
            if lags.is_empty() || lags.contains(&0) {
                return Err(ForecastError::ParameterMismatch(algorithm));
            }
            let variance = if use_holdout {
                let (early, _) = fit_ridge(&data, split, lags, *ridge, *calendar, &config.feature_series)?;
                let issues = holdout_issues(&data, split, early.max_lag().max(SEASON));
                holdout_variance(&data, &issues, |i| {
                    let yesterday: Vec<Vec<f64>> =
                        data.exogenous.iter().map(|x| x[i + 1 - SEASON..=i].to_vec()).collect();
                    roll_forward(&early, &data.values[..=i], data.time(i), &yesterday)
                })
            } else {
                let (_, in_sample) = fit_ridge(&data, n, lags, *ridge, *calendar, &config.feature_series)?;
                vec![in_sample; HORIZON_STEPS]
            };
            let (params, _) = fit_ridge(&data, n, lags, *ridge, *calendar, &config.feature_series)?;
            (ModelParameters::Ridge(params), variance)
        }
    };

    Ok(ModelVersion {
        id: version_id,
        config: config.id,
        trained_at: as_of,
        parameters,
        residual_variance_per_step,
        training_window: (data.start, data.end),
    })
}

/// 96-step forecast issued at `issue_time`, from stored history at or
/// before it. A pure function of that history.
pub fn score(
    config: &ModelConfig,
    version: &ModelVersion,
    store: &dyn Storage,
    issue_time: Instant,
) -> Result<ForecastRecord, ForecastError> {
    if !is_hourly(issue_time) {
        return Err(ForecastError::NotOnHourlyGrid(issue_time));
    }
    let algorithm = config.algorithm.name();
    let values: Vec<f64> = match (&config.algorithm, &version.parameters) {
        (Algorithm::Persistence, _) => {
            let last = store
                .last_at_or_before(config.target, issue_time)?
                .ok_or(ForecastError::InsufficientHistory { algorithm, required: 1, got: 0 })?;
            let missing = ((issue_time - last.timestamp).num_minutes() / 15) as usize;
            if missing > MAX_FILL_STEPS {
                return Err(ForecastError::GapTooLarge { at: issue_time, steps: missing, max: MAX_FILL_STEPS });
            }
            vec![last.value; HORIZON_STEPS]
        }
        (Algorithm::SeasonalNaive, _) => {
            regular_window(store, config.target, issue_time - step() * (SEASON as i32 - 1), issue_time)?
        }
        (Algorithm::RidgeAutoregressive { .. }, ModelParameters::Ridge(params)) => {
            let max_lag = params.max_lag();
            let history =
                regular_window(store, config.target, issue_time - step() * (max_lag as i32 - 1), issue_time)?;
            let yesterday = params
                .features
                .iter()
                .map(|s| regular_window(store, *s, issue_time - step() * (SEASON as i32 - 1), issue_time))
                .collect::<Result<Vec<_>, _>>()?;
            roll_forward(params, &history, issue_time, &yesterday)
        }
        _ => return Err(ForecastError::ParameterMismatch(algorithm)),
    };
    Ok(ForecastRecord {
        series: config.target,
        model_version: version.id,
        issue_time,
        points: values.into_iter().enumerate().map(|(k, v)| DataPoint::new(step_time(issue_time, k), v)).collect(),
    })
}
