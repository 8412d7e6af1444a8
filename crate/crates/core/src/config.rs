//! Declarative installation file: registry contents, grid topology,
//! operational ranges, relational models, forecasting models, and run
//! settings. Series are referenced as `entity/signal`.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Duration, Timelike};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doms::{DomsModel, DomsSettings, SurrogateRelation};
use crate::flex::ControllableSet;
use crate::forecast::{Algorithm, ModelConfig, ModelId, Recurrence};
use crate::grid::{
    fit_linear_model, Activation, Feeder, GridError, GridNode, GridTopology, OneHiddenLayer, OperationalRange,
    RelationKind, RelationalModel, VoltagePoint, DEFAULT_MIN_RESIDUAL_VARIANCE,
};
use crate::registry::{EntityKind, Registry, RegistryError, SeriesId};
use crate::store::{StoreError, Storage};
use crate::time::Instant;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read configuration: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot write configuration: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("series reference `{0}` is not of the form entity/signal")]
    BadReference(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub name: String,
    #[serde(default)]
    pub unit: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntitySpec {
    pub name: String,
    pub kind: EntityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesSpec {
    pub entity: String,
    pub signal: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution_minutes: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeederSpec {
    pub entity: String,
    pub substation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoltageSpec {
    pub entity: String,
    pub attached: String,
}

/// Grid elements by entity name; their series are the load signal at
/// substations and feeders and the voltage signal at voltage points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub load_signal: String,
    pub voltage_signal: String,
    pub substations: Vec<String>,
    pub feeders: Vec<FeederSpec>,
    #[serde(default)]
    pub voltage_points: Vec<VoltageSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeSpec {
    pub series: String,
    pub low: f64,
    pub high: f64,
}

fn default_history_days() -> u32 {
    28
}

fn default_floor() -> f64 {
    DEFAULT_MIN_RESIDUAL_VARIANCE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RelationSource {
    /// Ridge fit on aligned history before the fitting instant.
    Fit {
        #[serde(default)]
        ridge: f64,
        #[serde(default = "default_history_days")]
        history_days: u32,
        #[serde(default = "default_floor")]
        min_residual_variance: f64,
    },
    Explicit {
        weights: Vec<f64>,
        #[serde(default)]
        bias: f64,
        residual_variance: f64,
    },
    /// One-hidden-layer network, linearized per horizon step.
    Network {
        /// Hidden × parents, row-major.
        input_weights: Vec<Vec<f64>>,
        input_bias: Vec<f64>,
        output_weights: Vec<f64>,
        #[serde(default)]
        output_bias: f64,
        activation: Activation,
        residual_variance: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub name: String,
    pub child: String,
    pub parents: Vec<String>,
    #[serde(flatten)]
    pub source: RelationSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub target: String,
    pub algorithm: Algorithm,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub features: Vec<String>,
    /// Defaults to daily at 02:00.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<Recurrence>,
    /// Defaults to hourly on the hour.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<Recurrence>,
    #[serde(default = "default_history_days")]
    pub training_days: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstallationFile {
    pub name: String,
    /// Clock position at which the installation goes live.
    pub start: Instant,
    pub signals: Vec<SignalSpec>,
    pub entities: Vec<EntitySpec>,
    pub series: Vec<SeriesSpec>,
    pub grid: GridSpec,
    #[serde(default)]
    pub ranges: Vec<RangeSpec>,
    #[serde(default)]
    pub controllables: Vec<String>,
    #[serde(default)]
    pub relations: Vec<RelationSpec>,
    #[serde(default)]
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub doms: DomsSettings,
    /// Free-form section for tools that generate or drive installations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<toml::Table>,
}

impl InstallationFile {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }
}

/// A relation whose series are resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedRelation {
    pub name: String,
    pub child: SeriesId,
    pub parents: Vec<SeriesId>,
    pub source: RelationSource,
}

/// A loaded installation: populated registry, grid model, and model
/// configurations. Fitted relations are filled in by
/// [`Installation::fit_relations`].
pub struct Installation {
    pub file: InstallationFile,
    pub registry: Registry,
    pub doms: DomsModel,
    pub relations: Vec<ResolvedRelation>,
    pub model_configs: Vec<ModelConfig>,
}

fn split_reference(reference: &str) -> Result<(&str, &str), ConfigError> {
    reference
        .rsplit_once('/')
        .filter(|(e, s)| !e.is_empty() && !s.is_empty())
        .ok_or_else(|| ConfigError::BadReference(reference.to_string()))
}

impl Installation {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_file(InstallationFile::load(path)?)
    }

    pub fn from_file(file: InstallationFile) -> Result<Self, ConfigError> {
        let registry = Registry::new();
        for s in &file.signals {
            registry.register_signal(&s.name, &s.unit);
        }
        for e in &file.entities {
            let parent = match &e.parent {
                Some(p) => Some(registry.entity_by_name(p).ok_or_else(|| RegistryError::UnknownEntity(p.clone()))?),
                None => None,
            };
            registry.register_entity(&e.name, e.kind, parent)?;
        }
        for s in &file.series {
            let signal =
                registry.signal_by_name(&s.signal).ok_or_else(|| RegistryError::UnknownSignal(s.signal.clone()))?;
            let entity =
                registry.entity_by_name(&s.entity).ok_or_else(|| RegistryError::UnknownEntity(s.entity.clone()))?;
            registry.declare_timeseries(signal, entity, s.resolution_minutes)?;
        }
        let resolve = |reference: &str| -> Result<SeriesId, ConfigError> {
            let (entity, signal) = split_reference(reference)?;
            Ok(registry.resolve(entity, signal)?)
        };

        let g = &file.grid;
        let node = |entity: &str, signal: &str| -> Result<GridNode, ConfigError> {
            Ok(GridNode { entity: entity.to_string(), series: registry.resolve(entity, signal)? })
        };
        let topology = GridTopology {
            substations: g.substations.iter().map(|e| node(e, &g.load_signal)).collect::<Result<_, _>>()?,
            feeders: g
                .feeders
                .iter()
                .map(|f| Ok(Feeder { node: node(&f.entity, &g.load_signal)?, substation: f.substation.clone() }))
                .collect::<Result<_, ConfigError>>()?,
            voltage_points: g
                .voltage_points
                .iter()
                .map(|v| Ok(VoltagePoint { node: node(&v.entity, &g.voltage_signal)?, attached: v.attached.clone() }))
                .collect::<Result<_, ConfigError>>()?,
        };
        topology.validate()?;

        let ranges = file
            .ranges
            .iter()
            .map(|r| Ok(OperationalRange::new(resolve(&r.series)?, r.low, r.high)?))
            .collect::<Result<Vec<_>, ConfigError>>()?;
        let controllables: ControllableSet =
            file.controllables.iter().map(|c| resolve(c)).collect::<Result<_, _>>()?;

        let mut relations = Vec::new();
        let mut models = Vec::new();
        let mut surrogates = Vec::new();
        for r in &file.relations {
            let child = resolve(&r.child)?;
            let parents = r.parents.iter().map(|p| resolve(p)).collect::<Result<Vec<_>, _>>()?;
            match &r.source {
                RelationSource::Explicit { weights, bias, residual_variance } => {
                    let m = RelationalModel {
                        child,
                        parents: parents.clone(),
                        kind: RelationKind::Linear,
                        weights: weights.clone(),
                        bias: *bias,
                        residual_variance: *residual_variance,
                        operating_point: None,
                    };
                    m.validate()?;
                    models.push(m);
                }
                RelationSource::Network {
                    input_weights,
                    input_bias,
                    output_weights,
                    output_bias,
                    activation,
                    residual_variance,
                } => {
                    let cols = parents.len();
                    if input_weights.iter().any(|row| row.len() != cols) {
                        return Err(ConfigError::Invalid(format!(
                            "relation {}: every input weight row needs {cols} entries",
                            r.name
                        )));
                    }
                    let rows = input_weights.len();
                    let network = OneHiddenLayer {
                        input_weights: DMatrix::from_fn(rows, cols, |i, j| input_weights[i][j]),
                        input_bias: DVector::from_column_slice(input_bias),
                        output_weights: DVector::from_column_slice(output_weights),
                        output_bias: *output_bias,
                        activation: *activation,
                    };
                    surrogates.push(SurrogateRelation {
                        child,
                        parents: parents.clone(),
                        network,
                        residual_variance: *residual_variance,
                    });
                }
                RelationSource::Fit { .. } => {}
            }
            relations.push(ResolvedRelation { name: r.name.clone(), child, parents, source: r.source.clone() });
        }

        let day_start = file.start.with_hour(0).and_then(|t| t.with_minute(0)).unwrap_or(file.start);
        let default_train = Recurrence::daily(day_start + Duration::hours(2));
        let default_score = Recurrence::hourly(day_start);
        let model_configs = file
            .models
            .iter()
            .enumerate()
            .map(|(i, m)| {
                Ok(ModelConfig {
                    id: ModelId(i as u32),
                    name: m.name.clone(),
                    target: resolve(&m.target)?,
                    algorithm: m.algorithm.clone(),
                    feature_series: m.features.iter().map(|f| resolve(f)).collect::<Result<_, _>>()?,
                    train_schedule: m.train.unwrap_or(default_train),
                    score_schedule: m.score.unwrap_or(default_score),
                    training_days: m.training_days,
                })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;

        let doms = DomsModel { topology, models, ranges, controllables, surrogates, settings: file.doms };
        Ok(Installation { file, registry, doms, relations, model_configs })
    }

    /// Declares every registry series in `store`.
    pub fn declare_series(&self, store: &dyn Storage) -> Result<(), ConfigError> {
        for ts in self.registry.all_series() {
            store.declare_series(ts.id, ts.resolution_minutes)?;
        }
        Ok(())
    }

    /// Fits every `fit`-mode relation on history in
    /// `[as_of − history_days, as_of)` at timestamps where the child and all
    /// parents are observed, records each fit in the store, and installs the
    /// results in the grid model (replacing earlier fits).
    pub fn fit_relations(&mut self, store: &dyn Storage, as_of: Instant) -> Result<Vec<RelationalModel>, ConfigError> {
        let mut fitted = Vec::new();
        for r in &self.relations {
            let RelationSource::Fit { ridge, history_days, min_residual_variance } = &r.source else { continue };
            let from = as_of - Duration::days(i64::from(*history_days));
            let mut rows: BTreeMap<Instant, Vec<Option<f64>>> = BTreeMap::new();
            let width = r.parents.len() + 1;
            for (col, series) in std::iter::once(r.child).chain(r.parents.iter().copied()).enumerate() {
                for p in store.read_range(series, from, as_of)? {
                    rows.entry(p.timestamp).or_insert_with(|| vec![None; width])[col] = Some(p.value);
                }
            }
            let complete: Vec<Vec<f64>> =
                rows.into_values().filter_map(|row| row.into_iter().collect::<Option<Vec<f64>>>()).collect();
            let child: Vec<f64> = complete.iter().map(|row| row[0]).collect();
            let parents = DMatrix::from_fn(complete.len(), width - 1, |i, j| complete[i][j + 1]);
            let model = fit_linear_model(r.child, &r.parents, &child, &parents, *ridge, *min_residual_variance)
                .map_err(|e| ConfigError::Invalid(format!("relation {}: {e}", r.name)))?;
            store.put_relational_model(&r.name, as_of, model.clone())?;
            fitted.push(model);
        }
        let fitted_children: Vec<(SeriesId, Vec<SeriesId>)> =
            fitted.iter().map(|m| (m.child, m.parents.clone())).collect();
        self.doms.models.retain(|m| !fitted_children.contains(&(m.child, m.parents.clone())));
        self.doms.models.extend(fitted.iter().cloned());
        Ok(fitted)
    }

    /// Relational models counted per horizon-step graph, including
    /// surrogates and relations still awaiting a fit.
    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn series_ref(&self, reference: &str) -> Result<SeriesId, ConfigError> {
        let (entity, signal) = split_reference(reference)?;
        Ok(self.registry.resolve(entity, signal)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{DataPoint, EmbeddedStore};
    use crate::time::{step, ymd_hm};

    const SAMPLE: &str = r#"
name = "sample"
start = "2024-05-06T00:00:00Z"

signals = [{ name = "active_power", unit = "kW" }, { name = "voltage", unit = "V" }]

entities = [
  { name = "SS-1", kind = "substation" },
  { name = "F-1", kind = "feeder", parent = "SS-1" },
  { name = "F-2", kind = "feeder", parent = "SS-1" },
  { name = "V-1", kind = "voltage_point", parent = "F-1" },
]

series = [
  { entity = "SS-1", signal = "active_power" },
  { entity = "F-1", signal = "active_power" },
  { entity = "F-2", signal = "active_power" },
  { entity = "V-1", signal = "voltage" },
]

controllables = ["F-1/active_power", "F-2/active_power"]

[grid]
load_signal = "active_power"
voltage_signal = "voltage"
substations = ["SS-1"]
feeders = [{ entity = "F-1", substation = "SS-1" }, { entity = "F-2", substation = "SS-1" }]
voltage_points = [{ entity = "V-1", attached = "F-1" }]

[[ranges]]
series = "SS-1/active_power"
low = 0.0
high = 150.0

[[relations]]
name = "SS-1 sum"
child = "SS-1/active_power"
parents = ["F-1/active_power", "F-2/active_power"]
mode = "fit"

[[relations]]
name = "voltage drop"
child = "V-1/voltage"
parents = ["F-1/active_power"]
mode = "explicit"
weights = [-0.05]
bias = 230.0
residual_variance = 0.5

[[models]]
name = "SS-1 load"
target = "SS-1/active_power"
algorithm = { kind = "seasonal_naive" }

[[models]]
name = "V-1 voltage"
target = "V-1/voltage"
algorithm = { kind = "ridge_autoregressive", lags = [1, 96] }
features = ["F-1/active_power"]
score = { anchor = "2024-05-06T00:30:00Z", interval_minutes = 60 }

[doms]
p_threshold = 0.6
"#;

    #[test]
    fn loads_sample() {
        let inst = Installation::from_file(InstallationFile::from_toml(SAMPLE).unwrap()).unwrap();
        assert_eq!(inst.registry.counts(), (2, 4, 4));
        assert_eq!(inst.doms.topology.counts(), (1, 2, 1));
        assert_eq!(inst.doms.controllables.0.len(), 2);
        assert_eq!(inst.doms.models.len(), 1, "explicit relation available before fitting");
        assert_eq!(inst.relation_count(), 2);
        assert_eq!(inst.doms.settings.p_threshold, 0.6);
        assert_eq!(inst.doms.settings.deadband, 0.1);
        let m = &inst.model_configs[1];
        assert_eq!(m.algorithm, Algorithm::RidgeAutoregressive { lags: vec![1, 96], ridge: 1.0, calendar: true });
        assert_eq!(m.feature_series, vec![inst.series_ref("F-1/active_power").unwrap()]);
        assert_eq!(m.score_schedule.anchor, ymd_hm(2024, 5, 6, 0, 30));
        assert_eq!(inst.model_configs[0].train_schedule, Recurrence::daily(ymd_hm(2024, 5, 6, 2, 0)));
    }

    #[test]
    fn round_trips_through_toml() {
        let file = InstallationFile::from_toml(SAMPLE).unwrap();
        let again = InstallationFile::from_toml(&file.to_toml().unwrap()).unwrap();
        assert_eq!(file, again);
    }

    #[test]
    fn reports_bad_references() {
        let text = SAMPLE.replace("\"F-2/active_power\"]\n\n[grid]", "\"F-9/active_power\"]\n\n[grid]");
        let err = Installation::from_file(InstallationFile::from_toml(&text).unwrap()).err().unwrap();
        assert!(matches!(err, ConfigError::Registry(RegistryError::UnknownEntity(ref e)) if e == "F-9"), "{err}");
        let text = SAMPLE.replace("controllables = [\"F-1/active_power\",", "controllables = [\"F-1\",");
        let err = Installation::from_file(InstallationFile::from_toml(&text).unwrap()).err().unwrap();
        assert!(matches!(err, ConfigError::BadReference(_)));
    }

    #[test]
    fn fits_and_records_relations() {
        let mut inst = Installation::from_file(InstallationFile::from_toml(SAMPLE).unwrap()).unwrap();
        let store = EmbeddedStore::in_memory();
        inst.declare_series(&store).unwrap();
        let [ss, f1, f2] = ["SS-1", "F-1", "F-2"].map(|e| inst.series_ref(&format!("{e}/active_power")).unwrap());
        let start = ymd_hm(2024, 5, 1, 0, 0);
        let n = 400;
        let at = |i: usize| start + step() * i as i32;
        let a: Vec<DataPoint> = (0..n).map(|i| DataPoint::new(at(i), 40.0 + (i % 17) as f64)).collect();
        let b: Vec<DataPoint> = (0..n).map(|i| DataPoint::new(at(i), 30.0 + (i % 5) as f64)).collect();
        // One substation reading is missing; it must simply be skipped.
        let s: Vec<DataPoint> =
            (0..n).filter(|i| *i != 7).map(|i| DataPoint::new(at(i), a[i].value + b[i].value + 2.0)).collect();
        store.ingest(f1, &a).unwrap();
        store.ingest(f2, &b).unwrap();
        store.ingest(ss, &s).unwrap();
        let fitted = inst.fit_relations(&store, start + step() * n as i32).unwrap();
        assert_eq!(fitted.len(), 1);
        let m = &fitted[0];
        assert!((m.weights[0] - 1.0).abs() < 1e-9 && (m.weights[1] - 1.0).abs() < 1e-9);
        assert!((m.bias - 2.0).abs() < 1e-8);
        assert_eq!(m.residual_variance, DEFAULT_MIN_RESIDUAL_VARIANCE);
        assert_eq!(inst.doms.models.len(), 2);
        let recorded = store.relational_models();
        assert_eq!(recorded.len(), 1);
        assert_eq!(recorded[0].name, "SS-1 sum");
        // Refitting replaces rather than duplicates.
        inst.fit_relations(&store, start + step() * n as i32).unwrap();
        assert_eq!(inst.doms.models.len(), 2);
    }
}
