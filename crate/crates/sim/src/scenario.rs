//! On-disk installations: `installation.toml` plus `history.csv`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::Duration;
use thiserror::Error;

use flexgrid_core::config::{
    ConfigError, EntitySpec, FeederSpec, GridSpec, InstallationFile, ModelSpec, RangeSpec, RelationSource,
    RelationSpec, SeriesSpec, SignalSpec, VoltageSpec,
};
use flexgrid_core::doms::DomsSettings;
use flexgrid_core::forecast::Algorithm;
use flexgrid_core::grid::DEFAULT_MIN_RESIDUAL_VARIANCE;
use flexgrid_core::time::{format_instant, step};

use crate::generator::Generator;
use crate::layout::{Layout, Profile, LOAD_SIGNAL, VOLTAGE_SIGNAL};
use crate::spec::{ScenarioSpec, SpecError};

pub const INSTALLATION_FILE: &str = "installation.toml";
pub const HISTORY_FILE: &str = "history.csv";

/// Forecast training windows never reach further back than this.
const MAX_TRAINING_DAYS: u32 = 28;
/// Substation limits sit this far above the expected peak of the first two
/// days after go-live.
const SUBSTATION_HEADROOM: f64 = 1.1;
const FEEDER_HEADROOM: f64 = 1.5;
const VOLTAGE_BAND: (f64, f64) = (207.0, 253.0);

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("history: {0}")]
    Csv(#[from] csv::Error),
    #[error("installation has no [simulation] section")]
    NotSimulated,
    #[error("bad [simulation] section: {0}")]
    BadSimulation(String),
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io { path: path.to_path_buf(), source }
}

/// A validated spec with its expansion and value generator.
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub generator: Generator,
}

impl Scenario {
    pub fn new(spec: ScenarioSpec) -> Result<Scenario, ScenarioError> {
        spec.validate()?;
        let generator = Generator::new(&spec, Layout::new(&spec));
        Ok(Scenario { spec, generator })
    }

    /// Recovers the scenario recorded in an installation file.
    pub fn from_installation(file: &InstallationFile) -> Result<Scenario, ScenarioError> {
        let table = file.simulation.clone().ok_or(ScenarioError::NotSimulated)?;
        let spec: ScenarioSpec =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ScenarioError::BadSimulation(e.to_string()))?;
        Scenario::new(spec)
    }

    pub fn layout(&self) -> &Layout {
        self.generator.layout()
    }

    pub fn installation(&self) -> Result<InstallationFile, ScenarioError> {
        let spec = &self.spec;
        let layout = self.layout();
        let plans = &layout.plans;
        let key = |i: usize| plans[i].key();
        let training_days = spec.days.min(MAX_TRAINING_DAYS);
        let window_end = spec.start + Duration::hours(48);

        let signals = layout.signals.iter().map(|(n, u)| SignalSpec { name: n.clone(), unit: u.clone() }).collect();
        let entities = layout
            .entities
            .iter()
            .map(|e| EntitySpec { name: e.name.clone(), kind: e.kind, parent: e.parent.clone() })
            .collect();
        let series = plans
            .iter()
            .map(|p| SeriesSpec { entity: p.entity.clone(), signal: p.signal.clone(), resolution_minutes: None })
            .collect();

        let mut feeders = Vec::new();
        for &s in &layout.substations {
            let Profile::SubstationLoad { feeders: kids } = &plans[s].profile else { unreachable!() };
            feeders.extend(kids.iter().map(|&f| FeederSpec { entity: plans[f].entity.clone(), substation: plans[s].entity.clone() }));
        }
        let voltage_points = layout
            .voltage_points
            .iter()
            .map(|&v| {
                let Profile::Voltage { feeder, .. } = plans[v].profile else { unreachable!() };
                VoltageSpec { entity: plans[v].entity.clone(), attached: plans[feeder].entity.clone() }
            })
            .collect();
        let grid = GridSpec {
            load_signal: LOAD_SIGNAL.into(),
            voltage_signal: VOLTAGE_SIGNAL.into(),
            substations: layout.substations.iter().map(|&s| plans[s].entity.clone()).collect(),
            feeders,
            voltage_points,
        };

        let peak = |i: usize| self.generator.peak(i, spec.start, window_end);
        let mut ranges = Vec::new();
        for &s in &layout.substations {
            ranges.push(RangeSpec { series: key(s), low: 0.0, high: round2(SUBSTATION_HEADROOM * peak(s)) });
        }
        for &f in &layout.feeders {
            ranges.push(RangeSpec { series: key(f), low: 0.0, high: round2(FEEDER_HEADROOM * peak(f)) });
        }
        for &v in &layout.voltage_points {
            ranges.push(RangeSpec { series: key(v), low: VOLTAGE_BAND.0, high: VOLTAGE_BAND.1 });
        }

        let fit = |ridge: f64| RelationSource::Fit {
            ridge,
            history_days: spec.days,
            min_residual_variance: DEFAULT_MIN_RESIDUAL_VARIANCE,
        };
        let mut relations: Vec<RelationSpec> = layout
            .substations
            .iter()
            .map(|&s| {
                let Profile::SubstationLoad { feeders: kids } = &plans[s].profile else { unreachable!() };
                RelationSpec {
                    name: format!("{}-feeder-sum", plans[s].entity),
                    child: key(s),
                    parents: kids.iter().map(|&f| key(f)).collect(),
                    source: fit(0.0),
                }
            })
            .collect();
        if spec.interaction && layout.substations.len() >= 2 {
            let neighbours = if layout.substations.len() >= 5 { 2 } else { 1 };
            relations.push(RelationSpec {
                name: format!("{}-neighbours", plans[0].entity),
                child: key(layout.substations[0]),
                parents: layout.substations[1..=neighbours].iter().map(|&s| key(s)).collect(),
                source: fit(1.0),
            });
        }

        let ridge = |lags: Vec<usize>| Algorithm::RidgeAutoregressive { lags, ridge: 1.0, calendar: true };
        let model = |i: usize, algorithm: Algorithm, features: Vec<String>| ModelSpec {
            name: format!("{}-{}", plans[i].key().replace('/', "-"), algorithm.name()),
            target: key(i),
            algorithm,
            features,
            train: None,
            score: None,
            training_days,
        };
        let mut models = Vec::new();
        for &i in layout.substations.iter().chain(&layout.feeders) {
            models.push(model(i, Algorithm::SeasonalNaive, vec![]));
        }
        for &v in &layout.voltage_points {
            let Profile::Voltage { feeder, .. } = plans[v].profile else { unreachable!() };
            models.push(model(v, ridge(vec![1, 2, 96]), vec![key(feeder)]));
        }
        for (n, i) in (layout.grid_series()..plans.len()).take(spec.counts.models - layout.grid_series()).enumerate() {
            let algorithm = match n % 3 {
                0 => Algorithm::SeasonalNaive,
                1 => Algorithm::Persistence,
                _ => ridge(vec![1, 96]),
            };
            models.push(model(i, algorithm, vec![]));
        }

        let simulation = match toml::Value::try_from(spec).map_err(ConfigError::from)? {
            toml::Value::Table(t) => t,
            _ => unreachable!("a struct serializes to a table"),
        };
        Ok(InstallationFile {
            name: spec.name.clone(),
            start: spec.start,
            signals,
            entities,
            series,
            grid,
            ranges,
            controllables: layout.feeders.iter().map(|&f| key(f)).collect(),
            relations,
            models,
            doms: DomsSettings::default(),
            simulation: Some(simulation),
        })
    }

    /// Writes `(series_key, timestamp, value)` rows for the whole history,
    /// slot-major.
    pub fn write_history<W: Write>(&self, writer: W) -> Result<(), ScenarioError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["series", "timestamp", "value"])?;
        let keys: Vec<String> = self.layout().plans.iter().map(|p| p.key()).collect();
        let mut t = self.spec.history_start();
        while t < self.spec.start {
            let stamp = format_instant(t);
            for (i, k) in keys.iter().enumerate() {
                w.write_record([k.as_str(), stamp.as_str(), &self.generator.value(i, t).to_string()])?;
            }
            t += step();
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Writes the installation file and history into `out` (created if
    /// missing).
    pub fn generate(&self, out: &Path) -> Result<(), ScenarioError> {
        fs::create_dir_all(out).map_err(io_error(out))?;
        let config = out.join(INSTALLATION_FILE);
        fs::write(&config, self.installation()?.to_toml()?).map_err(io_error(&config))?;
        let history = out.join(HISTORY_FILE);
        let file = fs::File::create(&history).map_err(io_error(&history))?;
        self.write_history(BufWriter::new(file))
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}
