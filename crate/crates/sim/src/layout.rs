//! Deterministic expansion of a [`ScenarioSpec`] into entities, series and
//! their generating profiles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flexgrid_core::registry::EntityKind;

use crate::spec::{substation_name, ScenarioSpec};

pub const LOAD_SIGNAL: &str = "active_power";
pub const VOLTAGE_SIGNAL: &str = "voltage";

/// Signal catalogue; the first `counts.signals` entries are registered.
pub(crate) const SIGNALS: [(&str, &str); 19] = [
    (LOAD_SIGNAL, "kW"),
    (VOLTAGE_SIGNAL, "V"),
    ("reactive_power", "kvar"),
    ("current", "A"),
    ("frequency", "Hz"),
    ("power_factor", ""),
    ("temperature", "degC"),
    ("irradiance", "W/m2"),
    ("wind_speed", "m/s"),
    ("humidity", "%"),
    ("pv_generation", "kW"),
    ("energy_import", "kWh"),
    ("energy_export", "kWh"),
    ("battery_soc", "%"),
    ("ev_charging", "kW"),
    ("heat_pump_load", "kW"),
    ("cloud_cover", "%"),
    ("pressure", "hPa"),
    ("harmonic_distortion", "%"),
];

/// Typical level, relative daily swing and relative noise per signal.
const AMBIENT: [(f64, f64, f64); 19] = [
    (12.0, 0.3, 0.03),
    (230.0, 0.01, 0.002),
    (4.0, 0.25, 0.04),
    (30.0, 0.3, 0.03),
    (50.0, 0.0, 0.0004),
    (0.95, 0.02, 0.005),
    (22.0, 0.2, 0.02),
    (400.0, 0.9, 0.05),
    (4.0, 0.3, 0.1),
    (60.0, 0.15, 0.03),
    (15.0, 0.9, 0.05),
    (3.0, 0.3, 0.04),
    (2.0, 0.6, 0.05),
    (55.0, 0.3, 0.02),
    (8.0, 0.5, 0.08),
    (6.0, 0.35, 0.04),
    (40.0, 0.3, 0.08),
    (1013.0, 0.002, 0.0005),
    (3.0, 0.2, 0.05),
];

#[derive(Clone, Debug, PartialEq)]
pub enum Profile {
    /// `base · (1 + 0.3·daily + 0.02·weekly)` plus 1 % noise.
    FeederLoad { base: f64, phase: f64, substation: usize },
    /// Sum of the listed feeder plans plus 0.5 % noise.
    SubstationLoad { feeders: Vec<usize> },
    /// `nominal − slope · feeder load` plus noise.
    Voltage { feeder: usize, nominal: f64, slope: f64, noise: f64 },
    Ambient { base: f64, swing: f64, phase: f64, noise: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesPlan {
    pub entity: String,
    pub signal: String,
    pub profile: Profile,
}

impl SeriesPlan {
    pub fn key(&self) -> String {
        format!("{}/{}", self.entity, self.signal)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntityPlan {
    pub name: String,
    pub kind: EntityKind,
    pub parent: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub signals: Vec<(String, String)>,
    pub entities: Vec<EntityPlan>,
    /// Grid series first: substations, feeders, voltage points.
    pub plans: Vec<SeriesPlan>,
    pub substations: Vec<usize>,
    pub feeders: Vec<usize>,
    pub voltage_points: Vec<usize>,
}

impl Layout {
    /// Expands `spec`; the spec should already be validated.
    pub fn new(spec: &ScenarioSpec) -> Layout {
        let c = spec.counts;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let signals: Vec<(String, String)> =
            SIGNALS.iter().take(c.signals).map(|(n, u)| (n.to_string(), u.to_string())).collect();
        let mut entities = Vec::new();
        let mut plans = Vec::new();

        let per = c.feeders / c.substations;
        let extra = c.feeders % c.substations;
        let substations: Vec<usize> = (0..c.substations).collect();
        let mut feeder_names = Vec::new();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); c.substations];
        for s in 0..c.substations {
            entities.push(EntityPlan { name: substation_name(s), kind: EntityKind::Substation, parent: None });
            plans.push(SeriesPlan {
                entity: substation_name(s),
                signal: LOAD_SIGNAL.into(),
                profile: Profile::SubstationLoad { feeders: Vec::new() },
            });
        }
        for (s, kids) in children.iter_mut().enumerate() {
            for f in 0..per + usize::from(s < extra) {
                let name = format!("{}-F{}", substation_name(s), f + 1);
                entities.push(EntityPlan { name: name.clone(), kind: EntityKind::Feeder, parent: Some(substation_name(s)) });
                kids.push(plans.len());
                plans.push(SeriesPlan {
                    entity: name.clone(),
                    signal: LOAD_SIGNAL.into(),
                    profile: Profile::FeederLoad {
                        base: rng.random_range(40.0..120.0),
                        phase: rng.random_range(-0.02..0.02),
                        substation: s,
                    },
                });
                feeder_names.push(name);
            }
        }
        for (s, kids) in children.into_iter().enumerate() {
            plans[s].profile = Profile::SubstationLoad { feeders: kids };
        }
        let feeders: Vec<usize> = (c.substations..c.substations + c.feeders).collect();

        let mut voltage_points = Vec::new();
        for v in 0..c.voltage_points {
            let name = format!("VP{:02}", v + 1);
            let attached = v % c.feeders;
            entities.push(EntityPlan {
                name: name.clone(),
                kind: EntityKind::VoltagePoint,
                parent: Some(feeder_names[attached].clone()),
            });
            voltage_points.push(plans.len());
            plans.push(SeriesPlan {
                entity: name,
                signal: VOLTAGE_SIGNAL.into(),
                profile: Profile::Voltage {
                    feeder: feeders[attached],
                    nominal: 230.0,
                    slope: rng.random_range(0.03..0.07),
                    noise: 0.3,
                },
            });
        }

        // Extra entities hang off feeders round-robin and each measure load;
        // further series pair entities with the remaining signals.
        let kinds = [(EntityKind::Meter, "MTR"), (EntityKind::Plant, "PV"), (EntityKind::Meter, "MTR"), (EntityKind::Other, "WS")];
        let grid_entities = entities.len();
        for e in 0..c.entities - grid_entities {
            let (kind, prefix) = kinds[e % kinds.len()];
            entities.push(EntityPlan {
                name: format!("{prefix}-{:03}", e + 1),
                kind,
                parent: Some(feeder_names[e % feeder_names.len()].clone()),
            });
        }
        let ambient = |rng: &mut ChaCha8Rng, signal: usize| {
            let (level, swing, noise) = AMBIENT[signal];
            Profile::Ambient {
                base: level * rng.random_range(0.8..1.2),
                swing,
                phase: rng.random_range(-0.1..0.1),
                noise,
            }
        };
        for e in entities.iter().skip(grid_entities) {
            if plans.len() == c.series {
                break;
            }
            let profile = ambient(&mut rng, 0);
            plans.push(SeriesPlan { entity: e.name.clone(), signal: LOAD_SIGNAL.into(), profile });
        }
        let others = c.signals - 2;
        'rounds: for round in 0..others {
            for (i, e) in entities.iter().enumerate() {
                if plans.len() == c.series {
                    break 'rounds;
                }
                let signal = 2 + (i + round) % others;
                let profile = ambient(&mut rng, signal);
                plans.push(SeriesPlan { entity: e.name.clone(), signal: SIGNALS[signal].0.into(), profile });
            }
        }

        Layout { signals, entities, plans, substations, feeders, voltage_points }
    }

    pub fn grid_series(&self) -> usize {
        self.substations.len() + self.feeders.len() + self.voltage_points.len()
    }

    pub fn index_of(&self, key: &str) -> Option<usize> {
        self.plans.iter().position(|p| p.key() == key)
    }
}
