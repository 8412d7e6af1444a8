use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use flexgrid_core::time::{is_aligned, ymd_hm, Instant, STEP_MINUTES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("unknown preset `{0}` (expected cyprus, switzerland or germany)")]
    UnknownPreset(String),
    #[error("inconsistent counts: {0}")]
    Counts(String),
    #[error("injection on `{series}`: {reason}")]
    Injection { series: String, reason: String },
}

/// A temporary multiplicative change to a load series (and, for a
/// substation, to every feeder below it).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    /// `entity/signal` reference.
    pub series: String,
    pub start: Instant,
    pub duration_minutes: i64,
    /// Relative change, `0.2` = +20 %.
    pub magnitude: f64,
}

impl Injection {
    pub fn covers(&self, t: Instant) -> bool {
        t >= self.start && t < self.start + Duration::minutes(self.duration_minutes)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub substations: usize,
    pub feeders: usize,
    pub voltage_points: usize,
    pub signals: usize,
    pub entities: usize,
    pub series: usize,
    pub models: usize,
}

impl Counts {
    pub fn grid_nodes(&self) -> usize {
        self.substations + self.feeders + self.voltage_points
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub seed: u64,
    /// Go-live instant; history covers the `days` before it.
    pub start: Instant,
    pub days: u32,
    pub counts: Counts,
    /// Adds a relation tying the first substation to its neighbours.
    pub interaction: bool,
    #[serde(default)]
    pub injections: Vec<Injection>,
}

/// Names accepted by [`ScenarioSpec::preset`].
pub const PRESETS: [&str; 3] = ["cyprus", "switzerland", "germany"];

impl ScenarioSpec {
    /// Trial-scale presets. The Cyprus grid split is the documented one; the
    /// other two splits are invented.
    pub fn preset(name: &str, seed: u64, days: u32) -> Result<ScenarioSpec, SpecError> {
        let (counts, interaction) = match name {
            "cyprus" => (
                Counts {
                    substations: 15,
                    feeders: 29,
                    voltage_points: 41,
                    signals: 19,
                    entities: 179,
                    series: 531,
                    models: 174,
                },
                true,
            ),
            "switzerland" => (
                Counts {
                    substations: 4,
                    feeders: 10,
                    voltage_points: 12,
                    signals: 11,
                    entities: 48,
                    series: 196,
                    models: 61,
                },
                true,
            ),
            "germany" => (
                Counts {
                    substations: 2,
                    feeders: 4,
                    voltage_points: 3,
                    signals: 13,
                    entities: 11,
                    series: 18,
                    models: 11,
                },
                false,
            ),
            other => return Err(SpecError::UnknownPreset(other.to_string())),
        };
        Ok(ScenarioSpec {
            name: name.to_string(),
            seed,
            start: ymd_hm(2024, 6, 3, 0, 0),
            days,
            counts,
            interaction,
            injections: Vec::new(),
        })
    }

    /// Adds the default congestion event: +20 % on one substation over the
    /// last day of history.
    pub fn with_default_injection(mut self) -> Self {
        let hot = hot_substation(self.counts.substations);
        self.injections.push(Injection {
            series: format!("{}/{}", substation_name(hot), crate::layout::LOAD_SIGNAL),
            start: self.start - Duration::days(1),
            duration_minutes: 24 * 60,
            magnitude: 0.2,
        });
        self
    }

    pub fn history_start(&self) -> Instant {
        self.start - Duration::days(i64::from(self.days))
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let c = &self.counts;
        let bad = |m: String| Err(SpecError::Counts(m));
        if [c.substations, c.feeders, c.voltage_points, c.signals, c.entities, c.series, c.models].contains(&0) {
            return bad("every count must be positive".into());
        }
        if c.feeders < c.substations {
            return bad(format!("{} feeders cannot serve {} substations", c.feeders, c.substations));
        }
        if c.signals < 2 {
            return bad("need at least a load and a voltage signal".into());
        }
        if c.entities < c.grid_nodes() {
            return bad(format!("{} entities for {} grid nodes", c.entities, c.grid_nodes()));
        }
        if c.series < c.grid_nodes() {
            return bad(format!("{} series for {} grid nodes", c.series, c.grid_nodes()));
        }
        let extra_entities = c.entities - c.grid_nodes();
        let capacity = c.grid_nodes() + extra_entities + c.entities * (c.signals - 2);
        if c.series > capacity {
            return bad(format!("{} series exceed the {capacity} available (entity, signal) pairs", c.series));
        }
        if c.models < c.grid_nodes() || c.models > c.series {
            return bad(format!("{} models must lie between {} grid nodes and {} series", c.models, c.grid_nodes(), c.series));
        }
        if self.days < 2 {
            return bad("at least two days of history are needed".into());
        }
        if !is_aligned(self.start, 60) {
            return bad("start must be on the hour".into());
        }
        for inj in &self.injections {
            let fail = |reason: &str| Err(SpecError::Injection { series: inj.series.clone(), reason: reason.into() });
            let end = inj.start + Duration::minutes(inj.duration_minutes);
            if inj.duration_minutes <= 0 || !is_aligned(inj.start, STEP_MINUTES) {
                return fail("needs a positive duration starting on the 15-minute grid");
            }
            if inj.start < self.history_start() || end > self.start {
                return fail("lies outside the history window");
            }
            if !inj.magnitude.is_finite() || inj.magnitude <= -1.0 {
                return fail("magnitude must be finite and above -1");
            }
        }
        Ok(())
    }
}

pub(crate) fn substation_name(i: usize) -> String {
    format!("SS{:02}", i + 1)
}

/// A two-feeder substation away from the one tied in by the interaction
/// relation.
pub(crate) fn hot_substation(substations: usize) -> usize {
    if substations >= 3 {
        substations - 2
    } else {
        substations - 1
    }
}
