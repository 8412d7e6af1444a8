//! Semantic registry: signals (what is measured), entities (where), and the
//! time series declared on (signal, entity) pairs.

use std::collections::HashMap;
use std::fmt;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::STEP_MINUTES;

macro_rules! id_type {
    ($name:ident) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(SignalId);
id_type!(EntityId);
id_type!(SeriesId);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Substation,
    Feeder,
    VoltagePoint,
    Plant,
    Meter,
    Other,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub id: SignalId,
    pub name: String,
    pub unit: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
    pub kind: EntityKind,
    pub parent: Option<EntityId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub id: SeriesId,
    pub signal: SignalId,
    pub entity: EntityId,
    pub resolution_minutes: i64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistryError {
    #[error("unknown signal {0}")]
    UnknownSignal(String),
    #[error("unknown entity {0}")]
    UnknownEntity(String),
    #[error("unknown series {0}")]
    UnknownSeries(String),
    #[error("entity `{0}` would become its own ancestor")]
    ParentCycle(String),
    #[error("resolution must be positive, got {0} minutes")]
    InvalidResolution(i64),
}

/// Optional criteria for [`Registry::search_context`]; all given criteria
/// must match.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextFilter {
    /// Case-insensitive substring of the signal name.
    pub signal: Option<String>,
    pub kind: Option<EntityKind>,
    /// Direct parent of the series' entity.
    pub parent: Option<EntityId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesListing {
    pub series: TimeSeries,
    pub signal: Signal,
    pub entity: Entity,
}

#[derive(Default, Debug)]
struct Inner {
    signals: Vec<Signal>,
    signal_by_name: HashMap<String, SignalId>,
    entities: Vec<Entity>,
    entity_by_name: HashMap<String, EntityId>,
    series: Vec<TimeSeries>,
    series_by_pair: HashMap<(SignalId, EntityId), SeriesId>,
}

/// Thread-safe registry. Every registration is idempotent on its natural
/// key; concurrent registrations of the same key resolve to the first id.
#[derive(Default, Debug)]
pub struct Registry {
    inner: RwLock<Inner>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_signal(&self, name: &str, unit: &str) -> SignalId {
        let key = name.to_lowercase();
        if let Some(id) = self.inner.read().signal_by_name.get(&key) {
            return *id;
        }
        let mut inner = self.inner.write();
        if let Some(id) = inner.signal_by_name.get(&key) {
            return *id;
        }
        let id = SignalId(inner.signals.len() as u32);
        inner.signals.push(Signal { id, name: name.to_string(), unit: unit.to_string() });
        inner.signal_by_name.insert(key, id);
        id
    }

    pub fn register_entity(
        &self,
        name: &str,
        kind: EntityKind,
        parent: Option<EntityId>,
    ) -> Result<EntityId, RegistryError> {
        let mut inner = self.inner.write();
        if let Some(id) = inner.entity_by_name.get(name) {
            return Ok(*id);
        }
        let id = EntityId(inner.entities.len() as u32);
        if let Some(p) = parent {
            if p.0 as usize >= inner.entities.len() {
                return Err(RegistryError::UnknownEntity(p.to_string()));
            }
            // Walk the ancestor chain; it must terminate without meeting `id`.
            let mut cursor = Some(p);
            let mut steps = 0;
            while let Some(c) = cursor {
                if c == id || steps > inner.entities.len() {
                    return Err(RegistryError::ParentCycle(name.to_string()));
                }
                cursor = inner.entities[c.0 as usize].parent;
                steps += 1;
            }
        }
        inner.entities.push(Entity { id, name: name.to_string(), kind, parent });
        inner.entity_by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn declare_timeseries(
        &self,
        signal: SignalId,
        entity: EntityId,
        resolution_minutes: Option<i64>,
    ) -> Result<SeriesId, RegistryError> {
        let resolution_minutes = resolution_minutes.unwrap_or(STEP_MINUTES);
        if resolution_minutes <= 0 {
            return Err(RegistryError::InvalidResolution(resolution_minutes));
        }
        let mut inner = self.inner.write();
        if signal.0 as usize >= inner.signals.len() {
            return Err(RegistryError::UnknownSignal(signal.to_string()));
        }
        if entity.0 as usize >= inner.entities.len() {
            return Err(RegistryError::UnknownEntity(entity.to_string()));
        }
        if let Some(id) = inner.series_by_pair.get(&(signal, entity)) {
            return Ok(*id);
        }
        let id = SeriesId(inner.series.len() as u32);
        inner.series.push(TimeSeries { id, signal, entity, resolution_minutes });
        inner.series_by_pair.insert((signal, entity), id);
        Ok(id)
    }

    pub fn signal(&self, id: SignalId) -> Option<Signal> {
        self.inner.read().signals.get(id.0 as usize).cloned()
    }

    pub fn entity(&self, id: EntityId) -> Option<Entity> {
        self.inner.read().entities.get(id.0 as usize).cloned()
    }

    pub fn series(&self, id: SeriesId) -> Option<TimeSeries> {
        self.inner.read().series.get(id.0 as usize).cloned()
    }

    pub fn signal_by_name(&self, name: &str) -> Option<SignalId> {
        self.inner.read().signal_by_name.get(&name.to_lowercase()).copied()
    }

    pub fn entity_by_name(&self, name: &str) -> Option<EntityId> {
        self.inner.read().entity_by_name.get(name).copied()
    }

    pub fn series_for(&self, signal: SignalId, entity: EntityId) -> Option<SeriesId> {
        self.inner.read().series_by_pair.get(&(signal, entity)).copied()
    }

    /// Looks up the series measuring `signal_name` at `entity_name`.
    pub fn resolve(&self, entity_name: &str, signal_name: &str) -> Result<SeriesId, RegistryError> {
        let entity = self
            .entity_by_name(entity_name)
            .ok_or_else(|| RegistryError::UnknownEntity(entity_name.to_string()))?;
        let signal = self
            .signal_by_name(signal_name)
            .ok_or_else(|| RegistryError::UnknownSignal(signal_name.to_string()))?;
        self.series_for(signal, entity)
            .ok_or_else(|| RegistryError::UnknownSeries(format!("{entity_name}/{signal_name}")))
    }

    /// Human-readable `entity/signal` key of a series.
    pub fn series_key(&self, id: SeriesId) -> Option<String> {
        let inner = self.inner.read();
        let ts = inner.series.get(id.0 as usize)?;
        Some(format!(
            "{}/{}",
            inner.entities[ts.entity.0 as usize].name, inner.signals[ts.signal.0 as usize].name
        ))
    }

    pub fn signals(&self) -> Vec<Signal> {
        self.inner.read().signals.clone()
    }

    pub fn entities(&self) -> Vec<Entity> {
        self.inner.read().entities.clone()
    }

    pub fn all_series(&self) -> Vec<TimeSeries> {
        self.inner.read().series.clone()
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        let inner = self.inner.read();
        (inner.signals.len(), inner.entities.len(), inner.series.len())
    }

    /// Series matching `filter`, stable-sorted by (entity name, signal name).
    pub fn search_context(&self, filter: &ContextFilter) -> Vec<SeriesListing> {
        let inner = self.inner.read();
        let fragment = filter.signal.as_ref().map(|s| s.to_lowercase());
        let mut out: Vec<SeriesListing> = inner
            .series
            .iter()
            .filter_map(|ts| {
                let signal = &inner.signals[ts.signal.0 as usize];
                let entity = &inner.entities[ts.entity.0 as usize];
                if let Some(f) = &fragment {
                    if !signal.name.to_lowercase().contains(f.as_str()) {
                        return None;
                    }
                }
                if filter.kind.is_some_and(|k| k != entity.kind) {
                    return None;
                }
                if filter.parent.is_some() && entity.parent != filter.parent {
                    return None;
                }
                Some(SeriesListing { series: ts.clone(), signal: signal.clone(), entity: entity.clone() })
            })
            .collect();
        out.sort_by(|a, b| (&a.entity.name, &a.signal.name).cmp(&(&b.entity.name, &b.signal.name)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wind_generation_at_wind_farm() {
        let reg = Registry::new();
        let sig = reg.register_signal("wind generation", "kW");
        let ent = reg.register_entity("wind farm", EntityKind::Plant, None).unwrap();
        let ts = reg.declare_timeseries(sig, ent, None).unwrap();
        assert_eq!(reg.counts(), (1, 1, 1));
        assert_eq!(reg.series(ts).unwrap().resolution_minutes, 15);
        assert_eq!(reg.series_key(ts).unwrap(), "wind farm/wind generation");
    }

    #[test]
    fn declarations_are_idempotent() {
        let reg = Registry::new();
        let sig = reg.register_signal("Load", "kW");
        assert_eq!(reg.register_signal("load", "MW"), sig);
        let ent = reg.register_entity("SS1", EntityKind::Substation, None).unwrap();
        assert_eq!(reg.register_entity("SS1", EntityKind::Feeder, None).unwrap(), ent);
        let a = reg.declare_timeseries(sig, ent, None).unwrap();
        let b = reg.declare_timeseries(sig, ent, Some(15)).unwrap();
        assert_eq!(a, b);
        assert_eq!(reg.counts(), (1, 1, 1));
    }

    #[test]
    fn referential_errors() {
        let reg = Registry::new();
        let sig = reg.register_signal("load", "kW");
        assert!(matches!(
            reg.declare_timeseries(sig, EntityId(4), None),
            Err(RegistryError::UnknownEntity(_))
        ));
        assert!(matches!(
            reg.register_entity("F1", EntityKind::Feeder, Some(EntityId(0))),
            Err(RegistryError::UnknownEntity(_))
        ));
        let ent = reg.register_entity("SS1", EntityKind::Substation, None).unwrap();
        assert!(matches!(
            reg.declare_timeseries(SignalId(9), ent, None),
            Err(RegistryError::UnknownSignal(_))
        ));
        assert!(matches!(
            reg.declare_timeseries(sig, ent, Some(0)),
            Err(RegistryError::InvalidResolution(0))
        ));
    }

    #[test]
    fn search_filters_and_sorts() {
        let reg = Registry::new();
        let load = reg.register_signal("load", "kW");
        let volt = reg.register_signal("voltage", "V");
        let ss = reg.register_entity("SS1", EntityKind::Substation, None).unwrap();
        let other = reg.register_entity("SS2", EntityKind::Substation, None).unwrap();
        let f2 = reg.register_entity("F2", EntityKind::Feeder, Some(ss)).unwrap();
        let f1 = reg.register_entity("F1", EntityKind::Feeder, Some(ss)).unwrap();
        let f3 = reg.register_entity("F3", EntityKind::Feeder, Some(other)).unwrap();
        for e in [ss, f2, f1, f3] {
            reg.declare_timeseries(load, e, None).unwrap();
        }
        reg.declare_timeseries(volt, ss, None).unwrap();

        let feeders = reg.search_context(&ContextFilter { kind: Some(EntityKind::Feeder), ..Default::default() });
        let names: Vec<_> = feeders.iter().map(|l| l.entity.name.as_str()).collect();
        assert_eq!(names, ["F1", "F2", "F3"]);

        let children = reg.search_context(&ContextFilter { parent: Some(ss), ..Default::default() });
        assert_eq!(children.len(), 2);
        assert!(children.iter().all(|l| l.entity.parent == Some(ss)));

        let volts = reg.search_context(&ContextFilter { signal: Some("VOLT".into()), ..Default::default() });
        assert_eq!(volts.len(), 1);

        let none = reg.search_context(&ContextFilter { signal: Some("wind".into()), ..Default::default() });
        assert!(none.is_empty());
        assert_eq!(reg.search_context(&ContextFilter::default()).len(), 5);
    }

    #[test]
    fn empty_registry_lists_nothing() {
        let reg = Registry::new();
        assert!(reg.search_context(&ContextFilter::default()).is_empty());
        assert_eq!(reg.counts(), (0, 0, 0));
    }
}
