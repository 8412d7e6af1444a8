use chrono::Duration;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::{Job, JobKind, ModelConfig};
use crate::time::Instant;

/// Fixed-interval recurrence: `anchor + k·interval` for every integer `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Recurrence {
    pub anchor: Instant,
    pub interval_minutes: i64,
}

impl Recurrence {
    pub fn new(anchor: Instant, interval_minutes: i64) -> Self {
        assert!(interval_minutes > 0, "recurrence interval must be positive");
        Recurrence { anchor, interval_minutes }
    }

    pub fn hourly(anchor: Instant) -> Self {
        Self::new(anchor, 60)
    }

    pub fn daily(anchor: Instant) -> Self {
        Self::new(anchor, 24 * 60)
    }

    /// Occurrences in the half-open interval `(after, upto]`, ascending.
    pub fn occurrences(&self, after: Instant, upto: Instant) -> Vec<Instant> {
        if upto <= after || self.interval_minutes <= 0 {
            return Vec::new();
        }
        let interval = Duration::minutes(self.interval_minutes);
        let offset = (after - self.anchor).num_minutes().div_euclid(self.interval_minutes);
        let mut t = self.anchor + Duration::minutes(offset * self.interval_minutes);
        while t <= after {
            t += interval;
        }
        let mut out = Vec::new();
        while t <= upto {
            out.push(t);
            t += interval;
        }
        out
    }
}

/// Emits every scheduled occurrence exactly once as the clock advances.
pub struct Scheduler {
    configs: Vec<ModelConfig>,
    last_tick: Mutex<Instant>,
}

impl Scheduler {
    /// Occurrences at or before `start` are considered already handled.
    pub fn new(configs: Vec<ModelConfig>, start: Instant) -> Self {
        Scheduler { configs, last_tick: Mutex::new(start) }
    }

    pub fn configs(&self) -> &[ModelConfig] {
        &self.configs
    }

    pub fn last_tick(&self) -> Instant {
        *self.last_tick.lock()
    }

    /// Jobs with occurrences in `(last tick, now]`, ordered by time with
    /// training ahead of scoring at the same instant. Moving the clock
    /// backwards yields nothing.
    pub fn due_jobs(&self, now: Instant) -> Vec<Job> {
        let mut last = self.last_tick.lock();
        if now <= *last {
            return Vec::new();
        }
        let mut jobs = Vec::new();
        for config in &self.configs {
            for (kind, recurrence) in [(JobKind::Train, &config.train_schedule), (JobKind::Score, &config.score_schedule)] {
                jobs.extend(recurrence.occurrences(*last, now).into_iter().map(|at| Job { config: config.id, kind, at }));
            }
        }
        *last = now;
        jobs.sort_by_key(|j| (j.at, j.kind, j.config));
        jobs
    }
}
