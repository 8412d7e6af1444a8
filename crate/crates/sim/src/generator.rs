//! Random-access synthetic values: the value of any series at any instant
//! depends only on the seed, so history files and live readings agree.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use flexgrid_core::time::{step, Instant, STEP_MINUTES};

use crate::layout::{Layout, Profile};
use crate::spec::{Injection, ScenarioSpec};

const DAILY_SWING: f64 = 0.3;
const WEEKLY_SWING: f64 = 0.02;
const FEEDER_NOISE: f64 = 0.01;
const SUBSTATION_NOISE: f64 = 0.005;
const NOISE_CLIP: f64 = 3.0;

pub struct Generator {
    seed: u64,
    layout: Layout,
    /// Per plan, the injections that scale it.
    injections: Vec<Vec<Injection>>,
}

fn hours_since_epoch(t: Instant) -> f64 {
    t.timestamp() as f64 / 3600.0
}

/// Unit sinusoid over the day peaking mid-afternoon.
fn daily(t: Instant, phase: f64) -> f64 {
    let day_fraction = hours_since_epoch(t).rem_euclid(24.0) / 24.0;
    (TAU * (day_fraction - 0.375 + phase)).sin()
}

fn weekly(t: Instant) -> f64 {
    (TAU * hours_since_epoch(t) / (24.0 * 7.0)).sin()
}

impl Generator {
    pub fn new(spec: &ScenarioSpec, layout: Layout) -> Generator {
        let mut injections = vec![Vec::new(); layout.plans.len()];
        for inj in &spec.injections {
            let Some(target) = layout.index_of(&inj.series) else { continue };
            match &layout.plans[target].profile {
                Profile::SubstationLoad { feeders } => {
                    for &f in feeders {
                        injections[f].push(inj.clone());
                    }
                }
                _ => injections[target].push(inj.clone()),
            }
        }
        Generator { seed: spec.seed, layout, injections }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Standard normal draw keyed by (seed, plan, 15-minute slot), clipped
    /// to ±3 so every series stays inside a known noise envelope.
    fn noise(&self, plan: usize, t: Instant) -> f64 {
        let slot = t.timestamp().div_euclid(STEP_MINUTES * 60);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(plan as u64);
        rng.set_word_pos(u128::from(slot as u64) * 16);
        let z: f64 = StandardNormal.sample(&mut rng);
        z.clamp(-NOISE_CLIP, NOISE_CLIP)
    }

    fn scale(&self, plan: usize, t: Instant) -> f64 {
        self.injections[plan].iter().filter(|i| i.covers(t)).map(|i| 1.0 + i.magnitude).product()
    }

    /// Noise-free, injection-free profile value.
    pub fn expected(&self, plan: usize, t: Instant) -> f64 {
        match &self.layout.plans[plan].profile {
            Profile::FeederLoad { base, phase, .. } => {
                base * (1.0 + DAILY_SWING * daily(t, *phase) + WEEKLY_SWING * weekly(t))
            }
            Profile::SubstationLoad { feeders } => feeders.iter().map(|&f| self.expected(f, t)).sum(),
            Profile::Voltage { feeder, nominal, slope, .. } => nominal - slope * self.expected(*feeder, t),
            Profile::Ambient { base, swing, phase, .. } => base * (1.0 + swing * daily(t, *phase)),
        }
    }

    /// Observed value including noise and injected events.
    pub fn value(&self, plan: usize, t: Instant) -> f64 {
        let z = self.noise(plan, t);
        match &self.layout.plans[plan].profile {
            Profile::FeederLoad { base, .. } => {
                (self.expected(plan, t) + FEEDER_NOISE * base * z) * self.scale(plan, t)
            }
            Profile::SubstationLoad { feeders } => {
                let sum: f64 = feeders.iter().map(|&f| self.value(f, t)).sum();
                sum + SUBSTATION_NOISE * self.noise_scale(plan) * z
            }
            Profile::Voltage { feeder, nominal, slope, noise } => nominal - slope * self.value(*feeder, t) + noise * z,
            Profile::Ambient { base, noise, .. } => self.expected(plan, t) + noise * base * z,
        }
    }

    /// Standard deviation of the noise added on top of a series' inputs.
    pub fn noise_sd(&self, plan: usize) -> f64 {
        match &self.layout.plans[plan].profile {
            Profile::FeederLoad { base, .. } => FEEDER_NOISE * base,
            Profile::SubstationLoad { .. } => SUBSTATION_NOISE * self.noise_scale(plan),
            Profile::Voltage { noise, .. } => *noise,
            Profile::Ambient { base, noise, .. } => noise * base,
        }
    }

    fn noise_scale(&self, plan: usize) -> f64 {
        match &self.layout.plans[plan].profile {
            Profile::SubstationLoad { feeders } => feeders
                .iter()
                .map(|&f| match self.layout.plans[f].profile {
                    Profile::FeederLoad { base, .. } => base,
                    _ => 0.0,
                })
                .sum(),
            _ => 1.0,
        }
    }

    /// Largest noise-free value over the 15-minute slots in `(from, to]`.
    pub fn peak(&self, plan: usize, from: Instant, to: Instant) -> f64 {
        let mut t = from + step();
        let mut peak = f64::NEG_INFINITY;
        while t <= to {
            peak = peak.max(self.expected(plan, t));
            t += step();
        }
        peak
    }
}
