use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::FlexRequest;
use crate::registry::SeriesId;
use crate::time::{Instant, STEP_HOURS};

/// A flexoffer-like window: one series over a run of consecutive steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlexWindow {
    pub series: SeriesId,
    pub start_step: usize,
    pub end_step: usize,
    pub start: Instant,
    pub end: Instant,
    /// Per-step amounts, `start_step..=end_step`.
    pub amounts: Vec<f64>,
    /// Σ amount × 0.25 h.
    pub energy: f64,
}

/// Merges requests into maximal runs of consecutive steps per series.
/// Requests for the same (series, step) are summed.
pub fn aggregate_requests(requests: &[FlexRequest]) -> Vec<FlexWindow> {
    let mut by_key: BTreeMap<(SeriesId, usize), (Instant, f64)> = BTreeMap::new();
    for r in requests {
        let e = by_key.entry((r.series, r.step)).or_insert((r.timestamp, 0.0));
        e.1 += r.amount;
    }

    let mut windows: Vec<FlexWindow> = Vec::new();
    for ((series, step), (timestamp, amount)) in by_key {
        match windows.last_mut() {
            Some(w) if w.series == series && w.end_step + 1 == step => {
                w.end_step = step;
                w.end = timestamp;
                w.amounts.push(amount);
            }
            _ => windows.push(FlexWindow {
                series,
                start_step: step,
                end_step: step,
                start: timestamp,
                end: timestamp,
                amounts: vec![amount],
                energy: 0.0,
            }),
        }
    }
    for w in &mut windows {
        w.energy = w.amounts.iter().sum::<f64>() * STEP_HOURS;
    }
    windows
}
