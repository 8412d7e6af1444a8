use super::ForecastError;
use crate::registry::SeriesId;
use crate::store::Storage;
use crate::time::{step, Instant};

/// Longest run of missing steps bridged by carrying the last observation
/// forward (4 h at 15-minute resolution).
pub const MAX_FILL_STEPS: usize = 16;

/// Values on every 15-minute instant of `[from, to]`, gaps bridged by the
/// last observation up to [`MAX_FILL_STEPS`] steps. Only data timestamped
/// ≤ `to` is read.
pub fn regular_window(
    store: &dyn Storage,
    series: SeriesId,
    from: Instant,
    to: Instant,
) -> Result<Vec<f64>, ForecastError> {
    let lookback = step() * MAX_FILL_STEPS as i32;
    let points = store.read_range(series, from - lookback, to + chrono::Duration::nanoseconds(1))?;
    let mut iter = points.iter().peekable();
    let mut last: Option<(Instant, f64)> = None;
    let mut out = Vec::new();
    let mut t = from;
    while t <= to {
        while let Some(p) = iter.next_if(|p| p.timestamp <= t) {
            last = Some((p.timestamp, p.value));
        }
        match last {
            Some((seen, v)) => {
                let missing = ((t - seen).num_minutes() / 15) as usize;
                if missing > MAX_FILL_STEPS {
                    return Err(ForecastError::GapTooLarge { at: t, steps: missing, max: MAX_FILL_STEPS });
                }
                out.push(v);
            }
            None => {
                return Err(ForecastError::GapTooLarge { at: t, steps: MAX_FILL_STEPS + 1, max: MAX_FILL_STEPS })
            }
        }
        t += step();
    }
    Ok(out)
}
