//! Time-grid conventions shared across the crate. All instants are UTC.

use chrono::{DateTime, Duration, DurationRound, TimeZone, Utc};

pub type Instant = DateTime<Utc>;

/// Resolution of every forecast and of grid series by default.
pub const STEP_MINUTES: i64 = 15;
/// Number of steps in a 24 h forecast horizon.
pub const HORIZON_STEPS: usize = 96;
/// Energy per unit of power held over one step, in hours.
pub const STEP_HOURS: f64 = 0.25;

pub fn step() -> Duration {
    Duration::minutes(STEP_MINUTES)
}

pub fn hour() -> Duration {
    Duration::hours(1)
}

/// True when `t` lies on the grid of the given resolution (anchored at the
/// Unix epoch).
pub fn is_aligned(t: Instant, resolution_minutes: i64) -> bool {
    let secs = resolution_minutes * 60;
    t.timestamp_subsec_nanos() == 0 && t.timestamp().rem_euclid(secs) == 0
}

/// Largest grid instant ≤ `t`.
pub fn floor_to(t: Instant, resolution_minutes: i64) -> Instant {
    t.duration_trunc(Duration::minutes(resolution_minutes)).unwrap_or(t)
}

/// Timestamp of horizon step `k` (0-based) for a forecast issued at `issue`.
pub fn step_time(issue: Instant, k: usize) -> Instant {
    floor_to(issue, STEP_MINUTES) + step() * (k as i32 + 1)
}

/// Parses an RFC 3339 timestamp into UTC.
pub fn parse_instant(s: &str) -> Result<Instant, chrono::ParseError> {
    DateTime::parse_from_rfc3339(s).map(|t| t.with_timezone(&Utc))
}

pub fn format_instant(t: Instant) -> String {
    t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn ymd_hm(y: i32, m: u32, d: u32, h: u32, min: u32) -> Instant {
    Utc.with_ymd_and_hms(y, m, d, h, min, 0).single().expect("valid calendar instant")
}
