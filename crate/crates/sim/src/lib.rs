//! Synthetic trial-scale installations and simulated-clock runs.
//!
//! [`ScenarioSpec`] describes an installation by its counts; [`Scenario`]
//! expands it into an installation file and a deterministic history, and
//! [`Runtime`] drives the installation hour by hour.

pub mod generator;
pub mod layout;
pub mod runtime;
pub mod scenario;
pub mod spec;

pub use generator::Generator;
pub use layout::{Layout, Profile, SeriesPlan, LOAD_SIGNAL, VOLTAGE_SIGNAL};
pub use runtime::{HourSummary, JobFailure, RunReport, Runtime, RuntimeError, RuntimeOptions, Totals, STORE_DIR};
pub use scenario::{Scenario, ScenarioError, HISTORY_FILE, INSTALLATION_FILE};
pub use spec::{Counts, Injection, ScenarioSpec, SpecError, PRESETS};
