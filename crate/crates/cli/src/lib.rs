//! Scenario runner for the `hydrogeo` library.
//!
//! A scenario file names one computation (curvature, gradient flow, geodesic,
//! parallel transport, distance, oracle comparison or identity suite), its
//! model, grid and input fields. Running it writes CSV and JSON artifacts plus
//! a `manifest.json` with the echoed config, stage timings and file hashes.

pub mod config;
pub mod output;
pub mod scenario;
pub mod suite;

pub use config::{parse_config, ConfigError, Scenario, ScenarioKind};
pub use scenario::{exit, run_scenario, Failure, RunError, RunOptions, RunOutcome};
