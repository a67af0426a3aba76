//! Configuration, sweep execution and CSV output for Monte Carlo studies.

pub mod config;
pub mod csv;
pub mod sweep;

pub use config::{load_config, parse_config, read_config_map, ConfigMap, SweepSpec, SweepVariable, KNOWN_KEYS};
pub use csv::{format_csv, parse_csv, write_csv, SweepRow, HEADER};
pub use sweep::{instance_digests, point_config, run_sweep, run_trial, PointFailure, SweepReport, TrialOutcome};
