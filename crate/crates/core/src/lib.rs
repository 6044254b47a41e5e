//! Seeded, multi-agent, multi-scale simulation of instrument-side experiment
//! operations: an operator chasing a drifting stream with the beam, an
//! analyst tracking the standard error, and a manager deciding when to stop
//! measurements and how to spend the remaining beam time.

pub mod agents;
pub mod cli;
pub mod config;
pub mod output;
pub mod planner;
pub mod scan;
pub mod sim;
pub mod stats;

pub use agents::{AnalystReport, MesoDecision, OperatorCommand, OperatorState};
pub use config::{ConfigError, RunConfig};
pub use planner::{run_experiment, ExperimentLog, ExperimentPlan, Sample};
pub use scan::{execute_scan, ScanResult, ScanSpec};
pub use sim::{MeasurementRecord, Termination};
pub use stats::StatAccumulator;
