//! Deterministic multi-process execution driver and the brute-force
//! happens-before oracle.

pub mod fixtures;
pub mod generate;
pub mod oracle;
pub mod runner;
pub mod script;

pub use generate::{random_scripts, GenParams};
pub use oracle::{sequence_impact_set, HappensBeforeOracle, OracleError};
pub use runner::{run_scripts, LogEntry, RunError, RunOptions, RunOutcome, TransportMode};
pub use script::{parse_script, serialize_script, Action, ScriptError, ScriptedProgram};
