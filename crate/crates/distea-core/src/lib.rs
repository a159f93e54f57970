//! Dynamic impact analysis for multi-process, message-passing programs.
//!
//! The toolkit records method-execution events under per-process Lamport
//! clocks, piggybacks those clocks on socket messages to preserve
//! cross-process happens-before, merges per-process traces, and answers
//! method-level impact queries within and across process boundaries.
//!
//! Modules, bottom to top:
//!
//! * [`model`] — shared domain types.
//! * [`clock`] — the per-process clock discipline and the piggyback wire
//!   format.
//! * [`monitor`] — explicit entry/return/returned-into probes and the
//!   two-timestamp method table.
//! * [`transport`] — socket wrappers that frame every message with the
//!   sender's clock.
//! * [`store`] — the trace file format and corpus merging.
//! * [`impact`] — execute-after impact queries, the coverage baseline,
//!   and effectiveness reporting.
//! * [`sim`] — scripted multi-process runs, a deterministic in-memory
//!   scheduler, a TCP runner, and the brute-force happens-before oracle
//!   used to audit everything above.

pub mod clock;
pub mod impact;
pub mod model;
pub mod monitor;
pub mod sim;
pub mod store;
pub mod transport;
