//! Domain types shared by the clock protocol, probe runtime, trace store,
//! and impact engine.
//!
//! Everything here is an immutable value once constructed; constructors
//! validate the invariants so downstream code can rely on them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

/// Errors raised by constructors in this module.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("identifier must be non-empty")]
    EmptyIdentifier,
    #[error("identifier {0:?} contains a tab or line break")]
    UnprintableIdentifier(String),
    #[error("method {method}: last return {last_return} must be after first entry {first_entry}")]
    RecordNotOrdered {
        method: MethodId,
        first_entry: u64,
        last_return: u64,
    },
    #[error("event sequence for {process}: timestamps not strictly increasing at index {index}")]
    SequenceNotIncreasing { process: ProcessId, index: usize },
    #[error("event sequence for {process}: event at index {index} belongs to {found}")]
    SequenceWrongProcess {
        process: ProcessId,
        index: usize,
        found: ProcessId,
    },
    #[error("method {method}: first event in sequence is {kind:?}, not an entry")]
    SequenceStartsWithoutEntry { method: MethodId, kind: InternalEventKind },
    #[error("records do not match the compressed event sequence (method {method})")]
    CompressionMismatch { method: MethodId },
}

fn validate_identifier(name: &str) -> Result<(), ModelError> {
    if name.is_empty() {
        return Err(ModelError::EmptyIdentifier);
    }
    if name.contains(['\t', '\n', '\r']) {
        return Err(ModelError::UnprintableIdentifier(name.to_string()));
    }
    Ok(())
}

/// Identity of one process in a run. Unique within a merged analysis.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcessId(String);

impl ProcessId {
    pub fn new(name: impl Into<String>) -> Result<Self, ModelError> {
        let name = name.into();
        validate_identifier(&name)?;
        Ok(ProcessId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Qualified method name, e.g. `S::getMax`. The same name may appear in
/// several processes when they share code.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MethodId(String);

impl MethodId {
    pub fn new(name: impl Into<String>) -> Result<Self, ModelError> {
        let name = name.into();
        validate_identifier(&name)?;
        Ok(MethodId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A Lamport timestamp: a unitless logical time, monotonically
/// non-decreasing within a process.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LamportClock(pub u64);

impl LamportClock {
    pub fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Display for LamportClock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The three kinds of method-execution events observed inside a process.
///
/// `Return` and `ReturnedInto` are distinguished in recording provenance
/// only; the impact rule treats them identically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InternalEventKind {
    Entry,
    Return,
    ReturnedInto,
}

impl InternalEventKind {
    /// True for the two kinds that witness "executed after": a method's
    /// return or a control return into it.
    pub fn is_return_like(self) -> bool {
        matches!(self, InternalEventKind::Return | InternalEventKind::ReturnedInto)
    }
}

/// One method-execution event with its stamp.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InternalEvent {
    pub method: MethodId,
    pub kind: InternalEventKind,
    pub timestamp: LamportClock,
    pub process: ProcessId,
}

/// Direction of a message transfer between two processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommunicationEventKind {
    Send,
    Receive,
}

/// The two-timestamp compression of a method's event history in one
/// process: first entry and last return/returned-into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodRecord {
    method: MethodId,
    first_entry: LamportClock,
    last_return: LamportClock,
}

impl MethodRecord {
    pub fn new(
        method: MethodId,
        first_entry: LamportClock,
        last_return: LamportClock,
    ) -> Result<Self, ModelError> {
        if last_return <= first_entry {
            return Err(ModelError::RecordNotOrdered {
                method,
                first_entry: first_entry.value(),
                last_return: last_return.value(),
            });
        }
        Ok(MethodRecord {
            method,
            first_entry,
            last_return,
        })
    }

    pub fn method(&self) -> &MethodId {
        &self.method
    }

    pub fn first_entry(&self) -> LamportClock {
        self.first_entry
    }

    pub fn last_return(&self) -> LamportClock {
        self.last_return
    }
}

/// Compress a per-process event sequence to method records: first `Entry`
/// stamp and last `Return`/`ReturnedInto` stamp per method.
///
/// A method whose sequence holds an entry but no return-like event yet
/// produces no record; it never witnesses "executed after" and cannot be
/// compared by the impact rule.
pub fn compress_sequence(
    events: &[InternalEvent],
) -> Result<BTreeMap<MethodId, MethodRecord>, ModelError> {
    let mut first_entry: BTreeMap<MethodId, LamportClock> = BTreeMap::new();
    let mut last_return: BTreeMap<MethodId, LamportClock> = BTreeMap::new();
    for ev in events {
        match ev.kind {
            InternalEventKind::Entry => {
                first_entry.entry(ev.method.clone()).or_insert(ev.timestamp);
            }
            InternalEventKind::Return | InternalEventKind::ReturnedInto => {
                if !first_entry.contains_key(&ev.method) {
                    return Err(ModelError::SequenceStartsWithoutEntry {
                        method: ev.method.clone(),
                        kind: ev.kind,
                    });
                }
                last_return.insert(ev.method.clone(), ev.timestamp);
            }
        }
    }
    let mut records = BTreeMap::new();
    for (method, last) in last_return {
        let first = first_entry[&method];
        records.insert(
            method.clone(),
            MethodRecord::new(method, first, last)?,
        );
    }
    Ok(records)
}

/// One process's recorded execution: its method records and, in oracle
/// mode, the full internal-event sequence the records compress.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessTrace {
    process: ProcessId,
    records: BTreeMap<MethodId, MethodRecord>,
    full_sequence: Option<Vec<InternalEvent>>,
}

impl ProcessTrace {
    /// Build a trace, checking that a present full sequence is strictly
    /// increasing, belongs to `process`, and compresses exactly to
    /// `records`.
    pub fn new(
        process: ProcessId,
        records: BTreeMap<MethodId, MethodRecord>,
        full_sequence: Option<Vec<InternalEvent>>,
    ) -> Result<Self, ModelError> {
        if let Some(events) = &full_sequence {
            for (i, ev) in events.iter().enumerate() {
                if ev.process != process {
                    return Err(ModelError::SequenceWrongProcess {
                        process,
                        index: i,
                        found: ev.process.clone(),
                    });
                }
                if i > 0 && events[i - 1].timestamp >= ev.timestamp {
                    return Err(ModelError::SequenceNotIncreasing { process, index: i });
                }
            }
            let compressed = compress_sequence(events)?;
            if compressed != records {
                let method = compressed
                    .iter()
                    .find(|(m, r)| records.get(m) != Some(r))
                    .map(|(m, _)| m.clone())
                    .or_else(|| records.keys().find(|m| !compressed.contains_key(m)).cloned())
                    .unwrap_or_else(|| MethodId("?".to_string()));
                return Err(ModelError::CompressionMismatch { method });
            }
        }
        Ok(ProcessTrace {
            process,
            records,
            full_sequence,
        })
    }

    pub fn process(&self) -> &ProcessId {
        &self.process
    }

    pub fn records(&self) -> &BTreeMap<MethodId, MethodRecord> {
        &self.records
    }

    pub fn record(&self, method: &MethodId) -> Option<&MethodRecord> {
        self.records.get(method)
    }

    pub fn full_sequence(&self) -> Option<&[InternalEvent]> {
        self.full_sequence.as_deref()
    }

    /// Drop the oracle section, keeping only the compressed records.
    pub fn without_sequence(&self) -> ProcessTrace {
        ProcessTrace {
            process: self.process.clone(),
            records: self.records.clone(),
            full_sequence: None,
        }
    }
}

/// Result of one impact query, decomposed by process boundary.
///
/// `all` is the union of `local` and `remote`; `common` is their
/// intersection. `local_process` is the process where the query first
/// executed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImpactSet {
    query: MethodId,
    all: BTreeSet<MethodId>,
    local: BTreeSet<MethodId>,
    remote: BTreeSet<MethodId>,
    common: BTreeSet<MethodId>,
    local_process: ProcessId,
}

impl ImpactSet {
    /// Assemble from the two primary subsets; `all` and `common` are
    /// derived so the decomposition identities hold by construction.
    pub fn from_parts(
        query: MethodId,
        local: BTreeSet<MethodId>,
        remote: BTreeSet<MethodId>,
        local_process: ProcessId,
    ) -> Self {
        let all: BTreeSet<MethodId> = local.union(&remote).cloned().collect();
        let common: BTreeSet<MethodId> = local.intersection(&remote).cloned().collect();
        ImpactSet {
            query,
            all,
            local,
            remote,
            common,
            local_process,
        }
    }

    pub fn query(&self) -> &MethodId {
        &self.query
    }

    pub fn all(&self) -> &BTreeSet<MethodId> {
        &self.all
    }

    pub fn local(&self) -> &BTreeSet<MethodId> {
        &self.local
    }

    pub fn remote(&self) -> &BTreeSet<MethodId> {
        &self.remote
    }

    pub fn common(&self) -> &BTreeSet<MethodId> {
        &self.common
    }

    pub fn local_process(&self) -> &ProcessId {
        &self.local_process
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(name: &str) -> MethodId {
        MethodId::new(name).unwrap()
    }

    fn ev(method: &str, kind: InternalEventKind, ts: u64, process: &str) -> InternalEvent {
        InternalEvent {
            method: m(method),
            kind,
            timestamp: LamportClock(ts),
            process: ProcessId::new(process).unwrap(),
        }
    }

    #[test]
    fn identifiers_reject_empty_and_tabs() {
        assert_eq!(ProcessId::new(""), Err(ModelError::EmptyIdentifier));
        assert!(MethodId::new("a\tb").is_err());
        assert!(MethodId::new("S::getMax").is_ok());
    }

    #[test]
    fn record_rejects_unordered_timestamps() {
        let err = MethodRecord::new(m("S::f"), LamportClock(5), LamportClock(5));
        assert!(err.is_err());
        let err = MethodRecord::new(m("S::f"), LamportClock(5), LamportClock(4));
        assert!(err.is_err());
        assert!(MethodRecord::new(m("S::f"), LamportClock(5), LamportClock(6)).is_ok());
    }

    #[test]
    fn compression_takes_first_entry_and_last_return() {
        use InternalEventKind::*;
        let events = vec![
            ev("C::main", Entry, 0, "C"),
            ev("C::init", Entry, 1, "C"),
            ev("C::init", ReturnedInto, 2, "C"),
            ev("C::init", Return, 3, "C"),
            ev("C::main", ReturnedInto, 4, "C"),
            ev("C::main", Return, 16, "C"),
        ];
        let records = compress_sequence(&events).unwrap();
        let main = &records[&m("C::main")];
        assert_eq!(main.first_entry(), LamportClock(0));
        assert_eq!(main.last_return(), LamportClock(16));
        let init = &records[&m("C::init")];
        assert_eq!(init.first_entry(), LamportClock(1));
        assert_eq!(init.last_return(), LamportClock(3));
    }

    #[test]
    fn compression_skips_method_without_return() {
        use InternalEventKind::*;
        let events = vec![ev("S::main", Entry, 0, "S")];
        let records = compress_sequence(&events).unwrap();
        assert!(records.is_empty());
    }

    #[test]
    fn compression_rejects_return_before_entry() {
        use InternalEventKind::*;
        let events = vec![ev("S::f", Return, 0, "S")];
        assert!(compress_sequence(&events).is_err());
    }

    #[test]
    fn trace_checks_sequence_against_records() {
        use InternalEventKind::*;
        let p = ProcessId::new("S").unwrap();
        let events = vec![ev("S::f", Entry, 0, "S"), ev("S::f", Return, 1, "S")];
        let records = compress_sequence(&events).unwrap();
        assert!(ProcessTrace::new(p.clone(), records.clone(), Some(events.clone())).is_ok());

        let mut wrong = records.clone();
        wrong.insert(
            m("S::g"),
            MethodRecord::new(m("S::g"), LamportClock(7), LamportClock(9)).unwrap(),
        );
        let err = ProcessTrace::new(p.clone(), wrong, Some(events.clone()));
        assert!(matches!(err, Err(ModelError::CompressionMismatch { .. })));

        let shuffled = vec![ev("S::f", Entry, 1, "S"), ev("S::f", Return, 1, "S")];
        let err = ProcessTrace::new(p, records, Some(shuffled));
        assert!(matches!(err, Err(ModelError::SequenceNotIncreasing { .. })));
    }

    #[test]
    fn impact_set_identities_hold_by_construction() {
        let local: BTreeSet<_> = [m("S::a"), m("X::shared")].into();
        let remote: BTreeSet<_> = [m("C::b"), m("X::shared")].into();
        let set = ImpactSet::from_parts(
            m("S::a"),
            local.clone(),
            remote.clone(),
            ProcessId::new("S").unwrap(),
        );
        assert_eq!(set.all().len(), 3);
        assert_eq!(
            set.common().iter().cloned().collect::<Vec<_>>(),
            vec![m("X::shared")]
        );
        assert!(set.all().is_superset(set.local()));
        assert!(set.all().is_superset(set.remote()));
    }
}
