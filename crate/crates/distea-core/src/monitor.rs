//! In-process probe runtime.
//!
//! Programs under analysis (or the simulator on their behalf) call the
//! probes on method entry, return, and returned-into. The table keeps the
//! two key timestamps per method — first entry, last return-like event —
//! and can dump a [`ProcessTrace`] once the process is quiescent.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::clock::ClockCell;
use crate::model::{
    InternalEvent, InternalEventKind, LamportClock, MethodId, MethodRecord, ModelError, ProcessId,
    ProcessTrace,
};
use crate::store;

/// Probe and dump failures.
#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{kind:?} probe for {method} without a prior entry (mis-instrumented program)")]
    MissingEntry {
        method: MethodId,
        kind: InternalEventKind,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("trace dump failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
struct Row {
    first_entry: LamportClock,
    last_return: Option<LamportClock>,
}

#[derive(Debug)]
struct Inner {
    rows: HashMap<MethodId, Row>,
    oracle_log: Option<Vec<InternalEvent>>,
}

/// Per-process monitor: the method table, the process clock, and an
/// optional full event log for oracle checks.
///
/// Probes may be called from any thread of the process; each probe's
/// stamp-and-record update is atomic as one unit.
#[derive(Debug)]
pub struct MonitorTable {
    process: ProcessId,
    cell: Arc<ClockCell>,
    inner: Mutex<Inner>,
}

impl MonitorTable {
    pub fn new(process: ProcessId, oracle_mode: bool) -> Self {
        let cell = Arc::new(ClockCell::new(process.clone()));
        MonitorTable {
            process,
            cell,
            inner: Mutex::new(Inner {
                rows: HashMap::new(),
                oracle_log: oracle_mode.then(Vec::new),
            }),
        }
    }

    pub fn process(&self) -> &ProcessId {
        &self.process
    }

    /// The process clock, shared with the transport layer so sends and
    /// receives merge into the same counter the probes stamp from.
    pub fn cell(&self) -> &Arc<ClockCell> {
        &self.cell
    }

    fn record(
        &self,
        method: MethodId,
        kind: InternalEventKind,
    ) -> Result<InternalEvent, TraceError> {
        let mut inner = self.inner.lock().unwrap();
        if kind.is_return_like() && !inner.rows.contains_key(&method) {
            return Err(TraceError::MissingEntry { method, kind });
        }
        let timestamp = self.cell.stamp_event();
        match kind {
            InternalEventKind::Entry => {
                inner.rows.entry(method.clone()).or_insert(Row {
                    first_entry: timestamp,
                    last_return: None,
                });
            }
            InternalEventKind::Return | InternalEventKind::ReturnedInto => {
                inner
                    .rows
                    .get_mut(&method)
                    .expect("checked above")
                    .last_return = Some(timestamp);
            }
        }
        let event = InternalEvent {
            method,
            kind,
            timestamp,
            process: self.process.clone(),
        };
        if let Some(log) = inner.oracle_log.as_mut() {
            log.push(event.clone());
        }
        Ok(event)
    }

    /// Method entry probe. The first entry of a method fixes its
    /// `first_entry` timestamp; later entries only advance the clock.
    pub fn on_entry(&self, method: MethodId) -> Result<InternalEvent, TraceError> {
        self.record(method, InternalEventKind::Entry)
    }

    /// Method return probe. Overwrites the method's `last_return`.
    pub fn on_return(&self, method: MethodId) -> Result<InternalEvent, TraceError> {
        self.record(method, InternalEventKind::Return)
    }

    /// Returned-into probe: control came back into `method` after a call.
    /// Identical to [`MonitorTable::on_return`] except for the event kind
    /// kept in the oracle log.
    pub fn on_returned_into(&self, method: MethodId) -> Result<InternalEvent, TraceError> {
        self.record(method, InternalEventKind::ReturnedInto)
    }

    /// Snapshot the table as a [`ProcessTrace`]. Methods entered but not
    /// yet returned from carry no complete record and are omitted, the
    /// same rule the full-sequence compression applies.
    ///
    /// Callers must ensure no probe runs concurrently.
    pub fn snapshot(&self) -> Result<ProcessTrace, TraceError> {
        let inner = self.inner.lock().unwrap();
        let mut records = std::collections::BTreeMap::new();
        for (method, row) in &inner.rows {
            if let Some(last) = row.last_return {
                records.insert(
                    method.clone(),
                    MethodRecord::new(method.clone(), row.first_entry, last)?,
                );
            }
        }
        Ok(ProcessTrace::new(
            self.process.clone(),
            records,
            inner.oracle_log.clone(),
        )?)
    }

    /// Serialize the current table to `sink` in the trace file format.
    pub fn dump_trace<W: Write>(&self, sink: &mut W) -> Result<(), TraceError> {
        let trace = self.snapshot()?;
        sink.write_all(&store::serialize_trace(&trace))?;
        Ok(())
    }
}
