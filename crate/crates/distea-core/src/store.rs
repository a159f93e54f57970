//! On-disk trace format, gathering, and merging.
//!
//! The trace file format is a public, versioned contract:
//!
//! ```text
//! distea-trace v1
//! process <process name>
//! <method>\t<first entry>\t<last return>       (one line per record)
//! #events                                      (optional oracle section)
//! <method>\t<E|X|I>\t<timestamp>               (one line per event)
//! ```
//!
//! Records are written in ascending `first entry` order, events in program
//! order, so serialization is deterministic and files are diffable.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::{
    compress_sequence, InternalEvent, InternalEventKind, LamportClock, MethodId, MethodRecord,
    ModelError, ProcessId, ProcessTrace,
};

const TRACE_MAGIC: &str = "distea-trace v1";

/// Errors from parsing, loading, or merging traces.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: ModelError,
    },
    #[error("trace file is not valid UTF-8")]
    NotText,
    #[error("duplicate process {0} in merge input")]
    DuplicateProcess(ProcessId),
    #[error("merge needs at least one trace")]
    EmptyMerge,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn parse_err(line: usize, message: impl Into<String>) -> StoreError {
    StoreError::Parse {
        line,
        message: message.into(),
    }
}

/// Serialize a trace to the v1 format. Deterministic: equal traces yield
/// identical bytes.
pub fn serialize_trace(trace: &ProcessTrace) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(TRACE_MAGIC);
    out.push('\n');
    out.push_str("process ");
    out.push_str(trace.process().as_str());
    out.push('\n');
    let mut records: Vec<&MethodRecord> = trace.records().values().collect();
    records.sort_by_key(|r| r.first_entry());
    for rec in records {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            rec.method(),
            rec.first_entry(),
            rec.last_return()
        ));
    }
    if let Some(events) = trace.full_sequence() {
        out.push_str("#events\n");
        for ev in events {
            let kind = match ev.kind {
                InternalEventKind::Entry => "E",
                InternalEventKind::Return => "X",
                InternalEventKind::ReturnedInto => "I",
            };
            out.push_str(&format!("{}\t{}\t{}\n", ev.method, kind, ev.timestamp));
        }
    }
    out.into_bytes()
}

/// Parse a v1 trace file. Errors carry the 1-based line number.
pub fn parse_trace(bytes: &[u8]) -> Result<ProcessTrace, StoreError> {
    let text = std::str::from_utf8(bytes).map_err(|_| StoreError::NotText)?;
    let mut lines = text.lines().enumerate();

    let (_, magic) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    if magic != TRACE_MAGIC {
        return Err(parse_err(1, format!("expected `{TRACE_MAGIC}`, got {magic:?}")));
    }
    let (_, proc_line) = lines
        .next()
        .ok_or_else(|| parse_err(2, "missing `process <name>` line"))?;
    let name = proc_line
        .strip_prefix("process ")
        .ok_or_else(|| parse_err(2, "missing `process <name>` line"))?;
    let process =
        ProcessId::new(name).map_err(|e| StoreError::Invalid { line: 2, source: e })?;

    let mut records: BTreeMap<MethodId, MethodRecord> = BTreeMap::new();
    let mut events: Option<Vec<InternalEvent>> = None;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        if line == "#events" {
            if events.is_some() {
                return Err(parse_err(lineno, "duplicate #events section"));
            }
            events = Some(Vec::new());
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                lineno,
                format!("expected 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        let method = MethodId::new(fields[0])
            .map_err(|e| StoreError::Invalid { line: lineno, source: e })?;
        match events.as_mut() {
            None => {
                let first: u64 = fields[1]
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad timestamp {:?}", fields[1])))?;
                let last: u64 = fields[2]
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad timestamp {:?}", fields[2])))?;
                let record =
                    MethodRecord::new(method.clone(), LamportClock(first), LamportClock(last))
                        .map_err(|e| StoreError::Invalid { line: lineno, source: e })?;
                if records.insert(method.clone(), record).is_some() {
                    return Err(parse_err(lineno, format!("duplicate method row {method}")));
                }
            }
            Some(seq) => {
                let kind = match fields[1] {
                    "E" => InternalEventKind::Entry,
                    "X" => InternalEventKind::Return,
                    "I" => InternalEventKind::ReturnedInto,
                    other => {
                        return Err(parse_err(lineno, format!("bad event kind {other:?}")))
                    }
                };
                let ts: u64 = fields[2]
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad timestamp {:?}", fields[2])))?;
                seq.push(InternalEvent {
                    method,
                    kind,
                    timestamp: LamportClock(ts),
                    process: process.clone(),
                });
            }
        }
    }
    ProcessTrace::new(process, records, events)
        .map_err(|e| StoreError::Invalid { line: 0, source: e })
}

/// A merged, immutable analysis corpus: one trace per process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceCorpus {
    run_id: String,
    traces: BTreeMap<ProcessId, ProcessTrace>,
}

impl TraceCorpus {
    /// Merge per-process traces into one corpus. Lamport values are kept
    /// as recorded; nothing is rewritten.
    pub fn merge(traces: Vec<ProcessTrace>) -> Result<Self, StoreError> {
        Self::merge_named("merged", traces)
    }

    pub fn merge_named(
        run_id: impl Into<String>,
        traces: Vec<ProcessTrace>,
    ) -> Result<Self, StoreError> {
        if traces.is_empty() {
            return Err(StoreError::EmptyMerge);
        }
        let mut map = BTreeMap::new();
        for trace in traces {
            let pid = trace.process().clone();
            if map.insert(pid.clone(), trace).is_some() {
                return Err(StoreError::DuplicateProcess(pid));
            }
        }
        Ok(TraceCorpus {
            run_id: run_id.into(),
            traces: map,
        })
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn processes(&self) -> impl Iterator<Item = &ProcessId> {
        self.traces.keys()
    }

    pub fn traces(&self) -> impl Iterator<Item = &ProcessTrace> {
        self.traces.values()
    }

    pub fn trace(&self, process: &ProcessId) -> Option<&ProcessTrace> {
        self.traces.get(process)
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// All distinct method names holding a record anywhere in the corpus,
    /// i.e. every method that can be queried.
    pub fn methods(&self) -> impl Iterator<Item = &MethodId> {
        let mut seen = std::collections::BTreeSet::new();
        for trace in self.traces.values() {
            for method in trace.records().keys() {
                seen.insert(method);
            }
        }
        seen.into_iter()
    }

    pub fn record_count(&self) -> usize {
        self.traces.values().map(|t| t.records().len()).sum()
    }

    /// True when the full event sequence is present for every process.
    pub fn has_full_sequences(&self) -> bool {
        self.traces.values().all(|t| t.full_sequence().is_some())
    }
}

/// Read one trace file.
pub fn read_trace_file(path: &Path) -> Result<ProcessTrace, StoreError> {
    let bytes = fs::read(path).map_err(|e| StoreError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_trace(&bytes)
}

/// Expand trace arguments: files are taken as-is, directories are scanned
/// for `*.trace` entries in name order.
pub fn gather_trace_paths(args: &[PathBuf]) -> Result<Vec<PathBuf>, StoreError> {
    let mut out = Vec::new();
    for arg in args {
        if arg.is_dir() {
            let mut found = Vec::new();
            let entries = fs::read_dir(arg).map_err(|e| StoreError::Io {
                path: arg.clone(),
                source: e,
            })?;
            for entry in entries {
                let entry = entry.map_err(|e| StoreError::Io {
                    path: arg.clone(),
                    source: e,
                })?;
                let path = entry.path();
                if path.extension().is_some_and(|e| e == "trace") {
                    found.push(path);
                }
            }
            found.sort();
            out.extend(found);
        } else {
            out.push(arg.clone());
        }
    }
    Ok(out)
}

/// Load and merge trace files (or directories of them) into a corpus.
pub fn load_corpus(run_id: &str, args: &[PathBuf]) -> Result<TraceCorpus, StoreError> {
    let paths = gather_trace_paths(args)?;
    let mut traces = Vec::new();
    for path in &paths {
        traces.push(read_trace_file(path)?);
    }
    TraceCorpus::merge_named(run_id, traces)
}

/// Verify the two-timestamp compression claim for one trace: its records
/// must equal the compression of its full sequence. Traces without an
/// oracle section pass vacuously.
pub fn verify_compression(trace: &ProcessTrace) -> Result<(), ModelError> {
    if let Some(events) = trace.full_sequence() {
        let compressed = compress_sequence(events)?;
        if &compressed != trace.records() {
            let method = trace
                .records()
                .keys()
                .find(|m| compressed.get(*m) != trace.records().get(*m))
                .or_else(|| compressed.keys().find(|m| !trace.records().contains_key(*m)))
                .cloned()
                .unwrap_or_else(|| MethodId::new("?").unwrap());
            return Err(ModelError::CompressionMismatch { method });
        }
    }
    Ok(())
}
