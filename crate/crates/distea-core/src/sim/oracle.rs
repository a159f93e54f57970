//! Brute-force happens-before oracle.
//!
//! Builds the event graph of a run — per-process serialized order plus
//! send-to-receive edges — and answers impact queries by graph
//! reachability alone, no clock values involved. Deliberately shares no
//! code with the clock-comparison engine it audits.
//!
//! Also hosts the independent recomputation of impact sets from full
//! event sequences, used to check that the two-timestamp compression
//! loses nothing.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use thiserror::Error;

use crate::model::{ImpactSet, InternalEventKind, LamportClock, MethodId, ProcessId};
use crate::sim::runner::LogEntry;
use crate::store::TraceCorpus;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("recv of frame {index} on {conn} has no matching send")]
    UnmatchedRecv { conn: String, index: u64 },
    #[error("frame {index} on {conn} was sent twice")]
    DuplicateSend { conn: String, index: u64 },
    #[error("event graph has a cycle; the logs are not a valid execution")]
    Cycle,
    #[error("query {0} does not appear in the recorded events")]
    UnknownQuery(MethodId),
    #[error("query {0} never entered in process {1}")]
    QueryNotInProcess(MethodId, ProcessId),
}

/// A pair of events the clock condition orders but the stamps do not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClockViolation {
    pub earlier: (ProcessId, MethodId, LamportClock),
    pub later: (ProcessId, MethodId, LamportClock),
}

#[derive(Debug, Clone)]
enum Node {
    Internal {
        process: ProcessId,
        method: MethodId,
        kind: InternalEventKind,
        stamp: LamportClock,
    },
    Comm,
}

/// The happens-before relation of one run, closed transitively on demand.
#[derive(Debug)]
pub struct HappensBeforeOracle {
    nodes: Vec<Node>,
    successors: Vec<Vec<usize>>,
    /// First entry node of each (method, process) pair.
    first_entry: BTreeMap<(MethodId, ProcessId), usize>,
    topo: Vec<usize>,
}

impl HappensBeforeOracle {
    /// Build the graph from per-process run logs: consecutive log entries
    /// of one process are ordered, and send `k` on a connection direction
    /// precedes the receive that consumed its header.
    pub fn build(logs: &BTreeMap<ProcessId, Vec<LogEntry>>) -> Result<Self, OracleError> {
        let mut nodes = Vec::new();
        let mut successors: Vec<Vec<usize>> = Vec::new();
        let mut first_entry = BTreeMap::new();
        let mut sends: HashMap<(String, u64), usize> = HashMap::new();
        let mut recvs: Vec<((String, u64), usize)> = Vec::new();

        for (process, log) in logs {
            let mut prev: Option<usize> = None;
            for entry in log {
                let id = nodes.len();
                match entry {
                    LogEntry::Internal(ev) => {
                        if ev.kind == InternalEventKind::Entry {
                            first_entry
                                .entry((ev.method.clone(), process.clone()))
                                .or_insert(id);
                        }
                        nodes.push(Node::Internal {
                            process: process.clone(),
                            method: ev.method.clone(),
                            kind: ev.kind,
                            stamp: ev.timestamp,
                        });
                    }
                    LogEntry::Send { conn, index } => {
                        nodes.push(Node::Comm);
                        if sends.insert((conn.clone(), *index), id).is_some() {
                            return Err(OracleError::DuplicateSend {
                                conn: conn.clone(),
                                index: *index,
                            });
                        }
                    }
                    LogEntry::Recv { conn, index } => {
                        nodes.push(Node::Comm);
                        recvs.push(((conn.clone(), *index), id));
                    }
                }
                successors.push(Vec::new());
                if let Some(p) = prev {
                    successors[p].push(id);
                }
                prev = Some(id);
            }
        }
        for (key, recv_id) in recvs {
            let send_id = sends
                .get(&key)
                .copied()
                .ok_or_else(|| OracleError::UnmatchedRecv {
                    conn: key.0.clone(),
                    index: key.1,
                })?;
            successors[send_id].push(recv_id);
        }

        let topo = topological_order(&successors).ok_or(OracleError::Cycle)?;
        Ok(HappensBeforeOracle {
            nodes,
            successors,
            first_entry,
            topo,
        })
    }

    fn reachable_from(&self, starts: &[usize]) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for &s in starts {
            for &next in &self.successors[s] {
                if !seen[next] {
                    seen[next] = true;
                    queue.push_back(next);
                }
            }
        }
        while let Some(v) = queue.pop_front() {
            for &next in &self.successors[v] {
                if !seen[next] {
                    seen[next] = true;
                    queue.push_back(next);
                }
            }
        }
        seen
    }

    fn query_starts(&self, query: &MethodId) -> Result<Vec<usize>, OracleError> {
        let starts: Vec<usize> = self
            .first_entry
            .iter()
            .filter(|((m, _), _)| m == query)
            .map(|(_, &id)| id)
            .collect();
        if starts.is_empty() {
            return Err(OracleError::UnknownQuery(query.clone()));
        }
        Ok(starts)
    }

    /// True impact set of `query`: methods with a return or returned-into
    /// event strictly after some first entry of the query, plus the query
    /// itself. Pure reachability.
    pub fn impact_set(&self, query: &MethodId) -> Result<BTreeSet<MethodId>, OracleError> {
        let starts = self.query_starts(query)?;
        let seen = self.reachable_from(&starts);
        let mut out: BTreeSet<MethodId> = BTreeSet::new();
        out.insert(query.clone());
        for (id, node) in self.nodes.iter().enumerate() {
            if !seen[id] {
                continue;
            }
            if let Node::Internal { method, kind, .. } = node {
                if kind.is_return_like() {
                    out.insert(method.clone());
                }
            }
        }
        Ok(out)
    }

    /// [`HappensBeforeOracle::impact_set`] restricted to one process:
    /// the start is the query's first entry there and only that process's
    /// return-like events count.
    pub fn local_impact_set(
        &self,
        query: &MethodId,
        process: &ProcessId,
    ) -> Result<BTreeSet<MethodId>, OracleError> {
        let start = *self
            .first_entry
            .get(&(query.clone(), process.clone()))
            .ok_or_else(|| OracleError::QueryNotInProcess(query.clone(), process.clone()))?;
        let seen = self.reachable_from(&[start]);
        let mut out: BTreeSet<MethodId> = BTreeSet::new();
        out.insert(query.clone());
        for (id, node) in self.nodes.iter().enumerate() {
            if !seen[id] {
                continue;
            }
            if let Node::Internal {
                process: p,
                method,
                kind,
                ..
            } = node
            {
                if p == process && kind.is_return_like() {
                    out.insert(method.clone());
                }
            }
        }
        Ok(out)
    }

    /// All methods with at least one first entry, i.e. every valid query.
    pub fn executed_methods(&self) -> BTreeSet<MethodId> {
        self.first_entry.keys().map(|(m, _)| m.clone()).collect()
    }

    /// Processes in which `query` entered at least once.
    pub fn query_processes(&self, query: &MethodId) -> Vec<ProcessId> {
        self.first_entry
            .keys()
            .filter(|(m, _)| m == query)
            .map(|(_, p)| p.clone())
            .collect()
    }

    /// Verify the clock condition over the whole transitive closure: for
    /// every pair of internal events `a` happens-before `b`, the stamp of
    /// `a` is strictly below the stamp of `b`.
    ///
    /// Checked completely in one pass: `!(a < b)` somewhere is equivalent
    /// to some internal node whose reachable minimum stamp does not
    /// exceed its own stamp.
    pub fn check_clock_condition(&self) -> Result<(), ClockViolation> {
        // min_reach[v] = minimum stamp among internal nodes in v's strict
        // future, including v itself when internal; argmin remembers the
        // witness node
        let mut min_reach: Vec<(u64, usize)> = vec![(u64::MAX, usize::MAX); self.nodes.len()];
        for &v in self.topo.iter().rev() {
            let mut best = (u64::MAX, usize::MAX);
            for &s in &self.successors[v] {
                if min_reach[s] < best {
                    best = min_reach[s];
                }
            }
            if let Node::Internal { stamp, .. } = &self.nodes[v] {
                // check v against its strict future before folding v in
                if best.0 <= stamp.value() {
                    return Err(self.violation(v, best.1));
                }
                if (stamp.value(), v) < best {
                    best = (stamp.value(), v);
                }
            }
            min_reach[v] = best;
        }
        Ok(())
    }

    fn violation(&self, earlier: usize, later: usize) -> ClockViolation {
        let pick = |id: usize| match &self.nodes[id] {
            Node::Internal {
                process,
                method,
                stamp,
                ..
            } => (process.clone(), method.clone(), *stamp),
            Node::Comm => unreachable!("violations are between internal events"),
        };
        ClockViolation {
            earlier: pick(earlier),
            later: pick(later),
        }
    }

    /// Number of graph nodes (internal plus communication events).
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

fn topological_order(successors: &[Vec<usize>]) -> Option<Vec<usize>> {
    let mut indegree = vec![0usize; successors.len()];
    for succs in successors {
        for &s in succs {
            indegree[s] += 1;
        }
    }
    let mut queue: VecDeque<usize> = indegree
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == 0)
        .map(|(i, _)| i)
        .collect();
    let mut order = Vec::with_capacity(successors.len());
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &s in &successors[v] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                queue.push_back(s);
            }
        }
    }
    (order.len() == successors.len()).then_some(order)
}

/// Recompute an impact set directly from full event sequences, mirroring
/// the record-based engine but reading raw events: the anchor is the
/// stamp of the query's earliest first-entry event, membership needs a
/// return-like event stamped strictly later. Returns `None` when the
/// query has no entry event or some trace lacks its sequence.
pub fn sequence_impact_set(corpus: &TraceCorpus, query: &MethodId) -> Option<ImpactSet> {
    if !corpus.has_full_sequences() {
        return None;
    }
    let mut anchor: Option<(LamportClock, ProcessId)> = None;
    for trace in corpus.traces() {
        let first = trace
            .full_sequence()
            .unwrap()
            .iter()
            .find(|ev| ev.kind == InternalEventKind::Entry && &ev.method == query);
        if let Some(ev) = first {
            let candidate = (ev.timestamp, trace.process().clone());
            match &anchor {
                Some(best) if *best <= candidate => {}
                _ => anchor = Some(candidate),
            }
        }
    }
    let (q, local_process) = anchor?;
    let mut local = BTreeSet::new();
    let mut remote = BTreeSet::new();
    for trace in corpus.traces() {
        let target = if trace.process() == &local_process {
            &mut local
        } else {
            &mut remote
        };
        for ev in trace.full_sequence().unwrap() {
            if ev.kind.is_return_like() && ev.timestamp > q {
                target.insert(ev.method.clone());
            }
        }
    }
    Some(ImpactSet::from_parts(
        query.clone(),
        local,
        remote,
        local_process,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InternalEvent;

    fn pid(name: &str) -> ProcessId {
        ProcessId::new(name).unwrap()
    }

    fn mid(name: &str) -> MethodId {
        MethodId::new(name).unwrap()
    }

    fn internal(process: &str, method: &str, kind: InternalEventKind, ts: u64) -> LogEntry {
        LogEntry::Internal(InternalEvent {
            method: mid(method),
            kind,
            timestamp: LamportClock(ts),
            process: pid(process),
        })
    }

    /// Logs matching the worked two-process exchange, stamps included.
    fn worked_example_logs() -> BTreeMap<ProcessId, Vec<LogEntry>> {
        use InternalEventKind::*;
        let server = vec![
            internal("S", "S::main", Entry, 0),
            internal("S", "S::init", Entry, 1),
            internal("S", "S::init", ReturnedInto, 2),
            internal("S", "S::init", Return, 3),
            internal("S", "S::main", ReturnedInto, 4),
            internal("S", "S::serve", Entry, 5),
            LogEntry::Recv {
                conn: "conn0".into(),
                index: 0,
            },
            internal("S", "S::getMax", Entry, 10),
            internal("S", "S::getMax", ReturnedInto, 11),
            internal("S", "S::getMax", Return, 12),
            internal("S", "S::serve", ReturnedInto, 13),
            LogEntry::Send {
                conn: "conn1".into(),
                index: 0,
            },
            internal("S", "S::serve", Return, 14),
            internal("S", "S::main", ReturnedInto, 15),
            internal("S", "S::main", Return, 16),
        ];
        let client = vec![
            internal("C", "C::main", Entry, 0),
            internal("C", "C::init", Entry, 1),
            internal("C", "C::init", ReturnedInto, 2),
            internal("C", "C::init", Return, 3),
            internal("C", "C::main", ReturnedInto, 4),
            internal("C", "C::compute", Entry, 5),
            internal("C", "C::shuffle", Entry, 6),
            internal("C", "C::shuffle", ReturnedInto, 7),
            internal("C", "C::shuffle", Return, 8),
            internal("C", "C::compute", ReturnedInto, 9),
            LogEntry::Send {
                conn: "conn0".into(),
                index: 0,
            },
            LogEntry::Recv {
                conn: "conn1".into(),
                index: 0,
            },
            internal("C", "C::compute", Return, 14),
            internal("C", "C::main", ReturnedInto, 15),
            internal("C", "C::main", Return, 16),
        ];
        BTreeMap::from([(pid("S"), server), (pid("C"), client)])
    }

    #[test]
    fn worked_example_get_max_impact_set() {
        let oracle = HappensBeforeOracle::build(&worked_example_logs()).unwrap();
        let set = oracle.impact_set(&mid("S::getMax")).unwrap();
        let names: Vec<&str> = set.iter().map(|m| m.as_str()).collect();
        assert_eq!(
            names,
            vec!["C::compute", "C::main", "S::getMax", "S::main", "S::serve"]
        );
    }

    #[test]
    fn local_restriction_of_worked_example() {
        let oracle = HappensBeforeOracle::build(&worked_example_logs()).unwrap();
        let set = oracle.local_impact_set(&mid("S::getMax"), &pid("S")).unwrap();
        let names: Vec<&str> = set.iter().map(|m| m.as_str()).collect();
        assert_eq!(names, vec!["S::getMax", "S::main", "S::serve"]);
    }

    #[test]
    fn last_method_of_lone_process_impacts_only_itself() {
        use InternalEventKind::*;
        let logs = BTreeMap::from([(
            pid("P"),
            vec![
                internal("P", "P::a", Entry, 0),
                internal("P", "P::b", Entry, 1),
                internal("P", "P::b", Return, 2),
                internal("P", "P::a", ReturnedInto, 3),
                internal("P", "P::a", Return, 4),
                internal("P", "P::last", Entry, 5),
            ],
        )]);
        let oracle = HappensBeforeOracle::build(&logs).unwrap();
        let set = oracle.impact_set(&mid("P::last")).unwrap();
        assert_eq!(set.len(), 1);
        assert!(set.contains(&mid("P::last")));
    }

    #[test]
    fn clock_condition_holds_on_worked_example() {
        let oracle = HappensBeforeOracle::build(&worked_example_logs()).unwrap();
        assert_eq!(oracle.check_clock_condition(), Ok(()));
    }

    #[test]
    fn clock_condition_violation_is_caught() {
        use InternalEventKind::*;
        // B's post-receive event is stamped too low
        let logs = BTreeMap::from([
            (
                pid("A"),
                vec![
                    internal("A", "A::m", Entry, 5),
                    LogEntry::Send {
                        conn: "c".into(),
                        index: 0,
                    },
                    internal("A", "A::m", Return, 6),
                ],
            ),
            (
                pid("B"),
                vec![
                    LogEntry::Recv {
                        conn: "c".into(),
                        index: 0,
                    },
                    internal("B", "B::m", Entry, 4),
                    internal("B", "B::m", Return, 5),
                ],
            ),
        ]);
        let oracle = HappensBeforeOracle::build(&logs).unwrap();
        let violation = oracle.check_clock_condition().unwrap_err();
        assert_eq!(violation.earlier.2, LamportClock(5));
        assert_eq!(violation.later.2, LamportClock(4));
    }

    #[test]
    fn unmatched_recv_is_rejected() {
        let logs = BTreeMap::from([(
            pid("B"),
            vec![LogEntry::Recv {
                conn: "c".into(),
                index: 3,
            }],
        )]);
        assert_eq!(
            HappensBeforeOracle::build(&logs).unwrap_err(),
            OracleError::UnmatchedRecv {
                conn: "c".into(),
                index: 3
            }
        );
    }

    #[test]
    fn unknown_query_is_an_error() {
        let oracle = HappensBeforeOracle::build(&worked_example_logs()).unwrap();
        assert!(matches!(
            oracle.impact_set(&mid("S::ghost")),
            Err(OracleError::UnknownQuery(_))
        ));
    }
}
