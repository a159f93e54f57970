//! Impact queries over a merged corpus.
//!
//! A method `m` is reported as impacted by query `c` when some process
//! recorded a return-like event of `m` strictly after `c`'s earliest
//! first entry, compared by Lamport value. Strict comparison is safe:
//! equal values in different processes are necessarily concurrent, and
//! within a process stamps are unique.
//!
//! `mcov_set` is the coverage baseline — every executed method counts as
//! impacted — against which effectiveness ratios are measured.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{ImpactSet, LamportClock, MethodId, ProcessId};
use crate::store::TraceCorpus;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("no such query: {0} never executed in the corpus")]
    NotExecuted(MethodId),
    #[error("query set must not be empty")]
    EmptyQuerySet,
    #[error("cannot union impact sets of different queries ({0} vs {1})")]
    MixedQueries(MethodId, MethodId),
}

/// Ordered set of query methods.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySet {
    methods: Vec<MethodId>,
}

impl QuerySet {
    pub fn new(methods: Vec<MethodId>) -> Result<Self, QueryError> {
        if methods.is_empty() {
            return Err(QueryError::EmptyQuerySet);
        }
        let mut seen = BTreeSet::new();
        let methods = methods
            .into_iter()
            .filter(|m| seen.insert(m.clone()))
            .collect();
        Ok(QuerySet { methods })
    }

    pub fn methods(&self) -> &[MethodId] {
        &self.methods
    }
}

/// The query's anchor: its earliest first entry across processes, and the
/// process achieving it (ties broken by smallest process name).
fn query_anchor(
    corpus: &TraceCorpus,
    query: &MethodId,
) -> Result<(LamportClock, ProcessId), QueryError> {
    let mut best: Option<(LamportClock, ProcessId)> = None;
    for trace in corpus.traces() {
        if let Some(rec) = trace.record(query) {
            let candidate = (rec.first_entry(), trace.process().clone());
            match &best {
                // traces iterate in process-name order, so `<` keeps the
                // lexicographically smallest process on ties
                Some((ts, _)) if candidate.0 >= *ts => {}
                _ => best = Some(candidate),
            }
        }
    }
    best.ok_or_else(|| QueryError::NotExecuted(query.clone()))
}

/// Execute-after impact set of `query`: methods whose last return-like
/// stamp exceeds the query's earliest first entry, split into the local
/// process and all remote ones.
pub fn impact_set(corpus: &TraceCorpus, query: &MethodId) -> Result<ImpactSet, QueryError> {
    let (q, local_process) = query_anchor(corpus, query)?;
    let mut local = BTreeSet::new();
    let mut remote = BTreeSet::new();
    for trace in corpus.traces() {
        let target = if trace.process() == &local_process {
            &mut local
        } else {
            &mut remote
        };
        for rec in trace.records().values() {
            if rec.last_return() > q {
                target.insert(rec.method().clone());
            }
        }
    }
    Ok(ImpactSet::from_parts(
        query.clone(),
        local,
        remote,
        local_process,
    ))
}

/// Coverage baseline: every method with a record anywhere is impacted,
/// decomposed by the same local-process rule as [`impact_set`].
pub fn mcov_set(corpus: &TraceCorpus, query: &MethodId) -> Result<ImpactSet, QueryError> {
    let (_, local_process) = query_anchor(corpus, query)?;
    let mut local = BTreeSet::new();
    let mut remote = BTreeSet::new();
    for trace in corpus.traces() {
        let target = if trace.process() == &local_process {
            &mut local
        } else {
            &mut remote
        };
        for method in trace.records().keys() {
            target.insert(method.clone());
        }
    }
    Ok(ImpactSet::from_parts(
        query.clone(),
        local,
        remote,
        local_process,
    ))
}

/// Union the per-input impact sets of one input type. All sets must share
/// the query; the local process is taken from the first set.
pub fn union_by_input_type(sets: &[ImpactSet]) -> Result<ImpactSet, QueryError> {
    let first = sets.first().ok_or(QueryError::EmptyQuerySet)?;
    let mut local = BTreeSet::new();
    let mut remote = BTreeSet::new();
    for set in sets {
        if set.query() != first.query() {
            return Err(QueryError::MixedQueries(
                first.query().clone(),
                set.query().clone(),
            ));
        }
        local.extend(set.local().iter().cloned());
        remote.extend(set.remote().iter().cloned());
    }
    Ok(ImpactSet::from_parts(
        first.query().clone(),
        local,
        remote,
        first.local_process().clone(),
    ))
}

/// Per-query effectiveness against the coverage baseline, plus the
/// composition of the impact set.
///
/// Ratios are `|impact| / |baseline|` per subset; a remote ratio is
/// absent when the corpus has no remote coverage for that query (single
/// process). Shares decompose `all` into local-only, remote-only, and
/// common portions, which sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEffectiveness {
    pub query: MethodId,
    pub impact_size: usize,
    pub baseline_size: usize,
    pub ratio_all: f64,
    pub ratio_local: f64,
    pub ratio_remote: Option<f64>,
    pub local_only_share: f64,
    pub remote_only_share: f64,
    pub common_share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectivenessReport {
    pub rows: Vec<QueryEffectiveness>,
    pub mean_ratio_all: f64,
    pub mean_ratio_local: f64,
    /// Mean over queries with remote coverage; absent if none have it.
    pub mean_ratio_remote: Option<f64>,
    pub mean_local_only_share: f64,
    pub mean_remote_only_share: f64,
    pub mean_common_share: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Compute effectiveness rows for each query in order.
pub fn effectiveness(
    corpus: &TraceCorpus,
    queries: &QuerySet,
) -> Result<EffectivenessReport, QueryError> {
    let mut rows = Vec::with_capacity(queries.methods().len());
    for query in queries.methods() {
        let is = impact_set(corpus, query)?;
        let base = mcov_set(corpus, query)?;
        let all = is.all().len();
        let ratio_remote = if base.remote().is_empty() {
            None
        } else {
            Some(is.remote().len() as f64 / base.remote().len() as f64)
        };
        let common = is.common().len();
        rows.push(QueryEffectiveness {
            query: query.clone(),
            impact_size: all,
            baseline_size: base.all().len(),
            ratio_all: all as f64 / base.all().len() as f64,
            ratio_local: is.local().len() as f64 / base.local().len() as f64,
            ratio_remote,
            local_only_share: (is.local().len() - common) as f64 / all as f64,
            remote_only_share: (is.remote().len() - common) as f64 / all as f64,
            common_share: common as f64 / all as f64,
        });
    }
    Ok(EffectivenessReport {
        mean_ratio_all: mean(rows.iter().map(|r| r.ratio_all)).unwrap_or(0.0),
        mean_ratio_local: mean(rows.iter().map(|r| r.ratio_local)).unwrap_or(0.0),
        mean_ratio_remote: mean(rows.iter().filter_map(|r| r.ratio_remote)),
        mean_local_only_share: mean(rows.iter().map(|r| r.local_only_share)).unwrap_or(0.0),
        mean_remote_only_share: mean(rows.iter().map(|r| r.remote_only_share)).unwrap_or(0.0),
        mean_common_share: mean(rows.iter().map(|r| r.common_share)).unwrap_or(0.0),
        rows,
    })
}

/// Which subset of an [`ImpactSet`] to list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subset {
    All,
    Local,
    Remote,
    Common,
}

impl Subset {
    pub const LISTING: [Subset; 4] = [Subset::All, Subset::Local, Subset::Remote, Subset::Common];

    pub fn name(self) -> &'static str {
        match self {
            Subset::All => "all",
            Subset::Local => "local",
            Subset::Remote => "remote",
            Subset::Common => "common",
        }
    }
}

/// Members of one subset ranked by (timestamp of their last recorded
/// event in the relevant processes, name) so listings read in execution
/// order.
pub fn ranked_members(
    corpus: &TraceCorpus,
    set: &ImpactSet,
    subset: Subset,
) -> Vec<(LamportClock, MethodId)> {
    let members = match subset {
        Subset::All => set.all(),
        Subset::Local => set.local(),
        Subset::Remote => set.remote(),
        Subset::Common => set.common(),
    };
    let mut out: Vec<(LamportClock, MethodId)> = members
        .iter()
        .map(|m| {
            let ts = corpus
                .traces()
                .filter(|t| match subset {
                    Subset::Local => t.process() == set.local_process(),
                    Subset::Remote => t.process() != set.local_process(),
                    Subset::All | Subset::Common => true,
                })
                .filter_map(|t| t.record(m).map(|r| r.last_return()))
                .max()
                .unwrap_or_default();
            (ts, m.clone())
        })
        .collect();
    out.sort();
    out
}
