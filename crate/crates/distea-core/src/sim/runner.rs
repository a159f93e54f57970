//! Executes scripted programs and collects their traces.
//!
//! Two transports share the same semantics:
//!
//! * **In-memory**: a single-threaded cooperative scheduler. A seeded
//!   generator picks which runnable task steps next, so runs are exactly
//!   reproducible per seed; a blocking action simply leaves its task
//!   unrunnable until its condition holds. Connects never block (the
//!   listener queue plays the role of a TCP backlog), accepts pair with
//!   pending connects in arrival order.
//! * **TCP**: one OS thread per process (plus one per spawned thread
//!   script) over real loopback sockets.
//!
//! A scripted `recv` consumes exactly one message. In oracle mode the
//! runner also keeps, per process, the serialized order of internal and
//! communication events, which the happens-before oracle consumes.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::rc::Rc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::clock::{encode_frame_with, FrameHeader, ProtocolError, HEADER_LEN};
use crate::model::{InternalEvent, ProcessId, ProcessTrace};
use crate::monitor::{MonitorTable, TraceError};
use crate::sim::script::{Action, ScriptError, ScriptedProgram};
use crate::store::{self, StoreError, TraceCorpus};
use crate::transport::{PiggybackConnection, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportMode {
    InMemory,
    Tcp,
}

impl TransportMode {
    pub fn name(self) -> &'static str {
        match self {
            TransportMode::InMemory => "mem",
            TransportMode::Tcp => "tcp",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub transport: TransportMode,
    pub seed: u64,
    /// Record full event sequences and communication logs.
    pub oracle: bool,
    pub timeout: Duration,
    /// Interface TCP listeners bind to; ports are assigned by the OS.
    pub bind: std::net::IpAddr,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            transport: TransportMode::InMemory,
            seed: 0,
            oracle: true,
            timeout: Duration::from_secs(10),
            bind: std::net::IpAddr::V4(std::net::Ipv4Addr::LOCALHOST),
        }
    }
}

/// One entry of a process's serialized run log: an internal event or a
/// communication event. `conn` names the connection uniquely within the
/// run and identically on both ends; `index` counts frames per direction,
/// so send `k` matches recv `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogEntry {
    Internal(InternalEvent),
    Send { conn: String, index: u64 },
    Recv { conn: String, index: u64 },
}

/// Traces plus, in oracle mode, the per-process run logs.
#[derive(Debug)]
pub struct RunOutcome {
    pub corpus: TraceCorpus,
    pub logs: Option<BTreeMap<ProcessId, Vec<LogEntry>>>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("duplicate process {0} in script set")]
    DuplicateProcess(ProcessId),
    #[error("address {0} is listened on by more than one process")]
    DuplicateListener(String),
    #[error("{process}: connect to {addr}, which no process listens on")]
    UnknownAddress { process: ProcessId, addr: String },
    #[error("deadlock: no task can make progress\n{detail}")]
    Deadlock { detail: String },
    #[error("run exceeded its time budget")]
    Timeout,
    #[error("{process}: recv on {conn} found the stream closed (unmatched recv)")]
    UnmatchedRecv { process: ProcessId, conn: String },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("process thread panicked: {0}")]
    ProcessPanicked(String),
}

/// Check cross-program consistency and return the listener map
/// (address -> owning program index).
pub fn validate_topology(
    programs: &[ScriptedProgram],
) -> Result<HashMap<String, usize>, RunError> {
    let mut seen = std::collections::BTreeSet::new();
    let mut listeners: HashMap<String, usize> = HashMap::new();
    for (idx, program) in programs.iter().enumerate() {
        program.validate()?;
        if !seen.insert(program.process.clone()) {
            return Err(RunError::DuplicateProcess(program.process.clone()));
        }
        for addr in &program.listen {
            if listeners.insert(addr.clone(), idx).is_some() {
                return Err(RunError::DuplicateListener(addr.clone()));
            }
        }
    }
    for program in programs {
        for (_, addr) in program.connects() {
            if !listeners.contains_key(addr) {
                return Err(RunError::UnknownAddress {
                    process: program.process.clone(),
                    addr: addr.to_string(),
                });
            }
        }
    }
    Ok(listeners)
}

/// Run the scripts to completion and return their merged traces.
pub fn run_scripts(
    programs: &[ScriptedProgram],
    opts: &RunOptions,
) -> Result<RunOutcome, RunError> {
    validate_topology(programs)?;
    let (traces, logs) = match opts.transport {
        TransportMode::InMemory => MemRunner::new(programs, opts)?.run()?,
        TransportMode::Tcp => run_tcp(programs, opts)?,
    };
    // round-trip every trace through the file format: the corpus always
    // holds parsed traces
    let mut parsed = Vec::with_capacity(traces.len());
    for trace in &traces {
        parsed.push(store::parse_trace(&store::serialize_trace(trace))?);
    }
    let corpus = TraceCorpus::merge_named(
        format!("sim-{}-seed{}", opts.transport.name(), opts.seed),
        parsed,
    )?;
    Ok(RunOutcome {
        corpus,
        logs: opts.oracle.then_some(logs),
    })
}

// ---------------------------------------------------------------------------
// In-memory deterministic scheduler
// ---------------------------------------------------------------------------

type SharedBuf = Rc<RefCell<VecDeque<u8>>>;

struct MemConnEnd {
    /// Log key for frames this end sends; equals the peer's `recv_key`.
    send_key: String,
    recv_key: String,
    incoming: SharedBuf,
    outgoing: SharedBuf,
    sends: u64,
    recvs: u64,
}

struct MemProc {
    monitor: MonitorTable,
    log: Vec<LogEntry>,
    conns: HashMap<String, MemConnEnd>,
}

struct Task {
    proc_idx: usize,
    label: String,
    actions: Vec<Action>,
    pc: usize,
}

struct MemRunner<'a> {
    programs: &'a [ScriptedProgram],
    procs: Vec<MemProc>,
    tasks: Vec<Task>,
    /// Accepted-side connection ends waiting for an `accept`, per address.
    backlog: HashMap<String, VecDeque<MemConnEnd>>,
    rng: ChaCha8Rng,
    conn_counter: u64,
}

impl<'a> MemRunner<'a> {
    fn new(programs: &'a [ScriptedProgram], opts: &RunOptions) -> Result<Self, RunError> {
        let listeners = validate_topology(programs)?;
        let procs = programs
            .iter()
            .map(|p| MemProc {
                monitor: MonitorTable::new(p.process.clone(), opts.oracle),
                log: Vec::new(),
                conns: HashMap::new(),
            })
            .collect();
        let tasks = programs
            .iter()
            .enumerate()
            .map(|(idx, p)| Task {
                proc_idx: idx,
                label: "main".to_string(),
                actions: p.main.clone(),
                pc: 0,
            })
            .collect();
        let backlog = listeners
            .into_keys()
            .map(|addr| (addr, VecDeque::new()))
            .collect();
        Ok(MemRunner {
            programs,
            procs,
            tasks,
            backlog,
            rng: ChaCha8Rng::seed_from_u64(opts.seed),
            conn_counter: 0,
        })
    }

    fn frame_ready(buf: &SharedBuf) -> bool {
        let buf = buf.borrow();
        if buf.len() < HEADER_LEN {
            return false;
        }
        let mut len_bytes = [0u8; 8];
        for (i, slot) in len_bytes.iter_mut().enumerate() {
            *slot = buf[i];
        }
        let total = u64::from_be_bytes(len_bytes);
        // a malformed length counts as ready so the step can surface the
        // protocol error
        total < HEADER_LEN as u64 || (buf.len() as u64) >= total
    }

    fn task_ready(&self, task: &Task) -> bool {
        let action = match task.actions.get(task.pc) {
            Some(a) => a,
            None => return false,
        };
        let proc = &self.procs[task.proc_idx];
        match action {
            Action::CallEnter(_)
            | Action::CallReturn(_)
            | Action::ReturnedInto(_)
            | Action::Spawn { .. }
            | Action::Connect { .. } => true,
            Action::Send { conn, .. } => proc.conns.contains_key(conn),
            Action::Accept { addr, .. } => {
                self.backlog.get(addr).is_some_and(|q| !q.is_empty())
            }
            Action::Recv { conn } => proc
                .conns
                .get(conn)
                .is_some_and(|end| Self::frame_ready(&end.incoming)),
        }
    }

    fn step(&mut self, task_idx: usize) -> Result<(), RunError> {
        let (proc_idx, action) = {
            let task = &self.tasks[task_idx];
            (task.proc_idx, task.actions[task.pc].clone())
        };
        match action {
            Action::CallEnter(m) => {
                let proc = &mut self.procs[proc_idx];
                let ev = proc.monitor.on_entry(m)?;
                proc.log.push(LogEntry::Internal(ev));
            }
            Action::CallReturn(m) => {
                let proc = &mut self.procs[proc_idx];
                let ev = proc.monitor.on_return(m)?;
                proc.log.push(LogEntry::Internal(ev));
            }
            Action::ReturnedInto(m) => {
                let proc = &mut self.procs[proc_idx];
                let ev = proc.monitor.on_returned_into(m)?;
                proc.log.push(LogEntry::Internal(ev));
            }
            Action::Spawn { thread } => {
                let body = self.programs[proc_idx].threads[&thread].clone();
                self.tasks.push(Task {
                    proc_idx,
                    label: thread,
                    actions: body,
                    pc: 0,
                });
            }
            Action::Connect { conn, addr } => {
                let key = format!("conn{}", self.conn_counter);
                self.conn_counter += 1;
                let here_to_peer: SharedBuf = Rc::new(RefCell::new(VecDeque::new()));
                let peer_to_here: SharedBuf = Rc::new(RefCell::new(VecDeque::new()));
                let our_end = MemConnEnd {
                    send_key: format!("{key}/c2l"),
                    recv_key: format!("{key}/l2c"),
                    incoming: Rc::clone(&peer_to_here),
                    outgoing: Rc::clone(&here_to_peer),
                    sends: 0,
                    recvs: 0,
                };
                let peer_end = MemConnEnd {
                    send_key: format!("{key}/l2c"),
                    recv_key: format!("{key}/c2l"),
                    incoming: here_to_peer,
                    outgoing: peer_to_here,
                    sends: 0,
                    recvs: 0,
                };
                self.backlog
                    .get_mut(&addr)
                    .expect("validated upfront")
                    .push_back(peer_end);
                self.procs[proc_idx].conns.insert(conn, our_end);
            }
            Action::Accept { conn, addr } => {
                let end = self
                    .backlog
                    .get_mut(&addr)
                    .and_then(|q| q.pop_front())
                    .expect("step only runs when ready");
                self.procs[proc_idx].conns.insert(conn, end);
            }
            Action::Send { conn, payload } => {
                let proc = &mut self.procs[proc_idx];
                let clock = proc.monitor.cell().current();
                let frame = encode_frame_with(clock, &payload);
                let end = proc.conns.get_mut(&conn).expect("step only runs when ready");
                end.outgoing.borrow_mut().extend(frame);
                let index = end.sends;
                end.sends += 1;
                let key = end.send_key.clone();
                proc.log.push(LogEntry::Send { conn: key, index });
            }
            Action::Recv { conn } => {
                let proc = &mut self.procs[proc_idx];
                let end = proc.conns.get_mut(&conn).expect("step only runs when ready");
                let header = {
                    let mut buf = end.incoming.borrow_mut();
                    let mut raw = [0u8; HEADER_LEN];
                    for slot in raw.iter_mut() {
                        *slot = buf.pop_front().unwrap();
                    }
                    let header = FrameHeader::decode(&raw)?;
                    for _ in 0..header.payload_length() {
                        buf.pop_front().unwrap();
                    }
                    header
                };
                proc.monitor.cell().on_receive_clock(header.clock);
                let index = end.recvs;
                end.recvs += 1;
                let key = end.recv_key.clone();
                proc.log.push(LogEntry::Recv { conn: key, index });
            }
        }
        self.tasks[task_idx].pc += 1;
        Ok(())
    }

    fn deadlock_detail(&self) -> String {
        let mut out = String::new();
        for task in &self.tasks {
            if task.pc < task.actions.len() {
                out.push_str(&format!(
                    "  {}/{} stuck at step {} on {:?}\n",
                    self.programs[task.proc_idx].process,
                    task.label,
                    task.pc,
                    task.actions[task.pc]
                ));
            }
        }
        out
    }

    fn run(mut self) -> Result<(Vec<ProcessTrace>, BTreeMap<ProcessId, Vec<LogEntry>>), RunError>
    {
        loop {
            let runnable: Vec<usize> = (0..self.tasks.len())
                .filter(|&i| self.task_ready(&self.tasks[i]))
                .collect();
            if runnable.is_empty() {
                let unfinished = self.tasks.iter().any(|t| t.pc < t.actions.len());
                if unfinished {
                    return Err(RunError::Deadlock {
                        detail: self.deadlock_detail(),
                    });
                }
                break;
            }
            let pick = runnable[self.rng.random_range(0..runnable.len())];
            self.step(pick)?;
        }
        let mut traces = Vec::new();
        let mut logs = BTreeMap::new();
        for (program, proc) in self.programs.iter().zip(self.procs) {
            traces.push(proc.monitor.snapshot()?);
            logs.insert(program.process.clone(), proc.log);
        }
        Ok((traces, logs))
    }
}

// ---------------------------------------------------------------------------
// TCP runner
// ---------------------------------------------------------------------------

struct TcpConnSlot {
    conn: PiggybackConnection<TcpStream>,
    /// Log key for frames this end sends; equals the peer's `recv_key`.
    /// Derived from the listener address and the connector's ephemeral
    /// port, which both ends can observe.
    send_key: String,
    recv_key: String,
    sends: u64,
    recvs: u64,
}

struct TcpProcShared {
    process: ProcessId,
    monitor: Arc<MonitorTable>,
    log: Mutex<Vec<LogEntry>>,
    conns: Mutex<HashMap<String, Arc<Mutex<TcpConnSlot>>>>,
    listeners: HashMap<String, Arc<TcpListener>>,
    addr_map: Arc<HashMap<String, SocketAddr>>,
    deadline: Instant,
    timeout: Duration,
}

impl TcpProcShared {
    fn wait_for_conn(&self, conn: &str) -> Result<Arc<Mutex<TcpConnSlot>>, RunError> {
        loop {
            if let Some(slot) = self.conns.lock().unwrap().get(conn) {
                return Ok(Arc::clone(slot));
            }
            if Instant::now() >= self.deadline {
                return Err(RunError::Timeout);
            }
            std::thread::sleep(Duration::from_micros(200));
        }
    }
}

fn run_tcp_task(
    state: Arc<TcpProcShared>,
    program: Arc<ScriptedProgram>,
    actions: &[Action],
) -> Result<(), RunError> {
    let mut spawned: Vec<std::thread::JoinHandle<Result<(), RunError>>> = Vec::new();
    for action in actions {
        match action {
            Action::CallEnter(m) => {
                let mut log = state.log.lock().unwrap();
                let ev = state.monitor.on_entry(m.clone())?;
                log.push(LogEntry::Internal(ev));
            }
            Action::CallReturn(m) => {
                let mut log = state.log.lock().unwrap();
                let ev = state.monitor.on_return(m.clone())?;
                log.push(LogEntry::Internal(ev));
            }
            Action::ReturnedInto(m) => {
                let mut log = state.log.lock().unwrap();
                let ev = state.monitor.on_returned_into(m.clone())?;
                log.push(LogEntry::Internal(ev));
            }
            Action::Spawn { thread } => {
                let state = Arc::clone(&state);
                let program = Arc::clone(&program);
                let name = thread.clone();
                spawned.push(std::thread::spawn(move || {
                    let body = program.threads[&name].clone();
                    run_tcp_task(state, program, &body)
                }));
            }
            Action::Connect { conn, addr } => {
                let target = state.addr_map[addr];
                let stream = TcpStream::connect(target)?;
                stream.set_read_timeout(Some(state.timeout))?;
                let key = format!("{addr}:{}", stream.local_addr()?.port());
                let slot = TcpConnSlot {
                    conn: PiggybackConnection::new(stream, Arc::clone(state.monitor.cell())),
                    send_key: format!("{key}/c2l"),
                    recv_key: format!("{key}/l2c"),
                    sends: 0,
                    recvs: 0,
                };
                state
                    .conns
                    .lock()
                    .unwrap()
                    .insert(conn.clone(), Arc::new(Mutex::new(slot)));
            }
            Action::Accept { conn, addr } => {
                let listener = state.listeners.get(addr).expect("validated upfront");
                let stream = loop {
                    match listener.accept() {
                        Ok((stream, _)) => break stream,
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                            if Instant::now() >= state.deadline {
                                return Err(RunError::Timeout);
                            }
                            std::thread::sleep(Duration::from_micros(200));
                        }
                        Err(e) => return Err(e.into()),
                    }
                };
                stream.set_nonblocking(false)?;
                stream.set_read_timeout(Some(state.timeout))?;
                let key = format!("{addr}:{}", stream.peer_addr()?.port());
                let slot = TcpConnSlot {
                    conn: PiggybackConnection::new(stream, Arc::clone(state.monitor.cell())),
                    send_key: format!("{key}/l2c"),
                    recv_key: format!("{key}/c2l"),
                    sends: 0,
                    recvs: 0,
                };
                state
                    .conns
                    .lock()
                    .unwrap()
                    .insert(conn.clone(), Arc::new(Mutex::new(slot)));
            }
            Action::Send { conn, payload } => {
                let slot = state.wait_for_conn(conn)?;
                let mut slot = slot.lock().unwrap();
                // read the clock and order the log entry atomically with
                // respect to probes; the bytes go out after
                let (clock, index) = {
                    let mut log = state.log.lock().unwrap();
                    let clock = state.monitor.cell().current();
                    let index = slot.sends;
                    log.push(LogEntry::Send {
                        conn: slot.send_key.clone(),
                        index,
                    });
                    (clock, index)
                };
                slot.sends = index + 1;
                slot.conn.pb_send_with(clock, payload)?;
            }
            Action::Recv { conn } => {
                let slot = state.wait_for_conn(conn)?;
                let mut slot = slot.lock().unwrap();
                match slot.conn.recv_message()? {
                    Some(_payload) => {}
                    None => {
                        return Err(RunError::UnmatchedRecv {
                            process: state.process.clone(),
                            conn: conn.clone(),
                        })
                    }
                }
                let index = slot.recvs;
                slot.recvs = index + 1;
                state.log.lock().unwrap().push(LogEntry::Recv {
                    conn: slot.recv_key.clone(),
                    index,
                });
            }
        }
    }
    for handle in spawned {
        handle
            .join()
            .map_err(|_| RunError::ProcessPanicked("spawned task".into()))??;
    }
    Ok(())
}

fn run_tcp(
    programs: &[ScriptedProgram],
    opts: &RunOptions,
) -> Result<(Vec<ProcessTrace>, BTreeMap<ProcessId, Vec<LogEntry>>), RunError> {
    let listener_owners = validate_topology(programs)?;
    let mut addr_map = HashMap::new();
    let mut listeners_by_program: Vec<HashMap<String, Arc<TcpListener>>> =
        (0..programs.len()).map(|_| HashMap::new()).collect();
    for (addr, owner) in &listener_owners {
        let listener = TcpListener::bind((opts.bind, 0))?;
        listener.set_nonblocking(true)?;
        addr_map.insert(addr.clone(), listener.local_addr()?);
        listeners_by_program[*owner].insert(addr.clone(), Arc::new(listener));
    }
    let addr_map = Arc::new(addr_map);
    let deadline = Instant::now() + opts.timeout;

    let mut states = Vec::new();
    let mut handles = Vec::new();
    for (idx, program) in programs.iter().enumerate() {
        let state = Arc::new(TcpProcShared {
            process: program.process.clone(),
            monitor: Arc::new(MonitorTable::new(program.process.clone(), opts.oracle)),
            log: Mutex::new(Vec::new()),
            conns: Mutex::new(HashMap::new()),
            listeners: std::mem::take(&mut listeners_by_program[idx]),
            addr_map: Arc::clone(&addr_map),
            deadline,
            timeout: opts.timeout,
        });
        states.push(Arc::clone(&state));
        let program = Arc::new(program.clone());
        handles.push(std::thread::spawn(move || {
            let main = program.main.clone();
            let result = run_tcp_task(Arc::clone(&state), program, &main);
            // drop connections so peers blocked in reads see EOF
            state.conns.lock().unwrap().clear();
            result
        }));
    }
    let mut first_error: Option<RunError> = None;
    for handle in handles {
        match handle.join() {
            Ok(Ok(())) => {}
            Ok(Err(e)) => first_error = first_error.or(Some(e)),
            Err(_) => {
                first_error =
                    first_error.or(Some(RunError::ProcessPanicked("process task".into())))
            }
        }
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    let mut traces = Vec::new();
    let mut logs = BTreeMap::new();
    for state in states {
        traces.push(state.monitor.snapshot()?);
        let log = std::mem::take(&mut *state.log.lock().unwrap());
        logs.insert(state.process.clone(), log);
    }
    Ok((traces, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MethodId;
    use crate::sim::fixtures;

    fn mem_opts(seed: u64) -> RunOptions {
        RunOptions {
            transport: TransportMode::InMemory,
            seed,
            oracle: true,
            timeout: Duration::from_secs(5),
        }
    }

    #[test]
    fn lone_process_stamps_count_up_from_zero() {
        let text = "distea-script v1\nprocess P\nenter P::a\nenter P::b\nreturn P::b\ninto P::a\nreturn P::a\n";
        let program = crate::sim::script::parse_script(text.as_bytes()).unwrap();
        let outcome = run_scripts(&[program], &mem_opts(3)).unwrap();
        let trace = outcome
            .corpus
            .trace(&ProcessId::new("P").unwrap())
            .unwrap();
        let stamps: Vec<u64> = trace
            .full_sequence()
            .unwrap()
            .iter()
            .map(|e| e.timestamp.value())
            .collect();
        assert_eq!(stamps, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn same_seed_means_identical_corpora_and_logs() {
        let programs = fixtures::example_e();
        let a = run_scripts(&programs, &mem_opts(17)).unwrap();
        let b = run_scripts(&programs, &mem_opts(17)).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.logs, b.logs);
    }

    #[test]
    fn deadlocked_topology_is_reported() {
        // both sides recv before anyone sends
        let a = "distea-script v1\nprocess A\nlisten la\nenter A::m\naccept c la\nrecv c\nsend c -\nreturn A::m\n";
        let b = "distea-script v1\nprocess B\nenter B::m\nconnect c la\nrecv c\nsend c -\nreturn B::m\n";
        let programs = vec![
            crate::sim::script::parse_script(a.as_bytes()).unwrap(),
            crate::sim::script::parse_script(b.as_bytes()).unwrap(),
        ];
        match run_scripts(&programs, &mem_opts(0)) {
            Err(RunError::Deadlock { detail }) => {
                assert!(detail.contains("Recv"), "detail: {detail}");
            }
            other => panic!("expected deadlock, got {other:?}"),
        }
    }

    #[test]
    fn unknown_connect_address_is_rejected() {
        let text = "distea-script v1\nprocess P\nenter P::a\nconnect c nowhere\nreturn P::a\n";
        let program = crate::sim::script::parse_script(text.as_bytes()).unwrap();
        assert!(matches!(
            run_scripts(&[program], &mem_opts(0)),
            Err(RunError::UnknownAddress { .. })
        ));
    }

    #[test]
    fn spawned_threads_share_the_process_clock() {
        let text = "distea-script v1\nprocess P\nenter P::main\nspawn w\nreturn P::main\nthread w\nenter P::work\nreturn P::work\nend\n";
        let program = crate::sim::script::parse_script(text.as_bytes()).unwrap();
        let outcome = run_scripts(&[program], &mem_opts(11)).unwrap();
        let trace = outcome
            .corpus
            .trace(&ProcessId::new("P").unwrap())
            .unwrap();
        // four stamped events, all distinct, from one counter
        let mut stamps: Vec<u64> = trace
            .full_sequence()
            .unwrap()
            .iter()
            .map(|e| e.timestamp.value())
            .collect();
        stamps.sort_unstable();
        assert_eq!(stamps, vec![0, 1, 2, 3]);
        assert!(trace.record(&MethodId::new("P::work").unwrap()).is_some());
    }

    #[test]
    fn logs_pair_sends_with_recvs() {
        let programs = fixtures::example_e();
        let outcome = run_scripts(&programs, &mem_opts(5)).unwrap();
        let logs = outcome.logs.unwrap();
        let count = |f: &dyn Fn(&LogEntry) -> bool| -> usize {
            logs.values().flatten().filter(|e| f(e)).count()
        };
        assert_eq!(count(&|e| matches!(e, LogEntry::Send { .. })), 2);
        assert_eq!(count(&|e| matches!(e, LogEntry::Recv { .. })), 2);
        // every recv has a matching send key+index
        for entry in logs.values().flatten() {
            if let LogEntry::Recv { conn, index } = entry {
                assert!(logs.values().flatten().any(|e| matches!(
                    e,
                    LogEntry::Send { conn: c, index: i } if c == conn && i == index
                )));
            }
        }
    }
}
