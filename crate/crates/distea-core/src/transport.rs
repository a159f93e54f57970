//! Socket wrappers that replace a program's plain stream I/O with
//! clock-piggybacked I/O.
//!
//! A [`PiggybackConnection`] frames every application write with the
//! sender's current clock and strips frames on the read side, so the
//! application sees exactly the bytes the peer wrote — the clock exchange
//! adds no messages of its own. Endpoints are anything [`Wire`]: real
//! `TcpStream`s or in-memory [`MemPipe`]s with the same contract.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::os::fd::{AsRawFd, RawFd};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::clock::{ClockCell, Framer, FramerEvent, ProtocolError, HEADER_LEN};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("connection poisoned by an earlier half-written frame")]
    SendPoisoned,
    #[error("pb_recv needs max >= 1")]
    ZeroMax,
}

/// Result of one receive attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Received {
    /// 1..=max payload bytes.
    Data(Vec<u8>),
    /// Non-blocking endpoint has nothing ready; no state changed.
    WouldBlock,
    /// Clean end of stream at a frame boundary.
    Closed,
}

/// Handle used by [`readiness_wait`] to ask an endpoint about pending
/// readability/writability.
pub enum PollHandle {
    Fd(RawFd),
    Mem(Arc<PipeShared>),
}

/// A bidirectional byte-stream endpoint. Implemented by `TcpStream` and
/// [`MemPipe`].
pub trait Wire: Read + Write {
    fn poll_handle(&self) -> PollHandle;
    fn set_wire_nonblocking(&mut self, nonblocking: bool) -> io::Result<()>;
}

impl Wire for TcpStream {
    fn poll_handle(&self) -> PollHandle {
        PollHandle::Fd(self.as_raw_fd())
    }

    fn set_wire_nonblocking(&mut self, nonblocking: bool) -> io::Result<()> {
        TcpStream::set_nonblocking(self, nonblocking)
    }
}

// ---------------------------------------------------------------------------
// In-memory pipe
// ---------------------------------------------------------------------------

#[derive(Debug, Default)]
struct PipeState {
    buf: VecDeque<u8>,
    writer_closed: bool,
    reader_closed: bool,
}

/// Shared half of an in-memory unidirectional stream.
#[derive(Debug, Default)]
pub struct PipeShared {
    state: Mutex<PipeState>,
    cond: Condvar,
}

impl PipeShared {
    fn readable(&self) -> bool {
        let st = self.state.lock().unwrap();
        !st.buf.is_empty() || st.writer_closed
    }
}

/// One end of an in-memory duplex byte stream with TCP-like semantics:
/// reads block until data or EOF, dropping an end closes it. Used by
/// tests and the single-machine demo paths.
#[derive(Debug)]
pub struct MemPipe {
    incoming: Arc<PipeShared>,
    outgoing: Arc<PipeShared>,
    nonblocking: bool,
    /// Cap on bytes accepted per `write` call; simulates short writes.
    write_chunk_limit: Option<usize>,
}

/// A connected pair of in-memory endpoints.
pub fn mem_pipe_pair() -> (MemPipe, MemPipe) {
    let a_to_b = Arc::new(PipeShared::default());
    let b_to_a = Arc::new(PipeShared::default());
    (
        MemPipe {
            incoming: Arc::clone(&b_to_a),
            outgoing: Arc::clone(&a_to_b),
            nonblocking: false,
            write_chunk_limit: None,
        },
        MemPipe {
            incoming: a_to_b,
            outgoing: b_to_a,
            nonblocking: false,
            write_chunk_limit: None,
        },
    )
}

impl MemPipe {
    /// Limit how many bytes a single `write` call accepts.
    pub fn set_write_chunk_limit(&mut self, limit: Option<usize>) {
        self.write_chunk_limit = limit;
    }
}

impl Read for MemPipe {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        let mut st = self.incoming.state.lock().unwrap();
        loop {
            if !st.buf.is_empty() {
                let n = buf.len().min(st.buf.len());
                for slot in buf.iter_mut().take(n) {
                    *slot = st.buf.pop_front().unwrap();
                }
                return Ok(n);
            }
            if st.writer_closed {
                return Ok(0);
            }
            if self.nonblocking {
                return Err(io::Error::from(io::ErrorKind::WouldBlock));
            }
            st = self.incoming.cond.wait(st).unwrap();
        }
    }
}

impl Write for MemPipe {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let mut st = self.outgoing.state.lock().unwrap();
        if st.reader_closed {
            return Err(io::Error::from(io::ErrorKind::BrokenPipe));
        }
        let n = match self.write_chunk_limit {
            Some(limit) => buf.len().min(limit.max(1)),
            None => buf.len(),
        };
        st.buf.extend(&buf[..n]);
        self.outgoing.cond.notify_all();
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Drop for MemPipe {
    fn drop(&mut self) {
        {
            let mut st = self.outgoing.state.lock().unwrap();
            st.writer_closed = true;
            self.outgoing.cond.notify_all();
        }
        let mut st = self.incoming.state.lock().unwrap();
        st.reader_closed = true;
        self.incoming.cond.notify_all();
    }
}

impl Wire for MemPipe {
    fn poll_handle(&self) -> PollHandle {
        PollHandle::Mem(Arc::clone(&self.incoming))
    }

    fn set_wire_nonblocking(&mut self, nonblocking: bool) -> io::Result<()> {
        self.nonblocking = nonblocking;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Piggyback connection
// ---------------------------------------------------------------------------

/// A stream endpoint whose writes are framed with the process clock and
/// whose reads surface only application payload, applying piggybacked
/// clocks as headers complete.
#[derive(Debug)]
pub struct PiggybackConnection<S> {
    stream: S,
    cell: Arc<ClockCell>,
    framer: Framer,
    inbox: VecDeque<u8>,
    pending_out: Vec<u8>,
    nonblocking: bool,
    send_poisoned: bool,
    eof: bool,
}

impl<S: Wire> PiggybackConnection<S> {
    /// Wrap a blocking endpoint.
    pub fn new(stream: S, cell: Arc<ClockCell>) -> Self {
        PiggybackConnection {
            stream,
            cell,
            framer: Framer::new(),
            inbox: VecDeque::new(),
            pending_out: Vec::new(),
            nonblocking: false,
            send_poisoned: false,
            eof: false,
        }
    }

    /// Wrap an endpoint in readiness (non-blocking) mode.
    pub fn new_nonblocking(mut stream: S, cell: Arc<ClockCell>) -> io::Result<Self> {
        stream.set_wire_nonblocking(true)?;
        let mut conn = PiggybackConnection::new(stream, cell);
        conn.nonblocking = true;
        Ok(conn)
    }

    pub fn cell(&self) -> &Arc<ClockCell> {
        &self.cell
    }

    /// Decoded payload bytes waiting to be handed to the application.
    pub fn has_buffered_payload(&self) -> bool {
        !self.inbox.is_empty()
    }

    /// Frame bytes queued but not yet flushed (non-blocking mode).
    pub fn pending_output(&self) -> usize {
        self.pending_out.len()
    }

    pub(crate) fn poll_handle(&self) -> PollHandle {
        self.stream.poll_handle()
    }

    /// Send one application message as one frame carrying the current
    /// clock. Blocking mode flushes the whole frame before returning; a
    /// frame cut short by an I/O error poisons the send side.
    pub fn pb_send(&mut self, msg: &[u8]) -> Result<(), TransportError> {
        self.pb_send_with(self.cell.current(), msg)
    }

    /// Send with an explicit clock value, for callers that must read the
    /// clock at a precise point before writing.
    pub fn pb_send_with(
        &mut self,
        clock: crate::model::LamportClock,
        msg: &[u8],
    ) -> Result<(), TransportError> {
        if self.send_poisoned {
            return Err(TransportError::SendPoisoned);
        }
        let frame = crate::clock::encode_frame_with(clock, msg);
        if self.nonblocking {
            self.pending_out.extend_from_slice(&frame);
            self.flush_pending()?;
            return Ok(());
        }
        if let Err(e) = self.stream.write_all(&frame) {
            self.send_poisoned = true;
            return Err(e.into());
        }
        Ok(())
    }

    /// Push queued frame bytes out (non-blocking mode). Returns true when
    /// the queue is fully drained.
    pub fn flush_pending(&mut self) -> Result<bool, TransportError> {
        while !self.pending_out.is_empty() {
            match self.stream.write(&self.pending_out) {
                Ok(0) => {
                    self.send_poisoned = true;
                    return Err(TransportError::Io(io::Error::from(
                        io::ErrorKind::WriteZero,
                    )));
                }
                Ok(n) => {
                    self.pending_out.drain(..n);
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => return Ok(false),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => {
                    self.send_poisoned = true;
                    return Err(e.into());
                }
            }
        }
        Ok(true)
    }

    /// Receive up to `max` payload bytes. Blocking mode returns `Data`
    /// with at least one byte or `Closed` at a clean end of stream;
    /// non-blocking mode may return `WouldBlock`. Clocks from completed
    /// headers are applied before payload is surfaced.
    pub fn pb_recv(&mut self, max: usize) -> Result<Received, TransportError> {
        if max == 0 {
            return Err(TransportError::ZeroMax);
        }
        let mut buf = [0u8; 64 * 1024];
        loop {
            if !self.inbox.is_empty() {
                let n = max.min(self.inbox.len());
                let out: Vec<u8> = self.inbox.drain(..n).collect();
                return Ok(Received::Data(out));
            }
            if self.eof {
                return Ok(Received::Closed);
            }
            match self.stream.read(&mut buf) {
                Ok(0) => {
                    self.eof = true;
                    self.framer.finish()?;
                    return Ok(Received::Closed);
                }
                Ok(n) => {
                    let (payload, _clocks) = self.framer.feed_bytes(&self.cell, &buf[..n])?;
                    self.inbox.extend(payload);
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    return Ok(Received::WouldBlock)
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Receive exactly one whole message (one frame's payload). Blocking
    /// endpoints only, and only on connections read exclusively through
    /// this method, so the stream stays frame-aligned. Returns `None` at
    /// a clean end of stream.
    pub fn recv_message(&mut self) -> Result<Option<Vec<u8>>, TransportError> {
        assert!(!self.nonblocking, "recv_message requires a blocking endpoint");
        debug_assert!(
            self.inbox.is_empty() && self.framer.at_frame_boundary(),
            "recv_message on a connection also read via pb_recv"
        );
        if self.eof {
            return Ok(None);
        }
        let mut header = [0u8; HEADER_LEN];
        let mut got = 0;
        while got < HEADER_LEN {
            match self.stream.read(&mut header[got..]) {
                Ok(0) => {
                    self.eof = true;
                    if got == 0 {
                        return Ok(None);
                    }
                    self.framer.feed_bytes(&self.cell, &header[..got])?;
                    self.framer.finish()?;
                    unreachable!("finish on a partial header must error");
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
        for ev in self.framer.feed(&self.cell, &header)? {
            debug_assert!(!matches!(ev, FramerEvent::Payload(_)));
        }
        let mut payload = Vec::with_capacity(self.framer.remaining() as usize);
        let mut buf = [0u8; 64 * 1024];
        while self.framer.remaining() > 0 {
            let want = (self.framer.remaining() as usize).min(buf.len());
            match self.stream.read(&mut buf[..want]) {
                Ok(0) => {
                    self.eof = true;
                    self.framer.finish()?;
                    unreachable!("finish mid-frame must error");
                }
                Ok(n) => {
                    for ev in self.framer.feed(&self.cell, &buf[..n])? {
                        if let FramerEvent::Payload(bytes) = ev {
                            payload.extend_from_slice(&bytes);
                        }
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Ok(Some(payload))
    }

    /// Consume the wrapper, returning the underlying endpoint.
    pub fn into_inner(self) -> S {
        self.stream
    }
}

// ---------------------------------------------------------------------------
// Readiness
// ---------------------------------------------------------------------------

/// What [`readiness_wait`] should look for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interest {
    pub read: bool,
    pub write: bool,
}

impl Interest {
    pub const READ: Interest = Interest {
        read: true,
        write: false,
    };
    pub const WRITE: Interest = Interest {
        read: false,
        write: true,
    };
    pub const READ_WRITE: Interest = Interest {
        read: true,
        write: true,
    };
}

fn poll_fds(fds: &[(usize, RawFd)], interest: Interest, timeout_ms: i32) -> io::Result<Vec<usize>> {
    let mut events = 0i16;
    if interest.read {
        events |= libc::POLLIN;
    }
    if interest.write {
        events |= libc::POLLOUT;
    }
    let mut pollfds: Vec<libc::pollfd> = fds
        .iter()
        .map(|(_, fd)| libc::pollfd {
            fd: *fd,
            events,
            revents: 0,
        })
        .collect();
    let rc = unsafe { libc::poll(pollfds.as_mut_ptr(), pollfds.len() as libc::nfds_t, timeout_ms) };
    if rc < 0 {
        let err = io::Error::last_os_error();
        if err.kind() == io::ErrorKind::Interrupted {
            return Ok(Vec::new());
        }
        return Err(err);
    }
    Ok(pollfds
        .iter()
        .zip(fds)
        .filter(|(p, _)| p.revents != 0)
        .map(|(_, (idx, _))| *idx)
        .collect())
}

/// Wait until some connection in the set is ready, up to `timeout`.
/// A connection holding buffered undelivered payload is always reported
/// readable. Returns indices into `conns`, sorted; an empty set yields an
/// empty result immediately.
pub fn readiness_wait<S: Wire>(
    conns: &[&PiggybackConnection<S>],
    interest: Interest,
    timeout: Duration,
) -> io::Result<Vec<usize>> {
    if conns.is_empty() {
        return Ok(Vec::new());
    }
    let deadline = Instant::now() + timeout;
    loop {
        let mut ready: Vec<usize> = Vec::new();
        let mut fds: Vec<(usize, RawFd)> = Vec::new();
        let mut mems: Vec<(usize, Arc<PipeShared>)> = Vec::new();
        for (idx, conn) in conns.iter().enumerate() {
            if interest.read && conn.has_buffered_payload() {
                ready.push(idx);
                continue;
            }
            match conn.poll_handle() {
                PollHandle::Fd(fd) => fds.push((idx, fd)),
                PollHandle::Mem(shared) => mems.push((idx, shared)),
            }
        }
        for (idx, shared) in &mems {
            // in-memory pipes are always writable; readable when bytes or
            // EOF are pending
            if (interest.read && shared.readable()) || interest.write {
                ready.push(*idx);
            }
        }
        if !fds.is_empty() {
            // block in poll only when nothing else is ready yet and no
            // mem pipe needs re-checking
            let timeout_ms = if !ready.is_empty() || !mems.is_empty() {
                0
            } else {
                let left = deadline.saturating_duration_since(Instant::now());
                left.as_millis().min(i32::MAX as u128) as i32
            };
            ready.extend(poll_fds(&fds, interest, timeout_ms)?);
        }
        if !ready.is_empty() {
            ready.sort_unstable();
            ready.dedup();
            return Ok(ready);
        }
        if Instant::now() >= deadline {
            return Ok(Vec::new());
        }
        if !mems.is_empty() {
            std::thread::sleep(Duration::from_micros(200));
        }
    }
}
