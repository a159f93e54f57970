//! Per-process Lamport clock discipline and the piggyback wire protocol.
//!
//! The clock rules, chosen to reproduce the stamping of a blocking
//! client/server exchange end to end:
//!
//! * the clock starts at 0 when the process starts;
//! * each internal event is stamped with the current value, after which
//!   the clock increases by exactly 1 (stamp-then-increment);
//! * sending piggybacks the current value onto the message without
//!   incrementing — the current value already exceeds every stamp this
//!   process has handed out;
//! * receiving merges with `max(local, received)` and nothing else; the
//!   next stamped internal event picks the merged value up.
//!
//! Wire format (stable public contract): every application message
//! travels as one frame of
//!
//! ```text
//! 8-byte big-endian total length (16 + payload length)
//! 8-byte big-endian sender clock at send time
//! payload bytes
//! ```
//!
//! [`Framer`] strips headers from an arbitrarily segmented byte stream,
//! applies each piggybacked clock exactly once, and hands back payload
//! bytes identical to what the peer wrote.

use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::model::{LamportClock, ProcessId};

/// Size of the frame header: 8-byte length plus 8-byte clock.
pub const HEADER_LEN: usize = 16;

/// Errors raised by the framing layer.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("malformed frame header: total length {0} is shorter than the header itself")]
    HeaderTooShort(u64),
    #[error("stream ended in the middle of a frame ({0} payload bytes missing)")]
    TruncatedFrame(u64),
    #[error("stream ended inside a frame header ({0} of 16 bytes seen)")]
    TruncatedHeader(usize),
    #[error("connection poisoned by an earlier protocol error")]
    Poisoned,
}

/// The process-wide logical clock. One cell per process, shared by every
/// thread and connection of that process.
#[derive(Debug)]
pub struct ClockCell {
    process: ProcessId,
    clock: AtomicU64,
}

impl ClockCell {
    /// A fresh clock at 0 for the given process.
    pub fn new(process: ProcessId) -> Self {
        ClockCell {
            process,
            clock: AtomicU64::new(0),
        }
    }

    pub fn process(&self) -> &ProcessId {
        &self.process
    }

    /// Stamp one internal event: returns the pre-increment value and
    /// advances the clock by 1, atomically.
    ///
    /// Overflow of the 64-bit counter is unreachable in practice and
    /// treated as fatal.
    pub fn stamp_event(&self) -> LamportClock {
        let prev = self.clock.fetch_add(1, Ordering::SeqCst);
        if prev == u64::MAX {
            panic!("logical clock overflow in process {}", self.process);
        }
        LamportClock(prev)
    }

    /// Merge a clock received from a peer: `clock = max(clock, received)`.
    pub fn on_receive_clock(&self, received: LamportClock) {
        self.clock.fetch_max(received.value(), Ordering::SeqCst);
    }

    /// The current value, as piggybacked on outgoing messages.
    pub fn current(&self) -> LamportClock {
        LamportClock(self.clock.load(Ordering::SeqCst))
    }
}

/// Decoded frame header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    /// Full frame length in bytes, header included. Always >= 16.
    pub total_length: u64,
    /// Sender clock at send time.
    pub clock: LamportClock,
}

impl FrameHeader {
    pub fn payload_length(&self) -> u64 {
        self.total_length - HEADER_LEN as u64
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut buf = [0u8; HEADER_LEN];
        buf[..8].copy_from_slice(&self.total_length.to_be_bytes());
        buf[8..].copy_from_slice(&self.clock.value().to_be_bytes());
        buf
    }

    pub fn decode(bytes: &[u8; HEADER_LEN]) -> Result<Self, ProtocolError> {
        let total_length = u64::from_be_bytes(bytes[..8].try_into().unwrap());
        if total_length < HEADER_LEN as u64 {
            return Err(ProtocolError::HeaderTooShort(total_length));
        }
        let clock = LamportClock(u64::from_be_bytes(bytes[8..].try_into().unwrap()));
        Ok(FrameHeader {
            total_length,
            clock,
        })
    }
}

/// Frame a payload with the sender's current clock. Sending does not
/// advance the clock.
pub fn encode_frame(cell: &ClockCell, payload: &[u8]) -> Vec<u8> {
    encode_frame_with(cell.current(), payload)
}

/// Frame a payload with an explicit clock value.
pub fn encode_frame_with(clock: LamportClock, payload: &[u8]) -> Vec<u8> {
    let header = FrameHeader {
        total_length: (HEADER_LEN + payload.len()) as u64,
        clock,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&header.encode());
    out.extend_from_slice(payload);
    out
}

/// Incremental events produced while feeding bytes through a [`Framer`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FramerEvent {
    /// A 16-byte header completed; its clock has been applied to the cell.
    HeaderCompleted { clock: LamportClock },
    /// Payload bytes, in order, for the frame whose header last completed.
    Payload(Vec<u8>),
    /// The frame whose header last completed has been fully consumed.
    FrameCompleted,
}

/// Receive-side framing state for one connection direction.
///
/// Tracks `remaining` (payload bytes of the current frame not yet seen)
/// and buffers partial headers, so reads may split or span frames
/// arbitrarily. One `Framer` per connection per direction; callers
/// serialize `feed` calls per connection.
#[derive(Debug, Default)]
pub struct Framer {
    partial_header: Vec<u8>,
    remaining: u64,
    poisoned: bool,
}

impl Framer {
    pub fn new() -> Self {
        Framer::default()
    }

    /// Payload bytes of the current frame still outstanding.
    pub fn remaining(&self) -> u64 {
        self.remaining
    }

    /// True when the stream position is at a frame boundary, i.e. EOF
    /// here would be clean.
    pub fn at_frame_boundary(&self) -> bool {
        self.remaining == 0 && self.partial_header.is_empty()
    }

    /// True once a protocol error has been observed.
    pub fn is_poisoned(&self) -> bool {
        self.poisoned
    }

    /// Consume one chunk of raw stream bytes. Strips every complete
    /// header, applies each piggybacked clock to `cell` exactly once at
    /// the moment its header completes, and returns the application
    /// payload bytes plus the clocks observed.
    pub fn feed_bytes(
        &mut self,
        cell: &ClockCell,
        chunk: &[u8],
    ) -> Result<(Vec<u8>, Vec<LamportClock>), ProtocolError> {
        let mut payload = Vec::new();
        let mut clocks = Vec::new();
        for event in self.feed(cell, chunk)? {
            match event {
                FramerEvent::HeaderCompleted { clock } => clocks.push(clock),
                FramerEvent::Payload(bytes) => payload.extend_from_slice(&bytes),
                FramerEvent::FrameCompleted => {}
            }
        }
        Ok((payload, clocks))
    }

    /// Like [`Framer::feed_bytes`] but keeps frame boundaries visible.
    pub fn feed(
        &mut self,
        cell: &ClockCell,
        mut chunk: &[u8],
    ) -> Result<Vec<FramerEvent>, ProtocolError> {
        if self.poisoned {
            return Err(ProtocolError::Poisoned);
        }
        let mut events = Vec::new();
        while !chunk.is_empty() {
            if self.remaining > 0 {
                let take = (self.remaining).min(chunk.len() as u64) as usize;
                events.push(FramerEvent::Payload(chunk[..take].to_vec()));
                self.remaining -= take as u64;
                chunk = &chunk[take..];
                if self.remaining == 0 {
                    events.push(FramerEvent::FrameCompleted);
                }
                continue;
            }
            let need = HEADER_LEN - self.partial_header.len();
            let take = need.min(chunk.len());
            self.partial_header.extend_from_slice(&chunk[..take]);
            chunk = &chunk[take..];
            if self.partial_header.len() < HEADER_LEN {
                break;
            }
            let raw: [u8; HEADER_LEN] = self.partial_header[..].try_into().unwrap();
            self.partial_header.clear();
            let header = match FrameHeader::decode(&raw) {
                Ok(h) => h,
                Err(e) => {
                    self.poisoned = true;
                    return Err(e);
                }
            };
            cell.on_receive_clock(header.clock);
            events.push(FramerEvent::HeaderCompleted {
                clock: header.clock,
            });
            self.remaining = header.payload_length();
            if self.remaining == 0 {
                events.push(FramerEvent::FrameCompleted);
            }
        }
        Ok(events)
    }

    /// Report end of stream. Clean at a frame boundary, an error inside
    /// a header or payload.
    pub fn finish(&mut self) -> Result<(), ProtocolError> {
        if self.poisoned {
            return Err(ProtocolError::Poisoned);
        }
        if self.remaining > 0 {
            self.poisoned = true;
            return Err(ProtocolError::TruncatedFrame(self.remaining));
        }
        if !self.partial_header.is_empty() {
            self.poisoned = true;
            return Err(ProtocolError::TruncatedHeader(self.partial_header.len()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(name: &str) -> ClockCell {
        ClockCell::new(ProcessId::new(name).unwrap())
    }

    #[test]
    fn fresh_cell_stamps_zero_then_one() {
        let c = cell("S");
        assert_eq!(c.stamp_event(), LamportClock(0));
        assert_eq!(c.stamp_event(), LamportClock(1));
        assert_eq!(c.current(), LamportClock(2));
    }

    #[test]
    fn seventeenth_stamp_is_sixteen() {
        let c = cell("S");
        let mut last = LamportClock(0);
        for _ in 0..17 {
            last = c.stamp_event();
        }
        assert_eq!(last, LamportClock(16));
    }

    #[test]
    fn receive_merges_to_max_without_increment() {
        let c = cell("S");
        for _ in 0..6 {
            c.stamp_event();
        }
        c.on_receive_clock(LamportClock(10));
        // the next stamped event picks up the merged value
        assert_eq!(c.stamp_event(), LamportClock(10));
    }

    #[test]
    fn receive_of_smaller_clock_is_a_no_op() {
        let c = cell("S");
        for _ in 0..9 {
            c.stamp_event();
        }
        c.on_receive_clock(LamportClock(3));
        assert_eq!(c.current(), LamportClock(9));
    }

    #[test]
    fn receive_then_stamp_reproduces_client_rejoin() {
        // local clock 10, received 14 -> next stamped event gets 14
        let c = cell("C");
        for _ in 0..10 {
            c.stamp_event();
        }
        c.on_receive_clock(LamportClock(14));
        assert_eq!(c.stamp_event(), LamportClock(14));
    }

    #[test]
    fn concurrent_stamps_are_unique() {
        use std::sync::Arc;
        let c = Arc::new(cell("S"));
        let mut handles = Vec::new();
        for _ in 0..8 {
            let c = Arc::clone(&c);
            handles.push(std::thread::spawn(move || {
                (0..1000).map(|_| c.stamp_event().value()).collect::<Vec<_>>()
            }));
        }
        let mut seen: Vec<u64> = handles
            .into_iter()
            .flat_map(|h| h.join().unwrap())
            .collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 8000);
        assert_eq!(c.current(), LamportClock(8000));
    }

    #[test]
    fn encode_frame_layout() {
        let c = cell("S");
        for _ in 0..10 {
            c.stamp_event();
        }
        let frame = encode_frame(&c, b"abcd");
        assert_eq!(frame.len(), 20);
        assert_eq!(u64::from_be_bytes(frame[..8].try_into().unwrap()), 20);
        assert_eq!(u64::from_be_bytes(frame[8..16].try_into().unwrap()), 10);
        assert_eq!(&frame[16..], b"abcd");
        // sending does not advance the clock
        assert_eq!(c.current(), LamportClock(10));
    }

    #[test]
    fn empty_payload_is_header_only() {
        let c = cell("S");
        let frame = encode_frame(&c, b"");
        assert_eq!(frame.len(), 16);
        assert_eq!(u64::from_be_bytes(frame[..8].try_into().unwrap()), 16);
    }

    #[test]
    fn frame_round_trips_through_framer() {
        let frame = encode_frame_with(LamportClock(14), b"abc");
        let receiver = cell("S");
        let mut framer = Framer::new();
        let (payload, clocks) = framer.feed_bytes(&receiver, &frame).unwrap();
        assert_eq!(payload, b"abc");
        assert_eq!(clocks, vec![LamportClock(14)]);
        assert!(framer.at_frame_boundary());
    }

    #[test]
    fn whole_frame_in_one_chunk() {
        let frame = encode_frame_with(LamportClock(7), b"wxyz");
        assert_eq!(frame.len(), 20);
        let receiver = cell("R");
        let mut framer = Framer::new();
        let (payload, clocks) = framer.feed_bytes(&receiver, &frame).unwrap();
        assert_eq!(payload.len(), 4);
        assert_eq!(clocks.len(), 1);
        assert_eq!(receiver.current(), LamportClock(7));
    }

    #[test]
    fn frame_split_ten_five_five() {
        let frame = encode_frame_with(LamportClock(9), b"abcd");
        let receiver = cell("R");
        let mut framer = Framer::new();

        let (p1, c1) = framer.feed_bytes(&receiver, &frame[..10]).unwrap();
        assert!(p1.is_empty() && c1.is_empty());
        assert_eq!(receiver.current(), LamportClock(0));

        let (p2, c2) = framer.feed_bytes(&receiver, &frame[10..15]).unwrap();
        assert!(p2.is_empty() && c2.is_empty());

        // header completes inside this chunk; clock applied exactly once
        let (p3, c3) = framer.feed_bytes(&receiver, &frame[15..]).unwrap();
        assert_eq!(p3, b"abcd");
        assert_eq!(c3, vec![LamportClock(9)]);
        assert_eq!(receiver.current(), LamportClock(9));
    }

    #[test]
    fn chunk_spanning_two_frames() {
        let mut stream = encode_frame_with(LamportClock(1), b"aaaa");
        stream.extend_from_slice(&encode_frame_with(LamportClock(2), b"bbbb"));
        let receiver = cell("R");
        let mut framer = Framer::new();

        // first 16 bytes: frame A header only
        let (p, c) = framer.feed_bytes(&receiver, &stream[..16]).unwrap();
        assert!(p.is_empty());
        assert_eq!(c.len(), 1);

        // tail of A plus the first 8 bytes of B's header
        let (p, c) = framer.feed_bytes(&receiver, &stream[16..28]).unwrap();
        assert_eq!(p, b"aaaa");
        assert!(c.is_empty(), "B's clock must wait for its full header");

        let (p, c) = framer.feed_bytes(&receiver, &stream[28..]).unwrap();
        assert_eq!(p, b"bbbb");
        assert_eq!(c, vec![LamportClock(2)]);
    }

    #[test]
    fn malformed_header_poisons_the_framer() {
        let receiver = cell("R");
        let mut framer = Framer::new();
        let mut bad = [0u8; 16];
        bad[..8].copy_from_slice(&15u64.to_be_bytes());
        assert_eq!(
            framer.feed_bytes(&receiver, &bad),
            Err(ProtocolError::HeaderTooShort(15))
        );
        assert!(framer.is_poisoned());
        assert_eq!(
            framer.feed_bytes(&receiver, b"x"),
            Err(ProtocolError::Poisoned)
        );
    }

    #[test]
    fn finish_mid_frame_is_an_error() {
        let receiver = cell("R");
        let mut framer = Framer::new();
        let frame = encode_frame_with(LamportClock(3), b"abcd");
        framer.feed_bytes(&receiver, &frame[..18]).unwrap();
        assert_eq!(framer.finish(), Err(ProtocolError::TruncatedFrame(2)));
    }
}
