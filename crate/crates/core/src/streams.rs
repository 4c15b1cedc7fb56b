//! Stream sequencing, fragmentation, and reassembly.
//!
//! Streams are the unit of ordering: each carries its own SSN sequence,
//! so a gap on one stream never delays delivery on another. Messages
//! larger than one DATA chunk are split into fragments that share an
//! SSN and occupy consecutive TSNs; the first carries the B flag, the
//! last the E flag.

use crate::types::{AssocId, Ssn};
use crate::wire::DataChunk;
use std::collections::HashMap;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use thiserror::Error;

/// Largest DATA payload per chunk: the 1232-byte MTU minus the common
/// header, DATA chunk header, and room to bundle a SACK.
pub const MAX_DATA_PAYLOAD: usize = 1184;
/// Largest user message accepted for sending and reassembly.
pub const MAX_MESSAGE_SIZE: usize = 2 * 1024 * 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StreamError {
    #[error("stream {sid} outside the negotiated range")]
    UnknownStream { sid: u16 },
    #[error("message exceeds {MAX_MESSAGE_SIZE} bytes")]
    MessageTooLarge,
    #[error("empty messages cannot be sent")]
    EmptyMessage,
    /// Peer buffered more unreassembled data than we are willing to
    /// hold; the association must be aborted.
    #[error("reassembly buffer overflow")]
    ReassemblyOverflow,
}

/// One fragment of an outbound message; the reliability layer turns it
/// into a DATA chunk by assigning a TSN.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageFragment {
    pub sid: u16,
    pub ssn: u16,
    pub ppid: u32,
    pub begin: bool,
    pub end: bool,
    pub payload: Vec<u8>,
}

/// Per-stream outbound SSN counters.
#[derive(Debug)]
pub struct OutboundStreams {
    next_ssn: Vec<Ssn>,
}

impl OutboundStreams {
    pub fn new(num_streams: u16) -> OutboundStreams {
        OutboundStreams { next_ssn: vec![Ssn(0); num_streams as usize] }
    }

    pub fn num_streams(&self) -> u16 {
        self.next_ssn.len() as u16
    }

    /// Splits a message into `ceil(len / max_payload)` fragments, all
    /// stamped with the stream's next SSN.
    pub fn fragment_message(
        &mut self,
        sid: u16,
        ppid: u32,
        payload: &[u8],
        max_payload: usize,
    ) -> Result<Vec<MessageFragment>, StreamError> {
        let ssn = match self.next_ssn.get_mut(sid as usize) {
            Some(ssn) => ssn,
            None => return Err(StreamError::UnknownStream { sid }),
        };
        if payload.is_empty() {
            return Err(StreamError::EmptyMessage);
        }
        if payload.len() > MAX_MESSAGE_SIZE {
            return Err(StreamError::MessageTooLarge);
        }
        let assigned = *ssn;
        *ssn = ssn.next();
        let pieces: Vec<&[u8]> = payload.chunks(max_payload).collect();
        let last = pieces.len() - 1;
        Ok(pieces
            .into_iter()
            .enumerate()
            .map(|(i, piece)| MessageFragment {
                sid,
                ssn: assigned.0,
                ppid,
                begin: i == 0,
                end: i == last,
                payload: piece.to_vec(),
            })
            .collect())
    }
}

/// A fully reassembled, in-order message ready for the application,
/// together with the ancillary receive info a one-to-many consumer
/// needs to tell peers apart.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceivedMessage {
    pub sid: u16,
    pub ssn: u16,
    pub ppid: u32,
    /// Association the message arrived on; stamped by the association
    /// when the message is queued (zero inside the reassembler).
    pub aid: AssocId,
    /// Remote address of the packet that completed the message.
    pub src: SocketAddr,
    pub payload: Vec<u8>,
}

/// Placeholder `src` until the owning association stamps the real one.
pub(crate) const UNSTAMPED_SRC: SocketAddr =
    SocketAddr::new(IpAddr::V4(Ipv4Addr::UNSPECIFIED), 0);

/// Result of feeding one DATA chunk to the inbound side.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct StreamIntake {
    /// Messages that became deliverable, already in per-stream order.
    pub messages: Vec<ReceivedMessage>,
    /// A first fragment arrived for a message that is still incomplete.
    pub partial_started: bool,
}

/// Fragments of one in-progress message, keyed by relative TSN.
#[derive(Debug, Default)]
struct PartialMessage {
    // rel_tsn -> (begin, end, payload); completeness = a begin fragment,
    // an end fragment, and every TSN in between present.
    fragments: HashMap<u32, (bool, bool, Vec<u8>)>,
    begin_at: Option<u32>,
    end_at: Option<u32>,
    bytes: usize,
}

impl PartialMessage {
    fn is_complete(&self) -> bool {
        match (self.begin_at, self.end_at) {
            (Some(b), Some(e)) => {
                b <= e && self.fragments.len() as u64 == u64::from(e - b) + 1
            }
            _ => false,
        }
    }

    fn assemble(mut self) -> (u32, Vec<u8>) {
        let b = self.begin_at.expect("assemble on complete message");
        let e = self.end_at.expect("assemble on complete message");
        let mut payload = Vec::with_capacity(self.bytes);
        for rel in b..=e {
            payload.extend_from_slice(&self.fragments.remove(&rel).expect("contiguous run").2);
        }
        (b, payload)
    }
}

#[derive(Debug, Default)]
struct InboundStream {
    next_ssn: Ssn,
    /// Complete messages waiting for earlier SSNs, with their payload
    /// and ppid. Exact-keyed by raw SSN so wraparound needs no care.
    ready: HashMap<u16, (u32, Vec<u8>)>,
    partial: HashMap<u16, PartialMessage>,
}

/// Inbound half: reassembles fragments and releases messages in SSN
/// order per stream, independently across streams.
#[derive(Debug)]
pub struct InboundStreams {
    streams: Vec<InboundStream>,
    /// Advertised receive window base; parked bytes shrink it.
    rwnd_budget: u32,
    /// Payload bytes held in `ready` and `partial` across all streams.
    parked_bytes: usize,
    unknown_stream_chunks: u64,
}

impl InboundStreams {
    pub fn new(num_streams: u16, rwnd_budget: u32) -> InboundStreams {
        InboundStreams {
            streams: (0..num_streams).map(|_| InboundStream::default()).collect(),
            rwnd_budget,
            parked_bytes: 0,
            unknown_stream_chunks: 0,
        }
    }

    pub fn num_streams(&self) -> u16 {
        self.streams.len() as u16
    }

    pub fn parked_bytes(&self) -> usize {
        self.parked_bytes
    }

    pub fn unknown_stream_chunks(&self) -> u64 {
        self.unknown_stream_chunks
    }

    /// Window to advertise in SACKs: the budget less whatever is parked
    /// awaiting reassembly or reordering.
    pub fn advertised_rwnd(&self) -> u32 {
        self.rwnd_budget.saturating_sub(self.parked_bytes.min(u32::MAX as usize) as u32)
    }

    /// Feeds one TSN-deduplicated DATA chunk. `rel_tsn` is the chunk's
    /// offset from the peer's initial TSN, so fragment runs compare as
    /// plain integers.
    pub fn on_data_chunk(
        &mut self,
        rel_tsn: u32,
        chunk: &DataChunk,
    ) -> Result<StreamIntake, StreamError> {
        let stream = match self.streams.get_mut(chunk.sid as usize) {
            Some(s) => s,
            None => {
                self.unknown_stream_chunks += 1;
                return Err(StreamError::UnknownStream { sid: chunk.sid });
            }
        };
        let mut intake = StreamIntake::default();

        // SSNs at or past next_ssn are live; anything else was already
        // delivered and can only be a stray duplicate.
        let live = chunk.ssn == stream.next_ssn.0
            || Ssn(chunk.ssn).after(stream.next_ssn)
            || stream.partial.contains_key(&chunk.ssn);
        if !live {
            return Ok(intake);
        }

        let partial = stream.partial.entry(chunk.ssn).or_default();
        if partial.fragments.contains_key(&rel_tsn) {
            return Ok(intake);
        }
        partial.fragments.insert(rel_tsn, (chunk.begin, chunk.end, chunk.payload.clone()));
        partial.bytes += chunk.payload.len();
        if chunk.begin {
            partial.begin_at = Some(rel_tsn);
        }
        if chunk.end {
            partial.end_at = Some(rel_tsn);
        }
        self.parked_bytes += chunk.payload.len();
        if self.parked_bytes > MAX_MESSAGE_SIZE {
            return Err(StreamError::ReassemblyOverflow);
        }

        if partial.is_complete() {
            let ppid = chunk.ppid;
            let partial = stream.partial.remove(&chunk.ssn).expect("just inserted");
            let (_, payload) = partial.assemble();
            stream.ready.insert(chunk.ssn, (ppid, payload));
        } else if chunk.begin {
            intake.partial_started = true;
        }

        // Release every consecutive ready message from next_ssn up.
        while let Some((ppid, payload)) = stream.ready.remove(&stream.next_ssn.0) {
            self.parked_bytes -= payload.len();
            intake.messages.push(ReceivedMessage {
                sid: chunk.sid,
                ssn: stream.next_ssn.0,
                ppid,
                aid: AssocId(0),
                src: UNSTAMPED_SRC,
                payload,
            });
            stream.next_ssn = stream.next_ssn.next();
        }
        Ok(intake)
    }
}
