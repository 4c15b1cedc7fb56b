//! TSN-level reliability: inbound acknowledgment state and the outbound
//! retransmission queue.
//!
//! Inbound, every DATA chunk lands in a tracker that dedups TSNs,
//! advances the cumulative ack point, and renders the out-of-order set
//! into SACK gap blocks. Outbound, fragments are assigned TSNs at queue
//! time and retire only when a SACK covers them; loss is repaired by
//! fast retransmit (three missing reports) or timer expiry.
//!
//! All internal arithmetic uses TSNs relative to the association's
//! initial TSN, so ordering is plain integer comparison.

use crate::streams::MessageFragment;
use crate::types::Tsn;
use crate::wire::{DataChunk, GapBlock, SackBody, DATA_CHUNK_HEADER_SIZE};
use std::collections::BTreeSet;
use std::collections::VecDeque;
use thiserror::Error;

/// Transmissions allowed per chunk before the peer is declared
/// unreachable (the first send counts).
pub const MAX_CHUNK_TRANSMITS: u32 = 8;
/// SACK duplicate-TSN report list cap per SACK.
const MAX_DUP_REPORTS: usize = 32;
/// Gap block cap keeping any SACK chunk well under one MTU; blocks past
/// the cap go unreported and their chunks are simply retransmitted.
const MAX_GAP_BLOCKS: usize = 128;
/// Missing reports that trigger a fast retransmit.
const FAST_RETRANSMIT_THRESHOLD: u8 = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReliabilityError {
    #[error("chunk transmitted {MAX_CHUNK_TRANSMITS} times without acknowledgment")]
    RetransmitLimit,
}

/// Classification of an arriving TSN.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsnIntake {
    /// Never seen before; `rel_tsn` is its offset from the initial TSN.
    Fresh { rel_tsn: u32 },
    Duplicate,
}

/// Receiver-side TSN state.
#[derive(Debug)]
pub struct InboundTsns {
    initial: Tsn,
    /// Every rel TSN below this has been received.
    next_expected: u32,
    /// Received out-of-order rel TSNs (all >= next_expected).
    received: BTreeSet<u32>,
    dups_for_sack: Vec<Tsn>,
    total_duplicates: u64,
}

impl InboundTsns {
    pub fn new(peer_initial_tsn: Tsn) -> InboundTsns {
        InboundTsns {
            initial: peer_initial_tsn,
            next_expected: 0,
            received: BTreeSet::new(),
            dups_for_sack: Vec::new(),
            total_duplicates: 0,
        }
    }

    fn rel(&self, tsn: Tsn) -> u32 {
        tsn.0.wrapping_sub(self.initial.0)
    }

    /// Cumulative ack: the highest TSN below which everything arrived.
    /// Before any data this is initial-1 by convention.
    pub fn cumulative_tsn(&self) -> Tsn {
        Tsn(self.initial.0.wrapping_add(self.next_expected).wrapping_sub(1))
    }

    pub fn has_gaps(&self) -> bool {
        !self.received.is_empty()
    }

    pub fn total_duplicates(&self) -> u64 {
        self.total_duplicates
    }

    pub fn on_tsn(&mut self, tsn: Tsn) -> TsnIntake {
        let rel = self.rel(tsn);
        // Serial comparison in relative space: "old" means behind
        // next_expected by less than half the ring.
        let behind = self.next_expected.wrapping_sub(rel);
        if behind != 0 && behind < 0x8000_0000 {
            self.note_duplicate(tsn);
            return TsnIntake::Duplicate;
        }
        if rel == self.next_expected {
            self.next_expected = self.next_expected.wrapping_add(1);
            while self.received.remove(&self.next_expected) {
                self.next_expected = self.next_expected.wrapping_add(1);
            }
            return TsnIntake::Fresh { rel_tsn: rel };
        }
        if !self.received.insert(rel) {
            self.note_duplicate(tsn);
            return TsnIntake::Duplicate;
        }
        TsnIntake::Fresh { rel_tsn: rel }
    }

    fn note_duplicate(&mut self, tsn: Tsn) {
        self.total_duplicates += 1;
        if self.dups_for_sack.len() < MAX_DUP_REPORTS {
            self.dups_for_sack.push(tsn);
        }
    }

    /// Renders current state into a SACK and drains the duplicate
    /// report list. Gap offsets are relative to the cumulative TSN;
    /// blocks that would overflow the 16-bit offset are omitted (their
    /// chunks simply get retransmitted).
    pub fn build_sack(&mut self, a_rwnd: u32) -> SackBody {
        let cum_rel = self.next_expected.wrapping_sub(1);
        let mut gap_blocks: Vec<GapBlock> = Vec::new();
        for &rel in &self.received {
            let off64 = u64::from(rel.wrapping_sub(cum_rel));
            if off64 > u64::from(u16::MAX) {
                break;
            }
            let off = off64 as u16;
            match gap_blocks.last_mut() {
                Some(last) if last.end + 1 == off => last.end = off,
                _ => {
                    if gap_blocks.len() == MAX_GAP_BLOCKS {
                        break;
                    }
                    gap_blocks.push(GapBlock { start: off, end: off });
                }
            }
        }
        SackBody {
            cumulative_tsn_ack: self.cumulative_tsn(),
            a_rwnd,
            gap_blocks,
            duplicate_tsns: std::mem::take(&mut self.dups_for_sack),
        }
    }
}

/// One queued outbound DATA chunk and its delivery bookkeeping.
#[derive(Debug, Clone)]
pub struct OutChunk {
    pub chunk: DataChunk,
    rel: u32,
    /// Times put on the wire; 0 = still waiting for window.
    pub send_count: u32,
    /// Covered by a SACK gap block; kept until the cumulative ack
    /// passes it, but never retransmitted.
    pub acked: bool,
    missing_reports: u8,
    fast_retransmitted: bool,
}

/// What a SACK did to the outbound queue.
#[derive(Debug, Default)]
pub struct SackOutcome {
    /// Cumulative ack moved forward.
    pub advanced: bool,
    /// SACK was older than one already processed and was ignored.
    pub stale: bool,
    /// Chunks to retransmit immediately (three missing reports).
    pub fast_retransmit: Vec<DataChunk>,
    /// Nothing sent remains unacknowledged.
    pub all_acked: bool,
}

/// Sender-side TSN queue with flow control and loss recovery.
#[derive(Debug)]
pub struct OutboundTsns {
    initial: Tsn,
    next_rel: u32,
    queue: VecDeque<OutChunk>,
    /// Relative cumulative ack; chunks at or below are gone. Starts at
    /// "-1" (wrapping) meaning nothing acknowledged.
    cum_rel: u32,
    peer_arwnd: u32,
    /// Payload bytes sent at least once and not yet acknowledged.
    outstanding: usize,
    /// Payload bytes in the queue (sent or not).
    buffered: usize,
    total_retransmits: u64,
    total_fast_retransmits: u64,
}

impl OutboundTsns {
    pub fn new(local_initial_tsn: Tsn, peer_arwnd: u32) -> OutboundTsns {
        OutboundTsns {
            initial: local_initial_tsn,
            next_rel: 0,
            queue: VecDeque::new(),
            cum_rel: u32::MAX,
            peer_arwnd,
            outstanding: 0,
            buffered: 0,
            total_retransmits: 0,
            total_fast_retransmits: 0,
        }
    }

    pub fn buffered_bytes(&self) -> usize {
        self.buffered
    }

    pub fn outstanding_bytes(&self) -> usize {
        self.outstanding
    }

    pub fn peer_rwnd(&self) -> u32 {
        self.peer_arwnd
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn total_retransmits(&self) -> u64 {
        self.total_retransmits
    }

    pub fn total_fast_retransmits(&self) -> u64 {
        self.total_fast_retransmits
    }

    /// Stamps fragments with consecutive TSNs and queues them. TSNs are
    /// assigned here, at queue time, even if the window defers sending.
    pub fn assign_and_queue(&mut self, fragments: Vec<MessageFragment>) {
        for f in fragments {
            let rel = self.next_rel;
            self.next_rel = self.next_rel.wrapping_add(1);
            self.buffered += f.payload.len();
            self.queue.push_back(OutChunk {
                chunk: DataChunk {
                    tsn: Tsn(self.initial.0.wrapping_add(rel)),
                    sid: f.sid,
                    ssn: f.ssn,
                    ppid: f.ppid,
                    begin: f.begin,
                    end: f.end,
                    payload: f.payload,
                },
                rel,
                send_count: 0,
                acked: false,
                missing_reports: 0,
                fast_retransmitted: false,
            });
        }
    }

    /// Pulls never-sent chunks that fit the peer window and a packet of
    /// `max_bytes`, marking them transmitted. Window rules: a zero
    /// window defers everything; otherwise with nothing outstanding the
    /// head chunk may always go (so a window smaller than one chunk
    /// cannot wedge the association).
    pub fn pop_new_sendable(&mut self, max_bytes: usize) -> Vec<DataChunk> {
        let mut batch = Vec::new();
        let mut used = 0usize;
        for oc in self.queue.iter_mut() {
            if oc.send_count > 0 || oc.acked {
                continue;
            }
            let len = oc.chunk.payload.len();
            if self.peer_arwnd == 0 {
                break;
            }
            let window_ok = self.outstanding + len <= self.peer_arwnd as usize
                || self.outstanding == 0;
            if !window_ok {
                break;
            }
            if used + DATA_CHUNK_HEADER_SIZE + len > max_bytes {
                break;
            }
            used += DATA_CHUNK_HEADER_SIZE + len;
            oc.send_count = 1;
            self.outstanding += len;
            batch.push(oc.chunk.clone());
        }
        batch
    }

    /// True if a window opening or new capacity could make
    /// [`OutboundTsns::pop_new_sendable`] return chunks.
    pub fn has_unsent(&self) -> bool {
        self.queue.iter().any(|oc| oc.send_count == 0 && !oc.acked)
    }

    fn covered_by(sack_cum_rel: u32, gaps: &[(u32, u32)], rel: u32) -> bool {
        // All arithmetic relative; rel <= cum in serial terms.
        let delta = rel.wrapping_sub(sack_cum_rel);
        if delta == 0 || delta >= 0x8000_0000 {
            return true;
        }
        gaps.iter().any(|&(s, e)| {
            let off = rel.wrapping_sub(sack_cum_rel);
            off >= s && off <= e
        })
    }

    /// Applies a SACK: retires acknowledged chunks, counts missing
    /// reports, and surfaces fast retransmissions. Stale SACKs (older
    /// cumulative ack than already seen) are ignored; replays of the
    /// current one are harmless.
    pub fn on_sack(&mut self, sack: &SackBody) -> SackOutcome {
        let mut outcome = SackOutcome::default();
        let sack_cum_rel = sack.cumulative_tsn_ack.0.wrapping_sub(self.initial.0);
        // sack_cum_rel == u32::MAX means "nothing received" — equal to
        // our starting point, processable. Anything serially behind
        // cum_rel is stale.
        let behind = self.cum_rel.wrapping_sub(sack_cum_rel);
        if behind != 0 && behind < 0x8000_0000 {
            outcome.stale = true;
            return outcome;
        }
        // Never ack beyond what was actually assigned.
        let ahead = sack_cum_rel.wrapping_sub(self.cum_rel);
        if ahead != 0 && ahead >= self.next_rel.wrapping_sub(self.cum_rel) {
            outcome.stale = true;
            return outcome;
        }

        outcome.advanced = sack_cum_rel != self.cum_rel;
        self.cum_rel = sack_cum_rel;
        self.peer_arwnd = sack.a_rwnd;

        while let Some(front) = self.queue.front() {
            let delta = front.rel.wrapping_sub(sack_cum_rel);
            if delta != 0 && delta < 0x8000_0000 {
                break;
            }
            let oc = self.queue.pop_front().expect("peeked front");
            self.buffered -= oc.chunk.payload.len();
            if oc.send_count > 0 && !oc.acked {
                self.outstanding -= oc.chunk.payload.len();
            }
            debug_assert!(oc.send_count > 0, "acked chunk was never sent");
        }

        let gaps: Vec<(u32, u32)> =
            sack.gap_blocks.iter().map(|g| (u32::from(g.start), u32::from(g.end))).collect();
        let highest_gap_rel = gaps
            .iter()
            .map(|&(_, e)| sack_cum_rel.wrapping_add(e))
            .max_by_key(|&r| r.wrapping_sub(sack_cum_rel));

        for oc in self.queue.iter_mut() {
            if Self::covered_by(sack_cum_rel, &gaps, oc.rel) {
                if !oc.acked {
                    oc.acked = true;
                    if oc.send_count > 0 {
                        self.outstanding -= oc.chunk.payload.len();
                    }
                }
                continue;
            }
            // Missing report: the peer acknowledged something beyond
            // this chunk while still not listing it.
            if let Some(high) = highest_gap_rel {
                let below_high = high.wrapping_sub(oc.rel) < 0x8000_0000 && high != oc.rel;
                if oc.send_count > 0 && !oc.acked && below_high {
                    oc.missing_reports = oc.missing_reports.saturating_add(1);
                    if oc.missing_reports >= FAST_RETRANSMIT_THRESHOLD && !oc.fast_retransmitted {
                        oc.fast_retransmitted = true;
                        oc.send_count += 1;
                        self.total_retransmits += 1;
                        self.total_fast_retransmits += 1;
                        outcome.fast_retransmit.push(oc.chunk.clone());
                    }
                }
            }
        }

        outcome.all_acked = self.outstanding == 0;
        outcome
    }

    /// Timer-driven recovery: bundles the earliest unacknowledged sent
    /// chunk plus as many following ones as fit `max_bytes`, bumping
    /// each send count. Errors once a chunk exhausts its transmissions.
    pub fn on_rto_expiry(&mut self, max_bytes: usize) -> Result<Vec<DataChunk>, ReliabilityError> {
        let mut batch = Vec::new();
        let mut used = 0usize;
        for oc in self.queue.iter_mut() {
            if oc.acked || oc.send_count == 0 {
                continue;
            }
            let len = DATA_CHUNK_HEADER_SIZE + oc.chunk.payload.len();
            if used + len > max_bytes {
                break;
            }
            if oc.send_count >= MAX_CHUNK_TRANSMITS {
                return Err(ReliabilityError::RetransmitLimit);
            }
            used += len;
            oc.send_count += 1;
            self.total_retransmits += 1;
            batch.push(oc.chunk.clone());
        }
        Ok(batch)
    }
}
