//! Association state machine and endpoint chunk dispatch.
//!
//! Everything here is sans-io: handlers consume one event — an inbound
//! chunk, an application call, a timer expiry — mutate state, and
//! return a [`Transition`] of packets to transmit and timer operations.
//! Drivers in [`crate::api`] own sockets, clocks, and blocking.
//!
//! The endpoint answers INIT without creating any association state:
//! all handshake context rides in the signed cookie and comes back with
//! COOKIE-ECHO. Associations exist only after the echo verifies.

use crate::cookie::{make_cookie, verify_cookie, StateCookie};
use crate::paths::{PathTable, HEARTBEAT_INTERVAL_MS};
use crate::reliability::{InboundTsns, OutboundTsns, ReliabilityError, TsnIntake};
use crate::streams::{
    InboundStreams, OutboundStreams, ReceivedMessage, StreamError, MAX_DATA_PAYLOAD,
};
use crate::types::{AssocId, Tsn};
use crate::wire::{
    decode_packet, encode_packet, Chunk, CommonHeader, DataChunk, InitBody, Parameter,
    COMMON_HEADER_SIZE,
};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use thiserror::Error;

/// Cap on bytes an application may have queued (staged plus
/// unacknowledged) per association before sends block.
pub const SEND_BUFFER_CAP: usize = 4 * 1024 * 1024;
/// Guard bound on a graceful shutdown before the association is torn
/// down regardless of outstanding handshake chunks.
pub const SHUTDOWN_GUARD_MS: u64 = 5000;
/// Peer addresses learned per association, hostile-spray bound.
const MAX_PATHS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssocState {
    Closed,
    CookieWait,
    CookieEchoed,
    Established,
    ShutdownPending,
    ShutdownSent,
    ShutdownReceived,
    ShutdownAckSent,
}

/// Timers an association may hold. Drivers key them per association.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimerId {
    /// INIT retransmission, doubling backoff.
    Init,
    /// COOKIE-ECHO retransmission, doubling backoff.
    Cookie,
    /// DATA (and SHUTDOWN) retransmission.
    Rto,
    /// Per-path probe.
    Heartbeat(SocketAddr),
    /// Hard bound on the shutdown sequence.
    ShutdownGuard,
    /// Deferred bundling flush when no_delay is off.
    Flush,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloseReason {
    /// Shutdown sequence completed (or guard-forced after one began).
    Graceful,
    AbortedByPeer,
    /// Local protocol failure forced an ABORT.
    Aborted,
    /// INIT or COOKIE-ECHO retries exhausted.
    HandshakeFailure,
    /// A chunk exhausted its transmission budget.
    PeerUnreachable,
    ShutdownTimeout,
    /// A peer's incoming handshake superseded this outgoing one.
    Replaced,
}

/// Notifications drained by the application layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssocEvent {
    Established,
    Closed(CloseReason),
    PathFailover { from: SocketAddr, to: SocketAddr },
    /// First fragment of a message arrived; the rest is pending.
    PartialDelivery { sid: u16 },
}

/// Association tuning; the defaults match the CLI's.
#[derive(Debug, Clone)]
pub struct InitOptions {
    pub outbound_streams: u16,
    pub max_inbound_streams: u16,
    pub a_rwnd: u32,
    pub rto_initial_ms: u64,
    pub rto_min_ms: u64,
    pub rto_max_ms: u64,
    pub init_timeout_ms: u64,
    /// Transmissions of INIT (or COOKIE-ECHO) before the dial fails.
    pub max_init_attempts: u32,
    pub heartbeat_interval_ms: u64,
    pub cookie_max_age_ms: u64,
    /// Send DATA immediately instead of waiting to fill a packet.
    pub no_delay: bool,
    pub mtu: usize,
}

impl Default for InitOptions {
    fn default() -> InitOptions {
        InitOptions {
            outbound_streams: 10,
            max_inbound_streams: 10,
            a_rwnd: 131072,
            rto_initial_ms: 1000,
            rto_min_ms: 200,
            rto_max_ms: 60000,
            init_timeout_ms: 1000,
            max_init_attempts: 8,
            heartbeat_interval_ms: HEARTBEAT_INTERVAL_MS,
            cookie_max_age_ms: 60000,
            no_delay: true,
            mtu: 1232,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimerOp {
    Start { timer: TimerId, after_ms: u64 },
    Stop { timer: TimerId },
    /// Cancel every timer of the association (terminal states).
    StopAll,
}

/// Side effects of one event: packets are (from-address, to-address,
/// encoded bytes).
#[derive(Debug, Default)]
pub struct Transition {
    pub packets: Vec<(SocketAddr, SocketAddr, Vec<u8>)>,
    pub timers: Vec<TimerOp>,
}

impl Transition {
    fn merge(&mut self, other: Transition) {
        self.packets.extend(other.packets);
        self.timers.extend(other.timers);
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct AssocStats {
    pub failovers: u64,
    pub data_wrong_state: u64,
    pub unknown_chunks: u64,
    /// Staged messages dropped because negotiation shrank the stream
    /// range below their sid.
    pub dropped_messages: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AppSendError {
    #[error("association is closed")]
    NotOpen,
    #[error("association is shutting down")]
    ShuttingDown,
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("send buffer full")]
    BufferFull,
}

#[derive(Debug)]
struct InboundSide {
    tsns: InboundTsns,
    streams: InboundStreams,
}

/// One SCTP association end.
#[derive(Debug)]
pub struct Association {
    pub(crate) aid: AssocId,
    state: AssocState,
    cfg: InitOptions,
    src_port: u16,
    dst_port: u16,
    local_tag: u32,
    peer_tag: u32,
    /// Local address replies leave from; follows the last arrival.
    local_addr: SocketAddr,
    paths: PathTable,
    local_initial_tsn: Tsn,
    inb: Option<InboundSide>,
    outb: Option<OutboundTsns>,
    outs: Option<OutboundStreams>,
    /// Messages accepted before ESTABLISHED, fragmented on promotion.
    staged: VecDeque<(u16, u32, Vec<u8>)>,
    staged_bytes: usize,
    /// Exact INIT chunk for timer-driven re-send.
    init_chunk: Option<Chunk>,
    /// Exact COOKIE-ECHO packet (with any bundled DATA) for re-send.
    cookie_echo_packet: Option<Vec<u8>>,
    handshake_sends: u32,
    handshake_timeout_ms: u64,
    rto_ms: u64,
    rto_armed: bool,
    sack_pending: bool,
    sack_reply_to: Option<SocketAddr>,
    /// DATA awaiting a bundling flush (no_delay off).
    pending_data: Vec<DataChunk>,
    pending_bytes: usize,
    guard_armed: bool,
    closed_reason: Option<CloseReason>,
    pub(crate) recv_q: VecDeque<ReceivedMessage>,
    pub(crate) events: VecDeque<AssocEvent>,
    pub(crate) stats: AssocStats,
    rng: ChaCha8Rng,
}

impl Association {
    /// Client side: builds the INIT and arms its retransmission timer.
    #[allow(clippy::too_many_arguments)]
    pub fn initiate(
        aid: AssocId,
        cfg: InitOptions,
        local_addr: SocketAddr,
        advertised_local_addrs: Vec<SocketAddr>,
        peer_addr: SocketAddr,
        src_port: u16,
        seed: u64,
    ) -> (Association, Transition) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let local_tag = loop {
            let tag = rng.next_u32();
            if tag != 0 {
                break tag;
            }
        };
        let local_initial_tsn = Tsn(rng.next_u32());
        let mut assoc = Association {
            aid,
            state: AssocState::CookieWait,
            src_port,
            dst_port: peer_addr.port(),
            local_tag,
            peer_tag: 0,
            local_addr,
            paths: PathTable::new(peer_addr),
            local_initial_tsn,
            inb: None,
            outb: None,
            outs: None,
            staged: VecDeque::new(),
            staged_bytes: 0,
            init_chunk: None,
            cookie_echo_packet: None,
            handshake_sends: 0,
            handshake_timeout_ms: cfg.init_timeout_ms,
            rto_ms: cfg.rto_initial_ms,
            rto_armed: false,
            sack_pending: false,
            sack_reply_to: None,
            pending_data: Vec::new(),
            pending_bytes: 0,
            guard_armed: false,
            closed_reason: None,
            recv_q: VecDeque::new(),
            events: VecDeque::new(),
            stats: AssocStats::default(),
            rng,
            cfg,
        };
        let init = Chunk::Init(InitBody {
            initiate_tag: assoc.local_tag,
            a_rwnd: assoc.cfg.a_rwnd,
            outbound_streams: assoc.cfg.outbound_streams,
            max_inbound_streams: assoc.cfg.max_inbound_streams,
            initial_tsn: assoc.local_initial_tsn,
            parameters: advertised_local_addrs.iter().map(|&a| Parameter::address(a)).collect(),
        });
        assoc.init_chunk = Some(init.clone());
        assoc.handshake_sends = 1;
        let mut trans = Transition::default();
        let bytes = assoc.encode(0, &[init]);
        trans.packets.push((assoc.local_addr, peer_addr, bytes));
        trans.timers.push(TimerOp::Start { timer: TimerId::Init, after_ms: assoc.handshake_timeout_ms });
        (assoc, trans)
    }

    /// Server side: rebuilt entirely from a verified cookie; the
    /// association starts life established.
    pub fn from_cookie(
        aid: AssocId,
        cfg: InitOptions,
        cookie: &StateCookie,
        local_addr: SocketAddr,
        src_port: u16,
        seed: u64,
    ) -> (Association, Transition) {
        let mut assoc = Association {
            aid,
            state: AssocState::Established,
            src_port,
            dst_port: cookie.peer_addr.port(),
            local_tag: cookie.local_tag,
            peer_tag: cookie.peer_tag,
            local_addr,
            paths: PathTable::new(cookie.peer_addr),
            local_initial_tsn: Tsn(cookie.local_initial_tsn),
            inb: Some(InboundSide {
                tsns: InboundTsns::new(Tsn(cookie.peer_initial_tsn)),
                streams: InboundStreams::new(cookie.inbound_streams, cfg.a_rwnd),
            }),
            outb: Some(OutboundTsns::new(Tsn(cookie.local_initial_tsn), cookie.peer_rwnd)),
            outs: Some(OutboundStreams::new(cookie.outbound_streams)),
            staged: VecDeque::new(),
            staged_bytes: 0,
            init_chunk: None,
            cookie_echo_packet: None,
            handshake_sends: 0,
            handshake_timeout_ms: cfg.init_timeout_ms,
            rto_ms: cfg.rto_initial_ms,
            rto_armed: false,
            sack_pending: false,
            sack_reply_to: None,
            pending_data: Vec::new(),
            pending_bytes: 0,
            guard_armed: false,
            closed_reason: None,
            recv_q: VecDeque::new(),
            events: VecDeque::new(),
            stats: AssocStats::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            cfg,
        };
        assoc.events.push_back(AssocEvent::Established);
        let mut trans = Transition::default();
        assoc.arm_heartbeats(&mut trans);
        (assoc, trans)
    }

    pub fn id(&self) -> AssocId {
        self.aid
    }

    pub fn state(&self) -> AssocState {
        self.state
    }

    /// Stream counts the handshake actually agreed on, as
    /// (outbound, inbound). `None` until the INIT exchange fixed them.
    pub fn negotiated_streams(&self) -> Option<(u16, u16)> {
        match (&self.outs, &self.inb) {
            (Some(outs), Some(inb)) => Some((outs.num_streams(), inb.streams.num_streams())),
            _ => None,
        }
    }

    pub fn local_tag(&self) -> u32 {
        self.local_tag
    }

    pub fn peer_addrs(&self) -> Vec<SocketAddr> {
        self.paths.addrs().collect()
    }

    pub fn primary_path(&self) -> SocketAddr {
        self.paths.primary_addr()
    }

    pub fn current_path(&self) -> SocketAddr {
        self.paths.select_path()
    }

    /// Why the association closed; set exactly once at close.
    pub fn close_reason(&self) -> Option<CloseReason> {
        self.closed_reason
    }

    pub fn assoc_stats(&self) -> AssocStats {
        self.stats
    }

    pub fn retransmit_count(&self) -> u64 {
        self.outb.as_ref().map_or(0, |o| o.total_retransmits())
    }

    pub fn fast_retransmit_count(&self) -> u64 {
        self.outb.as_ref().map_or(0, |o| o.total_fast_retransmits())
    }

    pub fn duplicate_count(&self) -> u64 {
        self.inb.as_ref().map_or(0, |i| i.tsns.total_duplicates())
    }

    /// Bytes of headroom before sends must block.
    pub fn send_capacity(&self) -> usize {
        let used = self.staged_bytes
            + self.outb.as_ref().map_or(0, |o| o.buffered_bytes())
            + self.pending_bytes;
        SEND_BUFFER_CAP.saturating_sub(used)
    }

    /// All outbound data acknowledged and nothing waiting.
    pub fn drained(&self) -> bool {
        self.staged.is_empty()
            && self.pending_data.is_empty()
            && self.outb.as_ref().map_or(true, |o| o.is_empty())
    }

    fn encode(&self, vtag: u32, chunks: &[Chunk]) -> Vec<u8> {
        let header = CommonHeader {
            src_port: self.src_port,
            dst_port: self.dst_port,
            verification_tag: vtag,
            checksum: 0,
        };
        encode_packet(&header, chunks).expect("constructed chunks encode")
    }

    /// Splits chunks into MTU-sized packets toward `to`, control chunks
    /// leading DATA as constructed by callers.
    fn emit(&self, trans: &mut Transition, to: SocketAddr, chunks: Vec<Chunk>) {
        let budget = self.cfg.mtu - COMMON_HEADER_SIZE;
        let mut batch: Vec<Chunk> = Vec::new();
        let mut used = 0usize;
        for chunk in chunks {
            let size = chunk.padded_size();
            if !batch.is_empty() && used + size > budget {
                let bytes = self.encode(self.peer_tag, &std::mem::take(&mut batch));
                trans.packets.push((self.local_addr, to, bytes));
                used = 0;
            }
            used += size;
            batch.push(chunk);
        }
        if !batch.is_empty() {
            trans.packets.push((self.local_addr, to, self.encode(self.peer_tag, &batch)));
        }
    }

    fn arm_heartbeats(&mut self, trans: &mut Transition) {
        let interval = self.cfg.heartbeat_interval_ms;
        for addr in self.paths.addrs().collect::<Vec<_>>() {
            trans.timers.push(TimerOp::Start { timer: TimerId::Heartbeat(addr), after_ms: interval });
        }
    }

    fn learn_path(&mut self, trans: &mut Transition, addr: SocketAddr) {
        if self.paths.len() >= MAX_PATHS || self.paths.contains(addr) {
            return;
        }
        self.paths.add_path(addr);
        if self.state == AssocState::Established {
            trans.timers.push(TimerOp::Start {
                timer: TimerId::Heartbeat(addr),
                after_ms: self.cfg.heartbeat_interval_ms,
            });
        }
    }

    /// Tears the association down with an ABORT to the peer.
    fn abort(&mut self, trans: &mut Transition, reason: CloseReason) {
        if self.peer_tag != 0 {
            let bytes = self.encode(self.peer_tag, &[Chunk::Abort]);
            trans.packets.push((self.local_addr, self.paths.select_path(), bytes));
        }
        self.enter_closed(trans, reason);
    }

    fn enter_closed(&mut self, trans: &mut Transition, reason: CloseReason) {
        self.state = AssocState::Closed;
        self.closed_reason = Some(reason);
        self.events.push_back(AssocEvent::Closed(reason));
        trans.timers.push(TimerOp::StopAll);
    }

    /// Application write. Accepted pre-establishment (staged) and when
    /// established; rejected during shutdown.
    pub fn app_send(
        &mut self,
        _now_ms: u64,
        sid: u16,
        ppid: u32,
        payload: Vec<u8>,
    ) -> Result<Transition, AppSendError> {
        if payload.is_empty() {
            return Err(StreamError::EmptyMessage.into());
        }
        if payload.len() > crate::streams::MAX_MESSAGE_SIZE {
            return Err(StreamError::MessageTooLarge.into());
        }
        match self.state {
            AssocState::CookieWait | AssocState::CookieEchoed => {
                if sid >= self.cfg.outbound_streams {
                    return Err(StreamError::UnknownStream { sid }.into());
                }
                if payload.len() > self.send_capacity() {
                    return Err(AppSendError::BufferFull);
                }
                self.staged_bytes += payload.len();
                self.staged.push_back((sid, ppid, payload));
                Ok(Transition::default())
            }
            AssocState::Established => {
                let num = self.outs.as_ref().expect("established implies streams").num_streams();
                if sid >= num {
                    return Err(StreamError::UnknownStream { sid }.into());
                }
                if payload.len() > self.send_capacity() {
                    return Err(AppSendError::BufferFull);
                }
                let frags = self
                    .outs
                    .as_mut()
                    .expect("established implies streams")
                    .fragment_message(sid, ppid, &payload, MAX_DATA_PAYLOAD)?;
                self.outb.as_mut().expect("established implies queue").assign_and_queue(frags);
                let mut trans = Transition::default();
                self.push_data(&mut trans);
                Ok(trans)
            }
            AssocState::Closed => Err(AppSendError::NotOpen),
            _ => Err(AppSendError::ShuttingDown),
        }
    }

    /// Application close: drain outstanding data, then run the
    /// SHUTDOWN handshake. Guard timer bounds the whole sequence.
    pub fn app_close(&mut self, _now_ms: u64) -> Transition {
        let mut trans = Transition::default();
        match self.state {
            AssocState::Closed => {}
            AssocState::CookieWait | AssocState::CookieEchoed => {
                self.abort(&mut trans, CloseReason::Graceful);
            }
            AssocState::Established => {
                self.state = AssocState::ShutdownPending;
                self.arm_guard(&mut trans);
                self.maybe_finish_drain(&mut trans);
            }
            // Already shutting down: nothing more to ask for.
            _ => {}
        }
        trans
    }

    fn arm_guard(&mut self, trans: &mut Transition) {
        if !self.guard_armed {
            self.guard_armed = true;
            trans.timers.push(TimerOp::Start {
                timer: TimerId::ShutdownGuard,
                after_ms: SHUTDOWN_GUARD_MS,
            });
        }
    }

    /// Once the send side is drained, move the shutdown sequence along.
    fn maybe_finish_drain(&mut self, trans: &mut Transition) {
        if !self.drained() {
            return;
        }
        match self.state {
            AssocState::ShutdownPending => {
                self.state = AssocState::ShutdownSent;
                self.emit(trans, self.paths.select_path(), vec![Chunk::Shutdown]);
                self.restart_rto(trans);
            }
            AssocState::ShutdownReceived => {
                self.state = AssocState::ShutdownAckSent;
                self.emit(trans, self.paths.select_path(), vec![Chunk::ShutdownAck]);
                self.restart_rto(trans);
            }
            _ => {}
        }
    }

    fn restart_rto(&mut self, trans: &mut Transition) {
        trans.timers.push(TimerOp::Start { timer: TimerId::Rto, after_ms: self.rto_ms });
        self.rto_armed = true;
    }

    fn stop_rto(&mut self, trans: &mut Transition) {
        if self.rto_armed {
            trans.timers.push(TimerOp::Stop { timer: TimerId::Rto });
            self.rto_armed = false;
        }
    }

    /// Sends every queued DATA chunk the peer window admits, honoring
    /// the bundling policy.
    fn push_data(&mut self, trans: &mut Transition) {
        let budget = self.cfg.mtu - COMMON_HEADER_SIZE;
        if self.outb.is_none() {
            return;
        }
        loop {
            let batch = self.outb.as_mut().expect("checked above").pop_new_sendable(budget);
            if batch.is_empty() {
                break;
            }
            if self.cfg.no_delay {
                let chunks: Vec<Chunk> = batch.into_iter().map(Chunk::Data).collect();
                self.emit(trans, self.paths.select_path(), chunks);
            } else {
                for chunk in batch {
                    self.pending_bytes += chunk.payload.len();
                    self.pending_data.push(chunk);
                }
            }
        }
        if !self.cfg.no_delay && !self.pending_data.is_empty() {
            let pending_wire: usize =
                self.pending_data.iter().map(|d| crate::wire::pad4(d.wire_size())).sum();
            if pending_wire >= budget {
                self.flush_pending_data(trans);
            } else {
                trans.timers.push(TimerOp::Start { timer: TimerId::Flush, after_ms: 0 });
            }
        }
        if self.outstanding() > 0 && !self.rto_armed {
            self.restart_rto(trans);
        }
    }

    fn flush_pending_data(&mut self, trans: &mut Transition) {
        if self.pending_data.is_empty() {
            return;
        }
        self.pending_bytes = 0;
        let chunks: Vec<Chunk> = self.pending_data.drain(..).map(Chunk::Data).collect();
        self.emit(trans, self.paths.select_path(), chunks);
    }

    fn outstanding(&self) -> usize {
        self.outb.as_ref().map_or(0, |o| o.outstanding_bytes())
    }

    /// Called by the endpoint after all chunks of a datagram: answers
    /// accumulated acknowledgment debts and opportunistic sends.
    pub fn flush_replies(&mut self, _now_ms: u64) -> Transition {
        let mut trans = Transition::default();
        if self.sack_pending {
            self.sack_pending = false;
            let to = self.sack_reply_to.take().unwrap_or_else(|| self.paths.select_path());
            let sack = self
                .inb
                .as_mut()
                .map(|inb| inb.tsns.build_sack(inb.streams.advertised_rwnd()));
            if let Some(sack) = sack {
                self.emit(&mut trans, to, vec![Chunk::Sack(sack)]);
            }
        }
        self.push_data(&mut trans);
        self.maybe_finish_drain(&mut trans);
        trans
    }

    /// One verified-tag chunk from the wire.
    pub fn handle_chunk(&mut self, _now_ms: u64, from: SocketAddr, chunk: &Chunk) -> Transition {
        let mut trans = Transition::default();
        if self.state == AssocState::Closed {
            return trans;
        }
        // Authenticated traffic both refreshes the path failure count
        // and can reveal a new peer address (multihomed failover).
        if self.state != AssocState::CookieWait {
            self.learn_path(&mut trans, from);
            self.paths.on_peer_activity(from);
        }
        match chunk {
            Chunk::InitAck(body) => self.on_init_ack(&mut trans, from, body),
            Chunk::CookieAck => self.on_cookie_ack(&mut trans),
            Chunk::CookieEcho { .. } => {
                // A peer re-echoing the cookie missed our COOKIE-ACK.
                if self.state == AssocState::Established {
                    self.emit(&mut trans, from, vec![Chunk::CookieAck]);
                }
            }
            Chunk::Data(data) => self.on_data(&mut trans, from, data),
            Chunk::Sack(sack) => self.on_sack(&mut trans, sack),
            Chunk::Heartbeat(info) => {
                self.emit(&mut trans, from, vec![Chunk::HeartbeatAck(*info)]);
            }
            Chunk::HeartbeatAck(info) => {
                if let Some(failover) = self.paths.on_heartbeat_ack(from, *info) {
                    self.note_failover(&mut trans, failover);
                }
            }
            Chunk::Shutdown => self.on_shutdown(&mut trans),
            Chunk::ShutdownAck => self.on_shutdown_ack(&mut trans),
            Chunk::ShutdownComplete => {
                if self.state == AssocState::ShutdownAckSent {
                    self.enter_closed(&mut trans, CloseReason::Graceful);
                }
            }
            Chunk::Abort => {
                self.enter_closed(&mut trans, CloseReason::AbortedByPeer);
            }
            Chunk::Init(_) => {
                // Never routed here: INIT is answered statelessly by the
                // endpoint. Counted if it slips in with a known tag.
                self.stats.unknown_chunks += 1;
            }
            Chunk::Unknown { .. } => {
                self.stats.unknown_chunks += 1;
            }
        }
        trans
    }

    fn on_init_ack(&mut self, trans: &mut Transition, from: SocketAddr, body: &InitBody) {
        if self.state != AssocState::CookieWait {
            return; // duplicate of a slow INIT-ACK
        }
        let Some(cookie) = body.cookie() else {
            // An INIT-ACK without a cookie cannot complete a handshake.
            self.abort(trans, CloseReason::HandshakeFailure);
            return;
        };
        trans.timers.push(TimerOp::Stop { timer: TimerId::Init });
        self.peer_tag = body.initiate_tag;
        let outbound = self.cfg.outbound_streams.min(body.max_inbound_streams);
        let inbound = self.cfg.max_inbound_streams.min(body.outbound_streams);
        self.outs = Some(OutboundStreams::new(outbound));
        self.outb = Some(OutboundTsns::new(self.local_initial_tsn, body.a_rwnd));
        self.inb = Some(InboundSide {
            tsns: InboundTsns::new(body.initial_tsn),
            streams: InboundStreams::new(inbound, self.cfg.a_rwnd),
        });
        for addr in body.advertised_addrs() {
            self.learn_path(trans, addr);
        }

        // Stage-to-queue, then bundle what fits beside the echo.
        self.queue_staged();
        let echo = Chunk::CookieEcho { cookie: cookie.to_vec() };
        let budget = self.cfg.mtu - COMMON_HEADER_SIZE - echo.padded_size();
        let mut chunks = vec![echo];
        if let Some(outb) = self.outb.as_mut() {
            chunks.extend(outb.pop_new_sendable(budget).into_iter().map(Chunk::Data));
        }
        let packet = self.encode(self.peer_tag, &chunks);
        self.cookie_echo_packet = Some(packet.clone());
        trans.packets.push((self.local_addr, from, packet));
        self.handshake_sends = 1;
        self.handshake_timeout_ms = self.cfg.init_timeout_ms;
        trans.timers.push(TimerOp::Start { timer: TimerId::Cookie, after_ms: self.handshake_timeout_ms });
        self.state = AssocState::CookieEchoed;
    }

    fn queue_staged(&mut self) {
        let (Some(outs), Some(outb)) = (self.outs.as_mut(), self.outb.as_mut()) else {
            return;
        };
        while let Some((sid, ppid, payload)) = self.staged.pop_front() {
            self.staged_bytes -= payload.len();
            match outs.fragment_message(sid, ppid, &payload, MAX_DATA_PAYLOAD) {
                Ok(frags) => outb.assign_and_queue(frags),
                Err(_) => {
                    // Negotiation shrank the stream range below sid.
                    self.stats.dropped_messages += 1;
                }
            }
        }
    }

    fn on_cookie_ack(&mut self, trans: &mut Transition) {
        if self.state != AssocState::CookieEchoed {
            return; // duplicate
        }
        trans.timers.push(TimerOp::Stop { timer: TimerId::Cookie });
        self.cookie_echo_packet = None;
        self.enter_established(trans);
    }

    fn enter_established(&mut self, trans: &mut Transition) {
        self.state = AssocState::Established;
        self.events.push_back(AssocEvent::Established);
        self.arm_heartbeats(trans);
        self.queue_staged();
        self.push_data(trans);
    }

    fn on_data(&mut self, trans: &mut Transition, from: SocketAddr, data: &DataChunk) {
        if self.state != AssocState::Established {
            // Not processed outside ESTABLISHED, but answered with the
            // current acknowledgment state so a retransmitting peer can
            // still drain during shutdown.
            self.stats.data_wrong_state += 1;
            if self.inb.is_some() {
                self.sack_pending = true;
                self.sack_reply_to = Some(from);
            }
            return;
        }
        let inb = self.inb.as_mut().expect("established implies inbound state");
        self.sack_pending = true;
        self.sack_reply_to = Some(from);
        match inb.tsns.on_tsn(data.tsn) {
            TsnIntake::Duplicate => {}
            TsnIntake::Fresh { rel_tsn } => match inb.streams.on_data_chunk(rel_tsn, data) {
                Ok(intake) => {
                    if intake.partial_started {
                        self.events.push_back(AssocEvent::PartialDelivery { sid: data.sid });
                    }
                    for mut msg in intake.messages {
                        msg.aid = self.aid;
                        msg.src = from;
                        self.recv_q.push_back(msg);
                    }
                }
                Err(StreamError::ReassemblyOverflow) => {
                    self.abort(trans, CloseReason::Aborted);
                }
                Err(_) => {
                    // Unknown stream: chunk consumed (it will be
                    // SACKed) and dropped; counter lives in streams.
                }
            },
        }
    }

    fn on_sack(&mut self, trans: &mut Transition, sack: &crate::wire::SackBody) {
        let processable = matches!(
            self.state,
            AssocState::Established
                | AssocState::ShutdownPending
                | AssocState::ShutdownSent
                | AssocState::ShutdownReceived
        );
        if !processable {
            return;
        }
        let Some(outb) = self.outb.as_mut() else { return };
        let outcome = outb.on_sack(sack);
        if outcome.stale {
            return;
        }
        if !outcome.fast_retransmit.is_empty() {
            let chunks: Vec<Chunk> =
                outcome.fast_retransmit.into_iter().map(Chunk::Data).collect();
            self.emit(trans, self.paths.select_path(), chunks);
        }
        if outcome.advanced {
            // Fresh progress re-anchors the retransmission clock.
            self.rto_ms = self.cfg.rto_initial_ms;
            if self.outstanding() > 0 {
                self.restart_rto(trans);
            } else {
                self.stop_rto(trans);
            }
        } else if self.outstanding() == 0 {
            self.stop_rto(trans);
        }
        self.push_data(trans);
        self.maybe_finish_drain(trans);
    }

    fn on_shutdown(&mut self, trans: &mut Transition) {
        match self.state {
            AssocState::Established | AssocState::ShutdownPending => {
                self.state = AssocState::ShutdownReceived;
                self.arm_guard(trans);
                self.maybe_finish_drain(trans);
            }
            AssocState::ShutdownSent => {
                // Simultaneous close: answer and await the complete.
                self.state = AssocState::ShutdownAckSent;
                self.emit(trans, self.paths.select_path(), vec![Chunk::ShutdownAck]);
                self.restart_rto(trans);
            }
            AssocState::ShutdownReceived | AssocState::ShutdownAckSent => {
                self.maybe_finish_drain(trans);
            }
            _ => {}
        }
    }

    fn on_shutdown_ack(&mut self, trans: &mut Transition) {
        match self.state {
            AssocState::ShutdownSent | AssocState::ShutdownAckSent => {
                let bytes = self.encode(self.peer_tag, &[Chunk::ShutdownComplete]);
                trans.packets.push((self.local_addr, self.paths.select_path(), bytes));
                self.enter_closed(trans, CloseReason::Graceful);
            }
            _ => {}
        }
    }

    pub fn handle_timer(&mut self, now_ms: u64, timer: TimerId) -> Transition {
        let mut trans = Transition::default();
        if self.state == AssocState::Closed {
            return trans;
        }
        match timer {
            TimerId::Init => self.on_handshake_timer(&mut trans, TimerId::Init),
            TimerId::Cookie => self.on_handshake_timer(&mut trans, TimerId::Cookie),
            TimerId::Rto => self.on_rto(&mut trans),
            TimerId::Heartbeat(addr) => self.on_heartbeat_timer(&mut trans, addr, now_ms),
            TimerId::ShutdownGuard => {
                if self.state != AssocState::Established {
                    self.enter_closed(&mut trans, CloseReason::ShutdownTimeout);
                }
            }
            TimerId::Flush => self.flush_pending_data(&mut trans),
        }
        trans
    }

    fn on_handshake_timer(&mut self, trans: &mut Transition, timer: TimerId) {
        let expected_state = if timer == TimerId::Init {
            AssocState::CookieWait
        } else {
            AssocState::CookieEchoed
        };
        if self.state != expected_state {
            return;
        }
        if self.handshake_sends >= self.cfg.max_init_attempts {
            self.enter_closed(trans, CloseReason::HandshakeFailure);
            return;
        }
        self.handshake_sends += 1;
        self.handshake_timeout_ms *= 2;
        let packet = match timer {
            TimerId::Init => {
                self.encode(0, &[self.init_chunk.clone().expect("dialer keeps its INIT")])
            }
            _ => self.cookie_echo_packet.clone().expect("echoer keeps its packet"),
        };
        trans.packets.push((self.local_addr, self.paths.select_path(), packet));
        trans.timers.push(TimerOp::Start { timer, after_ms: self.handshake_timeout_ms });
    }

    fn on_rto(&mut self, trans: &mut Transition) {
        self.rto_armed = false;
        match self.state {
            AssocState::ShutdownSent => {
                self.emit(trans, self.paths.select_path(), vec![Chunk::Shutdown]);
                self.backoff_and_rearm(trans);
            }
            AssocState::ShutdownAckSent => {
                self.emit(trans, self.paths.select_path(), vec![Chunk::ShutdownAck]);
                self.backoff_and_rearm(trans);
            }
            AssocState::Established
            | AssocState::ShutdownPending
            | AssocState::ShutdownReceived => {
                let budget = self.cfg.mtu - COMMON_HEADER_SIZE;
                let Some(outb) = self.outb.as_mut() else { return };
                match outb.on_rto_expiry(budget) {
                    Ok(batch) => {
                        if batch.is_empty() {
                            return;
                        }
                        let chunks: Vec<Chunk> = batch.into_iter().map(Chunk::Data).collect();
                        self.emit(trans, self.paths.select_path(), chunks);
                        self.backoff_and_rearm(trans);
                    }
                    Err(ReliabilityError::RetransmitLimit) => {
                        self.abort(trans, CloseReason::PeerUnreachable);
                    }
                }
            }
            _ => {}
        }
    }

    fn backoff_and_rearm(&mut self, trans: &mut Transition) {
        self.rto_ms = (self.rto_ms * 2).clamp(self.cfg.rto_min_ms, self.cfg.rto_max_ms);
        self.restart_rto(trans);
    }

    fn on_heartbeat_timer(&mut self, trans: &mut Transition, addr: SocketAddr, now_ms: u64) {
        if !matches!(
            self.state,
            AssocState::Established
                | AssocState::ShutdownPending
                | AssocState::ShutdownSent
                | AssocState::ShutdownReceived
                | AssocState::ShutdownAckSent
        ) {
            return;
        }
        let nonce = self.rng.gen::<u64>();
        let tick = self.paths.on_heartbeat_timer(addr, nonce, now_ms);
        if let Some(info) = tick.send {
            let bytes = self.encode(self.peer_tag, &[Chunk::Heartbeat(info)]);
            trans.packets.push((self.local_addr, addr, bytes));
        }
        if let Some(failover) = tick.failover {
            self.note_failover(trans, failover);
        }
        trans.timers.push(TimerOp::Start {
            timer: TimerId::Heartbeat(addr),
            after_ms: self.cfg.heartbeat_interval_ms,
        });
    }

    // Record a path switch and jump-start recovery: resend the earliest
    // outstanding data on the new path right away rather than waiting out
    // whatever backoff the dead path accumulated.
    fn note_failover(&mut self, trans: &mut Transition, failover: crate::paths::Failover) {
        self.stats.failovers += 1;
        self.events
            .push_back(AssocEvent::PathFailover { from: failover.from, to: failover.to });
        let budget = self.cfg.mtu.saturating_sub(COMMON_HEADER_SIZE);
        let batch = match self.outb.as_mut() {
            Some(outb) => match outb.on_rto_expiry(budget) {
                Ok(batch) => batch,
                Err(ReliabilityError::RetransmitLimit) => {
                    self.abort(trans, CloseReason::PeerUnreachable);
                    return;
                }
            },
            None => Vec::new(),
        };
        if !batch.is_empty() {
            let chunks: Vec<Chunk> = batch.into_iter().map(Chunk::Data).collect();
            self.emit(trans, self.paths.select_path(), chunks);
        }
    }

    /// Reply-address stickiness: replies leave the local address the
    /// peer last reached us on.
    pub fn note_arrival(&mut self, local_addr: SocketAddr) {
        self.local_addr = local_addr;
    }
}

// ---------------------------------------------------------------------------
// Endpoint: routing, stateless handshake responder, association table.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    /// Local addresses; the first is primary for outgoing dials, all
    /// are advertised to peers.
    pub local_addrs: Vec<SocketAddr>,
    pub listening: bool,
    pub options: InitOptions,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct EndpointStats {
    pub packets_in: u64,
    pub packets_out: u64,
    pub bad_checksum: u64,
    pub bad_tag: u64,
    pub ootb_aborts: u64,
    pub inits_answered: u64,
    pub cookies_rejected: u64,
    pub cookie_echoes_accepted: u64,
}

/// Driver-facing side effects.
#[derive(Debug)]
pub enum Effect {
    Transmit { from: SocketAddr, to: SocketAddr, packet: Vec<u8> },
    TimerStart { aid: AssocId, timer: TimerId, after_ms: u64 },
    TimerStop { aid: AssocId, timer: TimerId },
    TimerStopAll { aid: AssocId },
}

/// One endpoint: an address set, an association table, and the
/// stateless listener logic.
#[derive(Debug)]
pub struct EndpointCore {
    cfg: EndpointConfig,
    port: u16,
    secret: [u8; 32],
    rng: ChaCha8Rng,
    next_aid: u32,
    pub(crate) assocs: HashMap<AssocId, Association>,
    by_tag: HashMap<u32, AssocId>,
    by_peer: HashMap<SocketAddr, AssocId>,
    pub(crate) accept_q: VecDeque<AssocId>,
    pub stats: EndpointStats,
}

impl EndpointCore {
    pub fn new(cfg: EndpointConfig, seed: u64) -> EndpointCore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut secret = [0u8; 32];
        rng.fill_bytes(&mut secret);
        let port = cfg.local_addrs.first().map_or(0, |a| a.port());
        EndpointCore {
            cfg,
            port,
            secret,
            rng,
            next_aid: 1,
            assocs: HashMap::new(),
            by_tag: HashMap::new(),
            by_peer: HashMap::new(),
            accept_q: VecDeque::new(),
            stats: EndpointStats::default(),
        }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    pub fn assoc_count(&self) -> usize {
        self.assocs.len()
    }

    pub fn assoc(&self, aid: AssocId) -> Option<&Association> {
        self.assocs.get(&aid)
    }

    pub fn assoc_mut(&mut self, aid: AssocId) -> Option<&mut Association> {
        self.assocs.get_mut(&aid)
    }

    fn alloc_aid(&mut self) -> AssocId {
        let aid = AssocId(self.next_aid);
        self.next_aid += 1;
        aid
    }

    /// Starts an outgoing handshake toward `peer`.
    pub fn dial(&mut self, _now_ms: u64, peer: SocketAddr) -> (AssocId, Vec<Effect>) {
        let aid = self.alloc_aid();
        let local = self.cfg.local_addrs[0];
        let (assoc, trans) = Association::initiate(
            aid,
            self.cfg.options.clone(),
            local,
            self.cfg.local_addrs.clone(),
            peer,
            self.port,
            self.rng.gen(),
        );
        self.by_tag.insert(assoc.local_tag, aid);
        self.by_peer.insert(peer, aid);
        self.assocs.insert(aid, assoc);
        (aid, self.map_transition(aid, trans))
    }

    fn map_transition(&mut self, aid: AssocId, trans: Transition) -> Vec<Effect> {
        let mut effects = Vec::with_capacity(trans.packets.len() + trans.timers.len());
        self.stats.packets_out += trans.packets.len() as u64;
        for (from, to, packet) in trans.packets {
            effects.push(Effect::Transmit { from, to, packet });
        }
        for op in trans.timers {
            effects.push(match op {
                TimerOp::Start { timer, after_ms } => Effect::TimerStart { aid, timer, after_ms },
                TimerOp::Stop { timer } => Effect::TimerStop { aid, timer },
                TimerOp::StopAll => Effect::TimerStopAll { aid },
            });
        }
        effects
    }

    /// Unmaps a closed association from the routing tables. Its queues
    /// stay readable through the handle until released.
    fn reap_if_closed(&mut self, aid: AssocId) {
        let Some(assoc) = self.assocs.get(&aid) else { return };
        if assoc.state() != AssocState::Closed {
            return;
        }
        let tag = assoc.local_tag;
        let addrs = assoc.peer_addrs();
        self.by_tag.remove(&tag);
        for addr in addrs {
            if self.by_peer.get(&addr) == Some(&aid) {
                self.by_peer.remove(&addr);
            }
        }
    }

    /// Drops an association entirely (handle released).
    pub fn release(&mut self, aid: AssocId) {
        self.reap_if_closed(aid);
        if let Some(assoc) = self.assocs.get(&aid) {
            if assoc.state() == AssocState::Closed {
                self.assocs.remove(&aid);
            }
        }
    }

    pub fn handle_timer(&mut self, now_ms: u64, aid: AssocId, timer: TimerId) -> Vec<Effect> {
        let Some(assoc) = self.assocs.get_mut(&aid) else { return vec![] };
        let trans = assoc.handle_timer(now_ms, timer);
        let effects = self.map_transition(aid, trans);
        self.reap_if_closed(aid);
        effects
    }

    pub fn app_send(
        &mut self,
        now_ms: u64,
        aid: AssocId,
        sid: u16,
        ppid: u32,
        payload: Vec<u8>,
    ) -> Result<Vec<Effect>, AppSendError> {
        let Some(assoc) = self.assocs.get_mut(&aid) else { return Err(AppSendError::NotOpen) };
        let trans = assoc.app_send(now_ms, sid, ppid, payload)?;
        Ok(self.map_transition(aid, trans))
    }

    pub fn app_close(&mut self, now_ms: u64, aid: AssocId) -> Vec<Effect> {
        let Some(assoc) = self.assocs.get_mut(&aid) else { return vec![] };
        let trans = assoc.app_close(now_ms);
        let effects = self.map_transition(aid, trans);
        self.reap_if_closed(aid);
        effects
    }

    /// Entry point for every received datagram.
    pub fn handle_datagram(
        &mut self,
        now_ms: u64,
        local_addr: SocketAddr,
        from: SocketAddr,
        data: &[u8],
    ) -> Vec<Effect> {
        self.stats.packets_in += 1;
        let (header, chunks) = match decode_packet(data) {
            Ok(decoded) => decoded,
            Err(crate::wire::WireError::BadChecksum) => {
                self.stats.bad_checksum += 1;
                return vec![];
            }
            Err(_) => {
                self.stats.bad_tag += 1;
                return vec![];
            }
        };
        if header.dst_port != self.port {
            self.stats.bad_tag += 1;
            return vec![];
        }

        if header.verification_tag == 0 {
            return match &chunks[0] {
                Chunk::Init(init) if chunks.len() == 1 => {
                    self.respond_init(now_ms, local_addr, from, &header, init)
                }
                _ => {
                    self.stats.bad_tag += 1;
                    vec![]
                }
            };
        }

        if let Some(&aid) = self.by_tag.get(&header.verification_tag) {
            return self.process_via(now_ms, aid, local_addr, from, &chunks);
        }

        if let Chunk::CookieEcho { cookie } = &chunks[0] {
            return self.respond_cookie_echo(now_ms, local_addr, from, &header, cookie, &chunks[1..]);
        }

        // Out of the blue: never answer ABORT with ABORT.
        self.stats.bad_tag += 1;
        if chunks
            .iter()
            .any(|c| matches!(c, Chunk::Abort | Chunk::ShutdownComplete))
        {
            return vec![];
        }
        self.stats.ootb_aborts += 1;
        let reply = CommonHeader {
            src_port: header.dst_port,
            dst_port: header.src_port,
            verification_tag: header.verification_tag,
            checksum: 0,
        };
        let packet = encode_packet(&reply, &[Chunk::Abort]).expect("abort encodes");
        self.stats.packets_out += 1;
        vec![Effect::Transmit { from: local_addr, to: from, packet }]
    }

    fn process_via(
        &mut self,
        now_ms: u64,
        aid: AssocId,
        local_addr: SocketAddr,
        from: SocketAddr,
        chunks: &[Chunk],
    ) -> Vec<Effect> {
        let Some(assoc) = self.assocs.get_mut(&aid) else { return vec![] };
        assoc.note_arrival(local_addr);
        let mut trans = Transition::default();
        for chunk in chunks {
            trans.merge(assoc.handle_chunk(now_ms, from, chunk));
        }
        trans.merge(assoc.flush_replies(now_ms));
        let effects = self.map_transition(aid, trans);
        self.reap_if_closed(aid);
        effects
    }

    /// Stateless INIT responder: every packet is answered from the
    /// cookie alone; no association record is created or consulted.
    fn respond_init(
        &mut self,
        now_ms: u64,
        local_addr: SocketAddr,
        from: SocketAddr,
        header: &CommonHeader,
        init: &InitBody,
    ) -> Vec<Effect> {
        if init.initiate_tag == 0 {
            self.stats.bad_tag += 1;
            return vec![];
        }
        if !self.cfg.listening {
            self.stats.ootb_aborts += 1;
            let reply = CommonHeader {
                src_port: self.port,
                dst_port: header.src_port,
                verification_tag: init.initiate_tag,
                checksum: 0,
            };
            let packet = encode_packet(&reply, &[Chunk::Abort]).expect("abort encodes");
            self.stats.packets_out += 1;
            return vec![Effect::Transmit { from: local_addr, to: from, packet }];
        }
        self.stats.inits_answered += 1;
        let opts = &self.cfg.options;
        let local_tag = loop {
            let tag = self.rng.next_u32();
            if tag != 0 {
                break tag;
            }
        };
        let local_initial_tsn: u32 = self.rng.gen();
        let outbound = opts.outbound_streams.min(init.max_inbound_streams);
        let inbound = opts.max_inbound_streams.min(init.outbound_streams);
        let cookie = StateCookie {
            peer_addr: from,
            peer_tag: init.initiate_tag,
            local_tag,
            peer_rwnd: init.a_rwnd,
            peer_initial_tsn: init.initial_tsn.0,
            local_initial_tsn,
            inbound_streams: inbound,
            outbound_streams: outbound,
            created_at_ms: now_ms,
        };
        let blob = make_cookie(&self.secret, &cookie);
        let mut parameters: Vec<Parameter> =
            self.cfg.local_addrs.iter().map(|&a| Parameter::address(a)).collect();
        parameters.push(Parameter::cookie(blob));
        let body = InitBody {
            initiate_tag: local_tag,
            a_rwnd: opts.a_rwnd,
            outbound_streams: outbound,
            max_inbound_streams: opts.max_inbound_streams,
            initial_tsn: Tsn(local_initial_tsn),
            parameters,
        };
        let reply = CommonHeader {
            src_port: self.port,
            dst_port: header.src_port,
            verification_tag: init.initiate_tag,
            checksum: 0,
        };
        let packet = encode_packet(&reply, &[Chunk::InitAck(body)]).expect("init-ack encodes");
        self.stats.packets_out += 1;
        vec![Effect::Transmit { from: local_addr, to: from, packet }]
    }

    fn respond_cookie_echo(
        &mut self,
        now_ms: u64,
        local_addr: SocketAddr,
        from: SocketAddr,
        header: &CommonHeader,
        blob: &[u8],
        rest: &[Chunk],
    ) -> Vec<Effect> {
        let cookie = match verify_cookie(
            &self.secret,
            blob,
            now_ms,
            self.cfg.options.cookie_max_age_ms,
            from,
        ) {
            Ok(cookie) => cookie,
            Err(_) => {
                self.stats.cookies_rejected += 1;
                return vec![];
            }
        };
        // The echoing packet must already be addressed by the tag the
        // cookie granted.
        if cookie.local_tag != header.verification_tag {
            self.stats.cookies_rejected += 1;
            return vec![];
        }

        // A colliding handshake we initiated loses to the peer's echo.
        if let Some(&old) = self.by_peer.get(&from) {
            let mut effects = Vec::new();
            if let Some(existing) = self.assocs.get_mut(&old) {
                match existing.state() {
                    AssocState::CookieWait | AssocState::CookieEchoed => {
                        let mut trans = Transition::default();
                        existing.enter_closed(&mut trans, CloseReason::Replaced);
                        effects.extend(self.map_transition(old, trans));
                        self.reap_if_closed(old);
                    }
                    _ => {
                        // Tag miss on an established association means
                        // a stale cookie from a previous life: drop.
                        self.stats.cookies_rejected += 1;
                        return effects;
                    }
                }
            }
            let mut more = self.admit_cookie(now_ms, local_addr, from, &cookie, rest);
            effects.append(&mut more);
            return effects;
        }
        self.admit_cookie(now_ms, local_addr, from, &cookie, rest)
    }

    fn admit_cookie(
        &mut self,
        now_ms: u64,
        local_addr: SocketAddr,
        from: SocketAddr,
        cookie: &StateCookie,
        rest: &[Chunk],
    ) -> Vec<Effect> {
        self.stats.cookie_echoes_accepted += 1;
        let aid = self.alloc_aid();
        let (mut assoc, mut trans) = Association::from_cookie(
            aid,
            self.cfg.options.clone(),
            cookie,
            local_addr,
            self.port,
            self.rng.gen(),
        );
        let ack = Transition {
            packets: vec![(local_addr, from, assoc.encode(assoc.peer_tag, &[Chunk::CookieAck]))],
            timers: vec![],
        };
        trans.merge(ack);
        for chunk in rest {
            trans.merge(assoc.handle_chunk(now_ms, from, chunk));
        }
        trans.merge(assoc.flush_replies(now_ms));
        self.by_tag.insert(assoc.local_tag, aid);
        self.by_peer.insert(from, aid);
        self.assocs.insert(aid, assoc);
        self.accept_q.push_back(aid);
        self.map_transition(aid, trans)
    }
}
