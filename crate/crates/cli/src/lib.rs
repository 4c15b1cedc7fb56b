//! Runner library behind the `microsctp` binary.
//!
//! Everything the binary can do lives here as plain functions so that
//! integration tests can drive the exact same code paths in-process:
//! echo flows over the deterministic simulator or real UDP sockets, and
//! a one-way throughput benchmark.

use microsctp::{
    AssocEvent, Connection, Endpoint, InitOptions, LinkProfile, ReceivedMessage, SctpError,
    SimUniverse,
};
use std::collections::VecDeque;
use std::net::SocketAddr;
use std::thread;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Canned network conditions for simulator runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Perfect 1 ms links.
    Lossless,
    /// 20% loss, 5 ms delay with 10 ms jitter, 5% reordering.
    Lossy,
    /// Perfect links to a dual-homed server; the primary path is cut
    /// halfway through the transfer and the run must finish anyway.
    Failover,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("handshake failed: {0}")]
    Handshake(SctpError),
    #[error("transfer failed: {0}")]
    Transfer(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// Exit code the binary maps this error to: 0 success, 2 bind or
    /// socket failure, 3 handshake failure, 4 transfer/echo mismatch.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Io(_) => 2,
            RunError::Handshake(_) => 3,
            RunError::Transfer(_) => 4,
        }
    }
}

fn bind_err(e: SctpError) -> RunError {
    match e {
        SctpError::Io(io) => RunError::Io(io),
        other => RunError::Transfer(other.to_string()),
    }
}

fn sa(s: &str) -> SocketAddr {
    s.parse().expect("literal address")
}

fn join_addrs(addrs: &[SocketAddr]) -> String {
    let parts: Vec<String> = addrs.iter().map(ToString::to_string).collect();
    parts.join(",")
}

/// Simulator seed for a run: the configured value unless the
/// MICROSCTP_SEED environment variable overrides it.
fn sim_seed(configured: u64) -> u64 {
    std::env::var("MICROSCTP_SEED").ok().and_then(|v| v.parse().ok()).unwrap_or(configured)
}

/// Printable payload for message `i`, exactly `size` bytes.
pub fn make_payload(i: u32, size: usize) -> Vec<u8> {
    let mut out = format!("msg {i:06} ").into_bytes();
    let mut x = u64::from(i) ^ 0x5DEE_CE66;
    while out.len() < size {
        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        out.push(b'a' + ((x >> 33) % 26) as u8);
    }
    out.truncate(size);
    out
}

/// Knobs shared by the echo flows.
#[derive(Debug, Clone)]
pub struct EchoConfig {
    pub count: u32,
    /// Fixed payload for every message; `None` generates numbered ones.
    pub message: Option<String>,
    /// Fixed stream id; `None` round-robins over `streams`.
    pub sid: Option<u16>,
    /// Round-robin width when no fixed sid is given.
    pub streams: u16,
    /// Generated payload bytes when no fixed message is given.
    pub size: usize,
    /// Simulator seed; same seed, same run.
    pub seed: u64,
    /// Capture a packet-level trace (simulator only).
    pub trace: bool,
}

impl Default for EchoConfig {
    fn default() -> Self {
        EchoConfig {
            count: 100,
            message: None,
            sid: None,
            streams: 4,
            size: 32,
            seed: 42,
            trace: false,
        }
    }
}

impl EchoConfig {
    fn sid_for(&self, i: u32) -> u16 {
        self.sid.unwrap_or((i % u32::from(self.streams.max(1))) as u16)
    }

    fn payload_for(&self, i: u32) -> Vec<u8> {
        match &self.message {
            Some(s) => s.clone().into_bytes(),
            None => make_payload(i, self.size),
        }
    }

    /// Stream ids the tracker must be able to index.
    fn tracker_width(&self) -> u16 {
        self.sid.map(|s| s.saturating_add(1)).unwrap_or(self.streams).max(1)
    }
}

/// What an echo run did, for the summary line and for tests.
#[derive(Debug, Clone)]
pub struct EchoReport {
    pub sent: u32,
    pub echoed: u32,
    pub bytes: u64,
    /// Simulator clock at completion; `None` for UDP runs.
    pub virtual_ms: Option<u64>,
    pub wall_ms: u64,
    /// Both sides combined, timer and fast-retransmit together.
    pub retransmits: u64,
    /// Duplicate deliveries suppressed by the receivers.
    pub duplicates: u64,
    pub failovers: Vec<(SocketAddr, SocketAddr)>,
    pub trace: Vec<String>,
}

impl EchoReport {
    pub fn summary_line(&self) -> String {
        let mut s = format!(
            "echoed {}/{} bytes={} retransmits={} duplicates={} failovers={}",
            self.echoed,
            self.sent,
            self.bytes,
            self.retransmits,
            self.duplicates,
            self.failovers.len()
        );
        if let Some(v) = self.virtual_ms {
            s.push_str(&format!(" virtual_ms={v}"));
        }
        s.push_str(&format!(" wall_ms={}", self.wall_ms));
        s
    }

    fn empty(virtual_ms: Option<u64>, wall_ms: u64) -> EchoReport {
        EchoReport {
            sent: 0,
            echoed: 0,
            bytes: 0,
            virtual_ms,
            wall_ms,
            retransmits: 0,
            duplicates: 0,
            failovers: Vec::new(),
            trace: Vec::new(),
        }
    }
}

// Matches each echo against the payload we queued on that stream, so a
// reordered, dropped, or corrupted delivery is caught immediately.
struct EchoTracker {
    pending: Vec<VecDeque<Vec<u8>>>,
    echoed: u32,
    bytes: u64,
}

impl EchoTracker {
    fn new(streams: u16) -> EchoTracker {
        EchoTracker { pending: vec![VecDeque::new(); streams as usize], echoed: 0, bytes: 0 }
    }

    fn sent(&mut self, sid: u16, payload: Vec<u8>) {
        self.pending[sid as usize].push_back(payload);
    }

    fn take(&mut self, m: &ReceivedMessage) -> Result<(), RunError> {
        let want = self
            .pending
            .get_mut(m.sid as usize)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| RunError::Transfer(format!("unexpected echo on stream {}", m.sid)))?;
        if want != m.payload {
            return Err(RunError::Transfer(format!(
                "echo mismatch on stream {}: sent {} bytes, got {}",
                m.sid,
                want.len(),
                m.payload.len()
            )));
        }
        self.echoed += 1;
        self.bytes += m.payload.len() as u64;
        Ok(())
    }
}

/// A fixed sid outside the negotiated range is logged and the messages
/// dropped rather than failing the run.
fn invalid_stream(cfg: &EchoConfig, negotiated: Option<(u16, u16)>) -> bool {
    match (cfg.sid, negotiated) {
        (Some(sid), Some((outbound, _))) if sid >= outbound => {
            println!(
                "InvalidStream: sid {sid} is outside the negotiated {outbound} outbound \
                 streams; messages dropped"
            );
            true
        }
        _ => false,
    }
}

/// Run client and echo server inside one deterministic simulator and
/// verify every echo. `on_echo` fires once per verified message.
pub fn run_sim_echo(
    profile: Profile,
    cfg: &EchoConfig,
    mut on_echo: impl FnMut(&ReceivedMessage),
) -> Result<EchoReport, RunError> {
    let wall = Instant::now();
    let u = SimUniverse::new(sim_seed(cfg.seed));
    let server_addrs: Vec<SocketAddr> = match profile {
        Profile::Failover => vec![sa("10.0.0.2:9899"), sa("10.1.0.2:9899")],
        _ => vec![sa("10.0.0.2:9899")],
    };
    let client_addr = sa("10.0.0.1:9899");
    u.with_net(|net| {
        if cfg.trace {
            net.enable_trace();
        }
        let link = match profile {
            Profile::Lossy => {
                LinkProfile { loss: 0.2, delay_ms: 5, jitter_ms: 10, reorder: 0.05 }
            }
            _ => LinkProfile { delay_ms: 1, ..LinkProfile::default() },
        };
        net.set_default_profile(link);
    });
    let server = u.endpoint(&server_addrs, true, InitOptions::default());
    let client = u.endpoint(&[client_addr], false, InitOptions::default());
    let conn = client.dial(server_addrs[0]).map_err(RunError::Handshake)?;
    let sconn = server
        .try_accept()
        .ok_or_else(|| RunError::Transfer("server accepted nothing".into()))?;
    if invalid_stream(cfg, conn.negotiated_streams()) {
        conn.close().ok();
        return Ok(EchoReport::empty(Some(u.now_ms()), wall.elapsed().as_millis() as u64));
    }

    // In-flight cap keeps the send queue from outrunning the echoes, so
    // a mid-run path cut only strands a window's worth of data.
    let window = 64u32;
    let mut tracker = EchoTracker::new(cfg.tracker_width());
    let mut sent = 0u32;
    let mut cut_done = false;
    let mut failovers = Vec::new();
    let deadline = u.now_ms() + 300_000;

    while tracker.echoed < cfg.count {
        if u.now_ms() > deadline {
            return Err(RunError::Transfer(format!(
                "echo stalled at {}/{} after {} virtual ms",
                tracker.echoed,
                cfg.count,
                u.now_ms()
            )));
        }
        while let Some(ev) = conn.next_event() {
            if let AssocEvent::PathFailover { from, to } = ev {
                failovers.push((from, to));
            }
        }
        // Server duty: bounce everything that arrived.
        let mut moved = false;
        while let Some(m) = sconn.try_recv() {
            sconn
                .send(m.sid, m.ppid, &m.payload)
                .map_err(|e| RunError::Transfer(format!("server echo send: {e}")))?;
            moved = true;
        }
        // Client duty: consume an echo, else feed the window.
        if let Some(m) = conn.try_recv() {
            tracker.take(&m)?;
            on_echo(&m);
            if profile == Profile::Failover && !cut_done && tracker.echoed == cfg.count / 2 {
                u.with_net(|net| net.cut_link(client_addr, server_addrs[0]));
                cut_done = true;
            }
            continue;
        }
        if sent < cfg.count && sent - tracker.echoed < window {
            let sid = cfg.sid_for(sent);
            let payload = cfg.payload_for(sent);
            conn.send(sid, sent, &payload)
                .map_err(|e| RunError::Transfer(format!("send {sent}: {e}")))?;
            tracker.sent(sid, payload);
            sent += 1;
            continue;
        }
        if moved {
            continue;
        }
        if !u.step() {
            return Err(RunError::Transfer("simulation ran out of events".into()));
        }
    }

    while let Some(ev) = conn.next_event() {
        if let AssocEvent::PathFailover { from, to } = ev {
            failovers.push((from, to));
        }
    }
    let virtual_ms = u.now_ms();
    let retransmits = conn.retransmits() + sconn.retransmits();
    let duplicates = conn.duplicates() + sconn.duplicates();
    conn.close().ok();
    u.run_for(50);
    let trace = if cfg.trace { u.with_net(|net| net.take_trace()) } else { Vec::new() };
    Ok(EchoReport {
        sent,
        echoed: tracker.echoed,
        bytes: tracker.bytes,
        virtual_ms: Some(virtual_ms),
        wall_ms: wall.elapsed().as_millis() as u64,
        retransmits,
        duplicates,
        failovers,
        trace,
    })
}

/// Dial a real echo server over UDP, send `cfg.count` messages, verify
/// every echo comes back intact and in per-stream order.
pub fn run_udp_echo_client(
    server: SocketAddr,
    cfg: &EchoConfig,
    mut on_echo: impl FnMut(&ReceivedMessage),
) -> Result<EchoReport, RunError> {
    let wall = Instant::now();
    let local = if server.is_ipv4() { sa("0.0.0.0:0") } else { sa("[::]:0") };
    let ep = Endpoint::bind(&[local], false, InitOptions::default()).map_err(bind_err)?;
    let conn = ep.connect(server, Duration::from_secs(10)).map_err(RunError::Handshake)?;
    if invalid_stream(cfg, conn.negotiated_streams()) {
        conn.close(Duration::from_secs(5)).ok();
        return Ok(EchoReport::empty(None, wall.elapsed().as_millis() as u64));
    }

    let mut tracker = EchoTracker::new(cfg.tracker_width());
    let mut failovers = Vec::new();
    for i in 0..cfg.count {
        let sid = cfg.sid_for(i);
        let payload = cfg.payload_for(i);
        conn.send(sid, i, &payload)
            .map_err(|e| RunError::Transfer(format!("send {i}: {e}")))?;
        tracker.sent(sid, payload);
        while let Some(m) = conn.try_recv() {
            tracker.take(&m)?;
            on_echo(&m);
        }
    }
    while tracker.echoed < cfg.count {
        let m = conn
            .recv(Duration::from_secs(10))
            .map_err(|e| RunError::Transfer(format!("echo {}: {e}", tracker.echoed)))?;
        tracker.take(&m)?;
        on_echo(&m);
    }
    while let Some(ev) = conn.next_event() {
        if let AssocEvent::PathFailover { from, to } = ev {
            failovers.push((from, to));
        }
    }
    let retransmits = conn.retransmits();
    let duplicates = conn.duplicates();
    conn.close(Duration::from_secs(5)).ok();
    Ok(EchoReport {
        sent: cfg.count,
        echoed: tracker.echoed,
        bytes: tracker.bytes,
        virtual_ms: None,
        wall_ms: wall.elapsed().as_millis() as u64,
        retransmits,
        duplicates,
        failovers,
        trace: Vec::new(),
    })
}

/// Serve echo associations over UDP until `max_assocs` have been
/// accepted (forever when `None`). One worker thread per association;
/// each received message is printed as `stream <sid>: <payload>` and
/// sent straight back on the same stream.
pub fn run_udp_echo_server(
    addrs: &[SocketAddr],
    streams: u16,
    max_assocs: Option<u64>,
) -> Result<(), RunError> {
    let opts = InitOptions {
        outbound_streams: streams,
        max_inbound_streams: streams,
        ..InitOptions::default()
    };
    let ep = Endpoint::bind(addrs, true, opts).map_err(bind_err)?;
    println!("listening on {}", join_addrs(&ep.local_addrs()));
    let mut served = 0u64;
    let mut workers = Vec::new();
    loop {
        match ep.accept(Duration::from_millis(500)) {
            Ok(conn) => {
                served += 1;
                workers.push(thread::spawn(move || echo_worker(conn)));
            }
            Err(SctpError::Timeout) => {}
            Err(e) => return Err(RunError::Transfer(format!("accept: {e}"))),
        }
        if let Some(max) = max_assocs {
            if served >= max {
                break;
            }
        }
    }
    for w in workers {
        let _ = w.join();
    }
    Ok(())
}

fn echo_worker(conn: Connection) {
    let aid = conn.assoc_id().0;
    println!("assoc {aid}: established with {}", join_addrs(&conn.peer_addrs()));
    let mut echoed = 0u64;
    loop {
        match conn.recv(Duration::from_secs(30)) {
            Ok(m) => {
                println!("stream {}: {}", m.sid, String::from_utf8_lossy(&m.payload));
                if conn.send(m.sid, m.ppid, &m.payload).is_err() {
                    break;
                }
                echoed += 1;
            }
            Err(_) => break,
        }
    }
    println!("assoc {aid}: closed ({:?}) after {echoed} messages", conn.close_reason());
}

/// Scripted simulator demonstration of the echo server: a built-in
/// client dials the listener, sends one message per stream, and the
/// server side prints and echoes each one. Deterministic under `seed`.
pub fn run_sim_echo_server_demo(
    listen: &[SocketAddr],
    streams: u16,
    seed: u64,
) -> Result<(), RunError> {
    let u = SimUniverse::new(sim_seed(seed));
    let opts = InitOptions {
        outbound_streams: streams,
        max_inbound_streams: streams,
        ..InitOptions::default()
    };
    let server = u.endpoint(listen, true, opts.clone());
    let client = u.endpoint(&[sa("10.99.0.1:9899")], false, opts);
    println!("listening on {} (simulated)", join_addrs(listen));
    let conn = client.dial(listen[0]).map_err(RunError::Handshake)?;
    let sconn = server
        .try_accept()
        .ok_or_else(|| RunError::Transfer("server accepted nothing".into()))?;
    let aid = sconn.assoc_id().0;
    println!("assoc {aid}: established with {}", join_addrs(&sconn.peer_addrs()));
    for sid in 0..streams {
        conn.send(sid, u32::from(sid), b"paard")
            .map_err(|e| RunError::Transfer(format!("demo send on {sid}: {e}")))?;
    }
    for _ in 0..streams {
        let m = sconn.recv().map_err(|e| RunError::Transfer(format!("demo recv: {e}")))?;
        println!("stream {}: {}", m.sid, String::from_utf8_lossy(&m.payload));
        sconn
            .send(m.sid, m.ppid, &m.payload)
            .map_err(|e| RunError::Transfer(format!("demo echo on {}: {e}", m.sid)))?;
    }
    for _ in 0..streams {
        conn.recv().map_err(|e| RunError::Transfer(format!("demo echo lost: {e}")))?;
    }
    conn.close().ok();
    u.run_for(50);
    println!("assoc {aid}: closed ({:?})", sconn.close_reason());
    Ok(())
}

/// Knobs for the throughput benchmark.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub count: u32,
    /// Payload bytes per message.
    pub size: usize,
    pub streams: u16,
    /// Simulator seed (ignored by the UDP loopback run).
    pub seed: u64,
    /// Capture a packet-level trace (simulator only).
    pub trace: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { count: 100_000, size: 100, streams: 1, seed: 42, trace: false }
    }
}

/// One-way benchmark outcome.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub messages: u64,
    pub bytes: u64,
    /// Time the rate is computed from: wall clock for UDP runs,
    /// simulator clock for simulated profiles.
    pub elapsed_ms: u64,
    pub rate_msgs_per_sec: f64,
    pub received: u64,
    pub lost: u64,
    pub dup_deliveries: u64,
    pub retransmits: u64,
    pub failovers: u64,
    /// Messages delivered per stream id, ascending by sid.
    pub per_stream_counts: Vec<(u16, u64)>,
    pub virtual_ms: Option<u64>,
    pub trace: Vec<String>,
}

impl BenchReport {
    /// Stable machine-readable summary, one line.
    pub fn summary_line(&self) -> String {
        format!(
            "bench msgs={} bytes={} ms={} rate={:.1} lost={} dups={} retransmits={} failovers={}",
            self.messages,
            self.bytes,
            self.elapsed_ms,
            self.rate_msgs_per_sec,
            self.lost,
            self.dup_deliveries,
            self.retransmits,
            self.failovers
        )
    }

    /// Human-readable aligned table, one field per line.
    pub fn table(&self) -> String {
        let mut rows: Vec<(String, String)> = vec![
            ("messages_sent".into(), self.messages.to_string()),
            ("messages_received".into(), self.received.to_string()),
            ("bytes".into(), self.bytes.to_string()),
            ("wall_ms".into(), self.elapsed_ms.to_string()),
            ("msgs_per_sec".into(), format!("{:.1}", self.rate_msgs_per_sec)),
            ("retransmits".into(), self.retransmits.to_string()),
            ("dup_deliveries".into(), self.dup_deliveries.to_string()),
        ];
        if let Some(v) = self.virtual_ms {
            rows.push(("virtual_ms".into(), v.to_string()));
        }
        if self.failovers > 0 {
            rows.push(("failovers".into(), self.failovers.to_string()));
        }
        for (sid, n) in &self.per_stream_counts {
            rows.push((format!("stream {sid}"), n.to_string()));
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(k, v)| format!("{k:<width$}  {v}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

// Exactly-once bookkeeping on the receiving side: the ppid carries the
// message index.
struct BenchSink {
    seen: Vec<bool>,
    per_stream: Vec<u64>,
    received: u64,
    dups: u64,
}

impl BenchSink {
    fn new(count: u32, streams: u16) -> BenchSink {
        BenchSink {
            seen: vec![false; count as usize],
            per_stream: vec![0; usize::from(streams.max(1))],
            received: 0,
            dups: 0,
        }
    }

    fn absorb(&mut self, m: &ReceivedMessage) {
        let idx = m.ppid as usize;
        if idx < self.seen.len() && !self.seen[idx] {
            self.seen[idx] = true;
            self.received += 1;
            if let Some(slot) = self.per_stream.get_mut(m.sid as usize) {
                *slot += 1;
            }
        } else {
            self.dups += 1;
        }
    }

    fn per_stream_counts(&self) -> Vec<(u16, u64)> {
        self.per_stream.iter().enumerate().map(|(sid, &n)| (sid as u16, n)).collect()
    }
}

/// Throughput benchmark over real UDP loopback, both endpoints in this
/// process: one dialing sender, one listening sink. The clock stops when
/// the sink has delivered the last message.
pub fn run_udp_bench(cfg: &BenchConfig) -> Result<BenchReport, RunError> {
    let opts = InitOptions { no_delay: false, ..InitOptions::default() };
    let server = Endpoint::bind(&[sa("127.0.0.1:0")], true, opts.clone()).map_err(bind_err)?;
    let server_addr = server.local_addrs()[0];
    let client = Endpoint::bind(&[sa("127.0.0.1:0")], false, opts).map_err(bind_err)?;

    let n = u64::from(cfg.count);
    let count = cfg.count;
    let streams = cfg.streams;
    let sink = thread::spawn(move || -> Result<(BenchSink, u64), RunError> {
        let conn = server.accept(Duration::from_secs(10)).map_err(RunError::Handshake)?;
        let mut sink = BenchSink::new(count, streams);
        while sink.received < n {
            let m = conn.recv(Duration::from_secs(30)).map_err(|e| {
                RunError::Transfer(format!("sink recv after {}: {e}", sink.received))
            })?;
            sink.absorb(&m);
        }
        Ok((sink, conn.retransmits()))
    });

    let t0 = Instant::now();
    let conn = client
        .connect(server_addr, Duration::from_secs(10))
        .map_err(RunError::Handshake)?;
    let payload = make_payload(0, cfg.size);
    for i in 0..cfg.count {
        let sid = (i % u32::from(cfg.streams.max(1))) as u16;
        conn.send(sid, i, &payload)
            .map_err(|e| RunError::Transfer(format!("send {i}: {e}")))?;
    }
    let (sink, sink_retransmits) = sink
        .join()
        .map_err(|_| RunError::Transfer("sink thread panicked".into()))??;
    let elapsed = t0.elapsed();
    conn.close(Duration::from_secs(5)).ok();

    Ok(BenchReport {
        messages: n,
        bytes: n * cfg.size as u64,
        elapsed_ms: elapsed.as_millis() as u64,
        rate_msgs_per_sec: n as f64 / elapsed.as_secs_f64().max(1e-9),
        received: sink.received,
        lost: n - sink.received,
        dup_deliveries: sink.dups,
        retransmits: conn.retransmits() + sink_retransmits,
        failovers: 0,
        per_stream_counts: sink.per_stream_counts(),
        virtual_ms: None,
        trace: Vec::new(),
    })
}

/// Same one-way benchmark inside the simulator under a canned network
/// profile; the rate is computed from virtual time. The failover
/// profile cuts the primary path once half the messages have landed.
pub fn run_sim_bench(profile: Profile, cfg: &BenchConfig) -> Result<BenchReport, RunError> {
    let u = SimUniverse::new(sim_seed(cfg.seed));
    let server_addrs: Vec<SocketAddr> = match profile {
        Profile::Failover => vec![sa("10.0.0.2:9899"), sa("10.1.0.2:9899")],
        _ => vec![sa("10.0.0.2:9899")],
    };
    let client_addr = sa("10.0.0.1:9899");
    u.with_net(|net| {
        if cfg.trace {
            net.enable_trace();
        }
        let link = match profile {
            Profile::Lossy => {
                LinkProfile { loss: 0.2, delay_ms: 5, jitter_ms: 10, reorder: 0.05 }
            }
            _ => LinkProfile { delay_ms: 1, ..LinkProfile::default() },
        };
        net.set_default_profile(link);
    });
    let opts = InitOptions { no_delay: false, ..InitOptions::default() };
    let server = u.endpoint(&server_addrs, true, opts.clone());
    let client = u.endpoint(&[client_addr], false, opts);
    let conn = client.dial(server_addrs[0]).map_err(RunError::Handshake)?;
    let sconn = server
        .try_accept()
        .ok_or_else(|| RunError::Transfer("server accepted nothing".into()))?;

    let n = u64::from(cfg.count);
    let payload = make_payload(0, cfg.size);
    let mut sink = BenchSink::new(cfg.count, cfg.streams);
    let mut next = 0u32;
    let mut cut_done = false;
    let mut failovers = 0u64;
    let deadline = u.now_ms() + 600_000;
    while sink.received < n {
        if u.now_ms() > deadline {
            return Err(RunError::Transfer(format!("bench stalled at {}/{n}", sink.received)));
        }
        while let Some(ev) = conn.next_event() {
            if matches!(ev, AssocEvent::PathFailover { .. }) {
                failovers += 1;
            }
        }
        if let Some(m) = sconn.try_recv() {
            sink.absorb(&m);
            if profile == Profile::Failover && !cut_done && sink.received >= n / 2 {
                u.with_net(|net| net.cut_link(client_addr, server_addrs[0]));
                cut_done = true;
            }
            continue;
        }
        if next < cfg.count {
            let sid = (next % u32::from(cfg.streams.max(1))) as u16;
            conn.send(sid, next, &payload)
                .map_err(|e| RunError::Transfer(format!("send {next}: {e}")))?;
            next += 1;
            continue;
        }
        if !u.step() {
            return Err(RunError::Transfer("simulation ran out of events".into()));
        }
    }
    while let Some(ev) = conn.next_event() {
        if matches!(ev, AssocEvent::PathFailover { .. }) {
            failovers += 1;
        }
    }
    let virtual_ms = u.now_ms();
    let retransmits = conn.retransmits() + sconn.retransmits();
    conn.close().ok();
    u.run_for(50);
    let trace = if cfg.trace { u.with_net(|net| net.take_trace()) } else { Vec::new() };
    Ok(BenchReport {
        messages: n,
        bytes: n * cfg.size as u64,
        elapsed_ms: virtual_ms.max(1),
        rate_msgs_per_sec: n as f64 / (virtual_ms.max(1) as f64 / 1000.0),
        received: sink.received,
        lost: n - sink.received,
        dup_deliveries: sink.dups,
        retransmits,
        failovers,
        per_stream_counts: sink.per_stream_counts(),
        virtual_ms: Some(virtual_ms),
        trace,
    })
}
