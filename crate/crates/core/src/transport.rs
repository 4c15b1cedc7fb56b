//! Packet transports: a deterministic simulated network and a UDP
//! socket bundle.
//!
//! [`SimNet`] is a single-threaded virtual-time event queue. Packets
//! and timer tokens share one ordered queue, so a whole multi-endpoint
//! exchange replays bit-identically from a seed. Loss, delay, jitter,
//! reordering, and link cuts are per-link knobs.
//!
//! [`UdpNet`] binds one socket per local address and funnels received
//! datagrams into a channel; sends pick the socket matching the
//! requested source address. Protocol packets fit well under common
//! loopback and Ethernet MTUs, so datagrams are never fragmented by
//! this layer.

use crate::wire::{decode_packet, Chunk};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, HashMap};
use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

// ---------------------------------------------------------------------------
// Simulated network
// ---------------------------------------------------------------------------

/// Behavior of one direction-less link between two addresses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkProfile {
    /// Probability each packet is silently dropped.
    pub loss: f64,
    /// Base one-way latency.
    pub delay_ms: u64,
    /// Extra uniformly-random latency added per packet.
    pub jitter_ms: u64,
    /// Probability a packet is held back long enough to land after
    /// later sends (forced reordering beyond what jitter produces).
    pub reorder: f64,
}

impl Default for LinkProfile {
    fn default() -> LinkProfile {
        LinkProfile { loss: 0.0, delay_ms: 1, jitter_ms: 0, reorder: 0.0 }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct SimStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_loss: u64,
    pub dropped_cut: u64,
    pub dropped_hook: u64,
}

#[derive(Debug)]
struct LinkState {
    profile: Option<LinkProfile>,
    up: bool,
    stats: SimStats,
}

impl Default for LinkState {
    fn default() -> LinkState {
        LinkState { profile: None, up: true, stats: SimStats::default() }
    }
}

/// What the queue yields when time advances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimArrival {
    Packet { from: SocketAddr, to: SocketAddr, payload: Vec<u8> },
    Timer { token: u64 },
}

enum Queued {
    Deliver { from: SocketAddr, to: SocketAddr, payload: Vec<u8> },
    Timer { token: u64 },
}

type DropHook = Box<dyn FnMut(SocketAddr, SocketAddr, &[u8]) -> bool>;

/// Deterministic virtual-time packet network.
///
/// All ordering comes from one `(time, sequence)` queue; randomness
/// comes from one seeded generator. Two runs with the same seed and
/// the same call sequence produce the same arrivals.
pub struct SimNet {
    now_ms: u64,
    seq: u64,
    queue: BTreeMap<(u64, u64), Queued>,
    timer_index: HashMap<u64, (u64, u64)>,
    links: HashMap<(SocketAddr, SocketAddr), LinkState>,
    default_profile: LinkProfile,
    rng: ChaCha8Rng,
    drop_hook: Option<DropHook>,
    trace: Option<Vec<String>>,
    totals: SimStats,
}

impl std::fmt::Debug for SimNet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimNet")
            .field("now_ms", &self.now_ms)
            .field("queued", &self.queue.len())
            .field("totals", &self.totals)
            .finish()
    }
}

fn link_key(a: SocketAddr, b: SocketAddr) -> (SocketAddr, SocketAddr) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// One-line summary of a packet for traces: chunk names with the
/// details that matter when reading a run.
pub fn describe_packet(payload: &[u8]) -> String {
    match decode_packet(payload) {
        Ok((header, chunks)) => {
            let parts: Vec<String> = chunks
                .iter()
                .map(|c| match c {
                    Chunk::Data(d) => {
                        format!("DATA(tsn={},sid={},len={})", d.tsn.0, d.sid, d.payload.len())
                    }
                    Chunk::Sack(s) => format!(
                        "SACK(cum={},gaps={})",
                        s.cumulative_tsn_ack.0,
                        s.gap_blocks.len()
                    ),
                    other => other.type_name().to_string(),
                })
                .collect();
            format!("vtag={:08x} {}", header.verification_tag, parts.join(","))
        }
        Err(_) => format!("len={} undecodable", payload.len()),
    }
}

impl SimNet {
    pub fn new(seed: u64) -> SimNet {
        SimNet {
            now_ms: 0,
            seq: 0,
            queue: BTreeMap::new(),
            timer_index: HashMap::new(),
            links: HashMap::new(),
            default_profile: LinkProfile::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            drop_hook: None,
            trace: None,
            totals: SimStats::default(),
        }
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn set_default_profile(&mut self, profile: LinkProfile) {
        self.default_profile = profile;
    }

    pub fn set_link_profile(&mut self, a: SocketAddr, b: SocketAddr, profile: LinkProfile) {
        self.links.entry(link_key(a, b)).or_default().profile = Some(profile);
    }

    /// Severs a link both ways; queued packets already past the coin
    /// flips still arrive.
    pub fn cut_link(&mut self, a: SocketAddr, b: SocketAddr) {
        self.links.entry(link_key(a, b)).or_default().up = false;
    }

    pub fn restore_link(&mut self, a: SocketAddr, b: SocketAddr) {
        self.links.entry(link_key(a, b)).or_default().up = true;
    }

    /// Inspect-and-drop hook, checked before the loss coin. Returning
    /// `true` drops the packet. Used for surgically losing one packet
    /// in otherwise clean runs.
    pub fn set_drop_hook(&mut self, hook: DropHook) {
        self.drop_hook = Some(hook);
    }

    pub fn clear_drop_hook(&mut self) {
        self.drop_hook = None;
    }

    pub fn enable_trace(&mut self) {
        if self.trace.is_none() {
            self.trace = Some(Vec::new());
        }
    }

    pub fn take_trace(&mut self) -> Vec<String> {
        self.trace.take().unwrap_or_default()
    }

    pub fn stats(&self) -> SimStats {
        self.totals
    }

    pub fn link_stats(&self, a: SocketAddr, b: SocketAddr) -> SimStats {
        self.links.get(&link_key(a, b)).map_or(SimStats::default(), |l| l.stats)
    }

    fn trace_line(&mut self, verb: &str, from: SocketAddr, to: SocketAddr, payload: &[u8]) {
        if self.trace.is_some() {
            let line =
                format!("{} {}->{} {} {}", self.now_ms, from, to, verb, describe_packet(payload));
            self.trace.as_mut().expect("checked").push(line);
        }
    }

    /// Submits a packet at the current virtual time.
    pub fn send(&mut self, from: SocketAddr, to: SocketAddr, payload: Vec<u8>) {
        let key = link_key(from, to);
        let link = self.links.entry(key).or_default();
        let profile = link.profile.unwrap_or(self.default_profile);
        link.stats.sent += 1;
        self.totals.sent += 1;
        let up = link.up;

        // Draw every sample unconditionally so a run's randomness
        // depends only on the send sequence, not on the knob values.
        let lost = self.rng.gen_bool(profile.loss.clamp(0.0, 1.0));
        let jitter =
            if profile.jitter_ms == 0 { 0 } else { self.rng.gen_range(0..=profile.jitter_ms) };
        let reordered = self.rng.gen_bool(profile.reorder.clamp(0.0, 1.0));

        if let Some(hook) = self.drop_hook.as_mut() {
            if hook(from, to, &payload) {
                self.links.get_mut(&key).expect("entry above").stats.dropped_hook += 1;
                self.totals.dropped_hook += 1;
                self.trace_line("DROP(hook)", from, to, &payload);
                return;
            }
        }
        if !up {
            self.links.get_mut(&key).expect("entry above").stats.dropped_cut += 1;
            self.totals.dropped_cut += 1;
            self.trace_line("DROP(cut)", from, to, &payload);
            return;
        }
        if lost {
            self.links.get_mut(&key).expect("entry above").stats.dropped_loss += 1;
            self.totals.dropped_loss += 1;
            self.trace_line("DROP(loss)", from, to, &payload);
            return;
        }

        let mut delay = profile.delay_ms + jitter;
        if reordered {
            // Held back long enough to land behind packets sent later.
            delay += 2 * profile.delay_ms + profile.jitter_ms + 2;
        }
        self.trace_line("SEND", from, to, &payload);
        let at = self.now_ms + delay;
        let key = (at, self.next_seq());
        self.queue.insert(key, Queued::Deliver { from, to, payload });
    }

    fn next_seq(&mut self) -> u64 {
        let s = self.seq;
        self.seq += 1;
        s
    }

    /// Arms `token` to fire at absolute virtual time `at_ms`.
    /// Re-arming an existing token moves it.
    pub fn schedule_timer(&mut self, at_ms: u64, token: u64) {
        self.cancel_timer(token);
        let at = at_ms.max(self.now_ms);
        let key = (at, self.next_seq());
        self.queue.insert(key, Queued::Timer { token });
        self.timer_index.insert(token, key);
    }

    pub fn cancel_timer(&mut self, token: u64) {
        if let Some(key) = self.timer_index.remove(&token) {
            self.queue.remove(&key);
        }
    }

    pub fn peek_next_at(&self) -> Option<u64> {
        self.queue.keys().next().map(|&(at, _)| at)
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Pops the earliest event, advancing virtual time to it.
    pub fn pop_next(&mut self) -> Option<SimArrival> {
        let (&key, _) = self.queue.iter().next()?;
        let event = self.queue.remove(&key).expect("key just seen");
        self.now_ms = key.0;
        match event {
            Queued::Deliver { from, to, payload } => {
                let lk = link_key(from, to);
                if let Some(link) = self.links.get_mut(&lk) {
                    link.stats.delivered += 1;
                }
                self.totals.delivered += 1;
                self.trace_line("RECV", from, to, &payload);
                Some(SimArrival::Packet { from, to, payload })
            }
            Queued::Timer { token } => {
                self.timer_index.remove(&token);
                Some(SimArrival::Timer { token })
            }
        }
    }

    /// Advances virtual time with an empty queue (idle waiting).
    pub fn advance_to(&mut self, at_ms: u64) {
        debug_assert!(self.peek_next_at().map_or(true, |t| t >= at_ms));
        self.now_ms = self.now_ms.max(at_ms);
    }
}

// ---------------------------------------------------------------------------
// UDP transport
// ---------------------------------------------------------------------------

/// A datagram as it left the socket layer.
#[derive(Debug)]
pub struct Datagram {
    /// Local address it arrived on.
    pub local: SocketAddr,
    pub from: SocketAddr,
    pub bytes: Vec<u8>,
}

/// One socket per local address plus reader threads that funnel
/// everything into a single channel. The handle is cheap to clone and
/// shareable across threads; the receive channel is handed out once
/// at bind time.
#[derive(Clone)]
pub struct UdpNet {
    inner: Arc<UdpNetInner>,
}

struct UdpNetInner {
    sockets: Vec<Arc<UdpSocket>>,
    local_addrs: Vec<SocketAddr>,
    stop: Arc<AtomicBool>,
    threads: Mutex<Vec<std::thread::JoinHandle<()>>>,
}

impl std::fmt::Debug for UdpNet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UdpNet").field("local_addrs", &self.inner.local_addrs).finish()
    }
}

// One advertised receive window (128 KiB) of 100-byte chunks occupies
// several hundred KiB of kernel buffer once per-datagram overhead is
// counted; the stock 208 KiB default overflows under a fast sender and
// every overflow becomes a retransmission. Ask for room for several
// windows (best effort — the kernel may clamp).
const SOCKET_BUFFER_BYTES: usize = 4 << 20;

fn bind_socket(addr: SocketAddr) -> io::Result<UdpSocket> {
    let domain = if addr.is_ipv4() { socket2::Domain::IPV4 } else { socket2::Domain::IPV6 };
    let socket = socket2::Socket::new(domain, socket2::Type::DGRAM, Some(socket2::Protocol::UDP))?;
    socket.set_recv_buffer_size(SOCKET_BUFFER_BYTES).ok();
    socket.set_send_buffer_size(SOCKET_BUFFER_BYTES).ok();
    socket.bind(&addr.into())?;
    Ok(socket.into())
}

impl UdpNet {
    /// Binds every address; port 0 resolves to the kernel's pick.
    pub fn bind(addrs: &[SocketAddr]) -> io::Result<(UdpNet, Receiver<Datagram>)> {
        let (tx, rx) = std::sync::mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let mut sockets = Vec::new();
        let mut local_addrs = Vec::new();
        let mut threads = Vec::new();
        for &addr in addrs {
            let socket = Arc::new(bind_socket(addr)?);
            socket.set_read_timeout(Some(Duration::from_millis(100)))?;
            let local = socket.local_addr()?;
            local_addrs.push(local);
            threads.push(Self::spawn_reader(socket.clone(), local, tx.clone(), stop.clone()));
            sockets.push(socket);
        }
        let inner =
            UdpNetInner { sockets, local_addrs, stop, threads: Mutex::new(threads) };
        Ok((UdpNet { inner: Arc::new(inner) }, rx))
    }

    fn spawn_reader(
        socket: Arc<UdpSocket>,
        local: SocketAddr,
        tx: Sender<Datagram>,
        stop: Arc<AtomicBool>,
    ) -> std::thread::JoinHandle<()> {
        std::thread::spawn(move || {
            let mut buf = [0u8; 65536];
            while !stop.load(Ordering::Relaxed) {
                match socket.recv_from(&mut buf) {
                    Ok((n, from)) => {
                        let datagram = Datagram { local, from, bytes: buf[..n].to_vec() };
                        if tx.send(datagram).is_err() {
                            break;
                        }
                    }
                    Err(e)
                        if e.kind() == io::ErrorKind::WouldBlock
                            || e.kind() == io::ErrorKind::TimedOut =>
                    {
                        continue;
                    }
                    Err(_) => break,
                }
            }
        })
    }

    pub fn local_addrs(&self) -> &[SocketAddr] {
        &self.inner.local_addrs
    }

    /// Sends from the socket bound to `from`; unknown sources fall
    /// back to the first socket.
    pub fn send(&self, from: SocketAddr, to: SocketAddr, bytes: &[u8]) -> io::Result<usize> {
        let idx = self.inner.local_addrs.iter().position(|&a| a == from).unwrap_or(0);
        self.inner.sockets[idx].send_to(bytes, to)
    }

    /// Stops the reader threads. Receivers see the channel close once
    /// the last sender is gone.
    pub fn shutdown(&self) {
        self.inner.stop.store(true, Ordering::Relaxed);
        let mut threads = self.inner.threads.lock().expect("reader registry");
        for handle in threads.drain(..) {
            let _ = handle.join();
        }
    }
}

impl Drop for UdpNetInner {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        let mut threads = self.threads.lock().expect("reader registry");
        for handle in threads.drain(..) {
            let _ = handle.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(s: &str) -> SocketAddr {
        s.parse().unwrap()
    }

    const A: &str = "10.0.0.1:9899";
    const B: &str = "10.0.0.2:9899";

    #[test]
    fn fixed_delay_preserves_send_order() {
        let mut net = SimNet::new(7);
        for i in 0..10u8 {
            net.send(addr(A), addr(B), vec![i]);
        }
        let mut got = Vec::new();
        while let Some(SimArrival::Packet { payload, .. }) = net.pop_next() {
            got.push(payload[0]);
        }
        assert_eq!(got, (0..10).collect::<Vec<u8>>());
        assert_eq!(net.now_ms(), 1);
    }

    #[test]
    fn identical_seeds_replay_identically() {
        let run = |seed| {
            let mut net = SimNet::new(seed);
            net.set_default_profile(LinkProfile {
                loss: 0.3,
                delay_ms: 5,
                jitter_ms: 9,
                reorder: 0.2,
            });
            for i in 0..200u8 {
                net.send(addr(A), addr(B), vec![i]);
            }
            let mut order = Vec::new();
            while let Some(arrival) = net.pop_next() {
                if let SimArrival::Packet { payload, .. } = arrival {
                    order.push((net.now_ms(), payload[0]));
                }
            }
            (order, net.stats())
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42).0, run(43).0, "different seeds diverge");
    }

    #[test]
    fn loss_rate_lands_near_configured_probability() {
        let mut net = SimNet::new(11);
        net.set_default_profile(LinkProfile { loss: 0.2, ..LinkProfile::default() });
        for _ in 0..10_000 {
            net.send(addr(A), addr(B), vec![0]);
        }
        let dropped = net.stats().dropped_loss;
        assert!((1700..=2300).contains(&dropped), "dropped {dropped} of 10000");
    }

    #[test]
    fn cut_link_drops_everything_until_restore() {
        let mut net = SimNet::new(3);
        net.cut_link(addr(A), addr(B));
        net.send(addr(A), addr(B), vec![1]);
        net.send(addr(B), addr(A), vec![2]);
        assert_eq!(net.pop_next(), None);
        assert_eq!(net.stats().dropped_cut, 2);
        net.restore_link(addr(A), addr(B));
        net.send(addr(A), addr(B), vec![3]);
        assert!(matches!(net.pop_next(), Some(SimArrival::Packet { .. })));
    }

    #[test]
    fn cut_is_per_link_not_global() {
        let c = addr("10.0.0.3:9899");
        let mut net = SimNet::new(3);
        net.cut_link(addr(A), addr(B));
        net.send(addr(A), addr(B), vec![1]);
        net.send(addr(A), c, vec![2]);
        let Some(SimArrival::Packet { to, .. }) = net.pop_next() else {
            panic!("second link alive");
        };
        assert_eq!(to, c);
    }

    #[test]
    fn timers_interleave_with_packets_in_time_order() {
        let mut net = SimNet::new(5);
        net.set_default_profile(LinkProfile { delay_ms: 10, ..LinkProfile::default() });
        net.schedule_timer(5, 1);
        net.send(addr(A), addr(B), vec![9]); // arrives at 10
        net.schedule_timer(15, 2);
        assert_eq!(net.pop_next(), Some(SimArrival::Timer { token: 1 }));
        assert_eq!(net.now_ms(), 5);
        assert!(matches!(net.pop_next(), Some(SimArrival::Packet { .. })));
        assert_eq!(net.now_ms(), 10);
        assert_eq!(net.pop_next(), Some(SimArrival::Timer { token: 2 }));
    }

    #[test]
    fn cancelled_and_rearmed_timers() {
        let mut net = SimNet::new(5);
        net.schedule_timer(5, 1);
        net.cancel_timer(1);
        assert_eq!(net.pop_next(), None);
        net.schedule_timer(5, 2);
        net.schedule_timer(9, 2); // re-arm moves it
        assert_eq!(net.pop_next(), Some(SimArrival::Timer { token: 2 }));
        assert_eq!(net.now_ms(), 9);
    }

    #[test]
    fn jitter_produces_reordering() {
        let mut net = SimNet::new(12);
        net.set_default_profile(LinkProfile {
            delay_ms: 5,
            jitter_ms: 30,
            ..LinkProfile::default()
        });
        for i in 0..50u8 {
            net.send(addr(A), addr(B), vec![i]);
        }
        let mut got = Vec::new();
        while let Some(SimArrival::Packet { payload, .. }) = net.pop_next() {
            got.push(payload[0]);
        }
        let mut sorted = got.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<u8>>(), "nothing lost");
        assert_ne!(got, sorted, "arrival order differs from send order");
    }

    #[test]
    fn drop_hook_takes_exactly_its_targets() {
        let mut net = SimNet::new(1);
        net.set_drop_hook(Box::new(|_, _, payload| payload == [2]));
        for i in 0..5u8 {
            net.send(addr(A), addr(B), vec![i]);
        }
        let mut got = Vec::new();
        while let Some(SimArrival::Packet { payload, .. }) = net.pop_next() {
            got.push(payload[0]);
        }
        assert_eq!(got, vec![0, 1, 3, 4]);
        assert_eq!(net.stats().dropped_hook, 1);
    }

    #[test]
    fn trace_records_send_and_receive_lines() {
        let mut net = SimNet::new(1);
        net.enable_trace();
        net.send(addr(A), addr(B), vec![0xde, 0xad]);
        while net.pop_next().is_some() {}
        let trace = net.take_trace();
        assert_eq!(trace.len(), 2);
        assert!(trace[0].contains("SEND"));
        assert!(trace[1].contains("RECV"));
        assert!(trace[0].contains("undecodable"));
    }

    #[test]
    fn udp_roundtrip_over_loopback() {
        let (a, a_rx) = UdpNet::bind(&[addr("127.0.0.1:0")]).unwrap();
        let (b, b_rx) = UdpNet::bind(&[addr("127.0.0.1:0")]).unwrap();
        let a_addr = a.local_addrs()[0];
        let b_addr = b.local_addrs()[0];

        a.send(a_addr, b_addr, b"ping").unwrap();
        let got = b_rx.recv_timeout(Duration::from_secs(2)).unwrap();
        assert_eq!(got.bytes, b"ping");
        assert_eq!(got.from, a_addr);
        assert_eq!(got.local, b_addr);

        b.send(b_addr, got.from, b"pong").unwrap();
        let back = a_rx.recv_timeout(Duration::from_secs(2)).unwrap();
        assert_eq!(back.bytes, b"pong");
    }

    #[test]
    fn udp_multihomed_sends_pick_matching_socket() {
        let (multi, _multi_rx) =
            UdpNet::bind(&[addr("127.0.0.1:0"), addr("127.0.0.1:0")]).unwrap();
        let (peer, rx) = UdpNet::bind(&[addr("127.0.0.1:0")]).unwrap();
        let secondary = multi.local_addrs()[1];
        let peer_addr = peer.local_addrs()[0];

        multi.send(secondary, peer_addr, b"via-secondary").unwrap();
        let got = rx.recv_timeout(Duration::from_secs(2)).unwrap();
        assert_eq!(got.from, secondary, "source address matches the chosen socket");
    }
}
