//! Socket-style blocking API over the sans-io core.
//!
//! Two drivers share the same state machines:
//!
//! * [`SimUniverse`] — every endpoint, packet, and timer lives in one
//!   seeded virtual-time queue. Blocking calls pump that queue inline,
//!   so a whole multi-endpoint scenario is single-threaded and replays
//!   bit-identically from its seed.
//! * [`Endpoint`] — UDP sockets, a driver thread per endpoint, and
//!   wall-clock timers. Blocking calls wait on a condition variable.
//!
//! Both expose the same verbs: dial/connect, accept, send, recv,
//! close, plus event and statistics accessors on the connection.

use crate::assoc::{
    AppSendError, AssocEvent, AssocState, AssocStats, CloseReason, Effect, EndpointConfig,
    EndpointCore, EndpointStats, InitOptions, TimerId,
};
use crate::streams::ReceivedMessage;
use crate::transport::{Datagram, SimNet, UdpNet};
use crate::types::AssocId;
use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::rc::Rc;
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SctpError {
    #[error("association closed: {0:?}")]
    Closed(CloseReason),
    #[error("operation timed out")]
    Timeout,
    #[error(transparent)]
    Send(#[from] AppSendError),
    #[error("endpoint stopped")]
    EndpointDown,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Simulated driver
// ---------------------------------------------------------------------------

struct UniverseInner {
    net: SimNet,
    eps: HashMap<SocketAddr, EndpointCore>,
    /// Any bound address to the endpoint's primary address.
    addr_owner: HashMap<SocketAddr, SocketAddr>,
    timer_tokens: HashMap<(SocketAddr, AssocId, TimerId), u64>,
    timer_keys: HashMap<u64, (SocketAddr, AssocId, TimerId)>,
    next_token: u64,
    seed: u64,
    ep_counter: u64,
}

fn apply_effects(inner: &mut UniverseInner, ep: SocketAddr, effects: Vec<Effect>) {
    for effect in effects {
        match effect {
            Effect::Transmit { from, to, packet } => inner.net.send(from, to, packet),
            Effect::TimerStart { aid, timer, after_ms } => {
                let key = (ep, aid, timer);
                let token = *inner.timer_tokens.entry(key).or_insert_with(|| {
                    let t = inner.next_token;
                    inner.next_token += 1;
                    t
                });
                inner.timer_keys.insert(token, key);
                let at = inner.net.now_ms() + after_ms;
                inner.net.schedule_timer(at, token);
            }
            Effect::TimerStop { aid, timer } => {
                if let Some(token) = inner.timer_tokens.remove(&(ep, aid, timer)) {
                    inner.timer_keys.remove(&token);
                    inner.net.cancel_timer(token);
                }
            }
            Effect::TimerStopAll { aid } => {
                let keys: Vec<_> = inner
                    .timer_tokens
                    .keys()
                    .filter(|&&(e, a, _)| e == ep && a == aid)
                    .copied()
                    .collect();
                for key in keys {
                    if let Some(token) = inner.timer_tokens.remove(&key) {
                        inner.timer_keys.remove(&token);
                        inner.net.cancel_timer(token);
                    }
                }
            }
        }
    }
}

/// A closed world of simulated endpoints sharing one virtual clock.
#[derive(Clone)]
pub struct SimUniverse {
    inner: Rc<RefCell<UniverseInner>>,
}

impl SimUniverse {
    pub fn new(seed: u64) -> SimUniverse {
        SimUniverse {
            inner: Rc::new(RefCell::new(UniverseInner {
                net: SimNet::new(seed),
                eps: HashMap::new(),
                addr_owner: HashMap::new(),
                timer_tokens: HashMap::new(),
                timer_keys: HashMap::new(),
                next_token: 1,
                seed,
                ep_counter: 0,
            })),
        }
    }

    /// Direct access to the network for profiles, cuts, and traces.
    pub fn with_net<R>(&self, f: impl FnOnce(&mut SimNet) -> R) -> R {
        f(&mut self.inner.borrow_mut().net)
    }

    pub fn now_ms(&self) -> u64 {
        self.inner.borrow().net.now_ms()
    }

    pub fn endpoint(
        &self,
        addrs: &[SocketAddr],
        listening: bool,
        options: InitOptions,
    ) -> SimEndpoint {
        let mut inner = self.inner.borrow_mut();
        let primary = addrs[0];
        inner.ep_counter += 1;
        let seed = inner
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(inner.ep_counter);
        let core = EndpointCore::new(
            EndpointConfig { local_addrs: addrs.to_vec(), listening, options },
            seed,
        );
        for &a in addrs {
            inner.addr_owner.insert(a, primary);
        }
        inner.eps.insert(primary, core);
        SimEndpoint { u: self.clone(), primary }
    }

    /// Processes the next queued event. `false` means the queue is
    /// empty and virtual time can no longer advance on its own.
    pub fn step(&self) -> bool {
        let mut inner = self.inner.borrow_mut();
        match inner.net.pop_next() {
            None => false,
            Some(crate::transport::SimArrival::Packet { from, to, payload }) => {
                let Some(&primary) = inner.addr_owner.get(&to) else {
                    return true; // destination unowned: black-holed
                };
                let now = inner.net.now_ms();
                let effects = inner
                    .eps
                    .get_mut(&primary)
                    .expect("owner registered")
                    .handle_datagram(now, to, from, &payload);
                apply_effects(&mut inner, primary, effects);
                true
            }
            Some(crate::transport::SimArrival::Timer { token }) => {
                let Some(key) = inner.timer_keys.remove(&token) else {
                    return true; // cancelled late
                };
                inner.timer_tokens.remove(&key);
                let (ep, aid, timer) = key;
                let now = inner.net.now_ms();
                let effects = inner
                    .eps
                    .get_mut(&ep)
                    .expect("owner registered")
                    .handle_timer(now, aid, timer);
                apply_effects(&mut inner, ep, effects);
                true
            }
        }
    }

    /// Runs events up to `ms` of virtual time from now, then parks the
    /// clock there.
    pub fn run_for(&self, ms: u64) {
        let target = self.now_ms() + ms;
        while self.step_until(target) {}
    }

    /// Steps once if the next event is at or before `deadline_ms`;
    /// otherwise parks the clock at the deadline and reports `false`.
    fn step_until(&self, deadline_ms: u64) -> bool {
        let next = self.inner.borrow().net.peek_next_at();
        match next {
            Some(at) if at <= deadline_ms => self.step(),
            _ => {
                self.inner.borrow_mut().net.advance_to(deadline_ms);
                false
            }
        }
    }
}

/// One simulated endpoint (an address set plus its association table).
#[derive(Clone)]
pub struct SimEndpoint {
    u: SimUniverse,
    primary: SocketAddr,
}

impl SimEndpoint {
    pub fn primary_addr(&self) -> SocketAddr {
        self.primary
    }

    pub fn stats(&self) -> EndpointStats {
        self.u.inner.borrow().eps[&self.primary].stats
    }

    pub fn assoc_count(&self) -> usize {
        self.u.inner.borrow().eps[&self.primary].assoc_count()
    }

    /// Starts a handshake without waiting for it; sends issued on the
    /// returned connection are staged and ride with the handshake.
    pub fn dial_start(&self, peer: SocketAddr) -> SimConn {
        let mut inner = self.u.inner.borrow_mut();
        let now = inner.net.now_ms();
        let (aid, effects) =
            inner.eps.get_mut(&self.primary).expect("endpoint registered").dial(now, peer);
        apply_effects(&mut inner, self.primary, effects);
        drop(inner);
        SimConn { u: self.u.clone(), ep: self.primary, aid }
    }

    /// Dials and blocks (pumping virtual time) until established.
    pub fn dial(&self, peer: SocketAddr) -> Result<SimConn, SctpError> {
        let conn = self.dial_start(peer);
        conn.wait_established()?;
        Ok(conn)
    }

    pub fn try_accept(&self) -> Option<SimConn> {
        let mut inner = self.u.inner.borrow_mut();
        let aid = inner.eps.get_mut(&self.primary)?.accept_q.pop_front()?;
        Some(SimConn { u: self.u.clone(), ep: self.primary, aid })
    }

    /// Accepts the next incoming association, pumping up to
    /// `deadline_ms` of absolute virtual time.
    pub fn accept_deadline(&self, deadline_ms: u64) -> Result<SimConn, SctpError> {
        loop {
            if let Some(conn) = self.try_accept() {
                return Ok(conn);
            }
            if !self.u.step_until(deadline_ms) {
                return Err(SctpError::Timeout);
            }
        }
    }

    pub fn accept(&self) -> Result<SimConn, SctpError> {
        let deadline = self.u.now_ms() + 60_000;
        self.accept_deadline(deadline)
    }
}

/// One simulated association handle.
#[derive(Clone)]
pub struct SimConn {
    u: SimUniverse,
    ep: SocketAddr,
    aid: AssocId,
}

impl std::fmt::Debug for SimConn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimConn").field("ep", &self.ep).field("aid", &self.aid).finish()
    }
}

impl SimConn {
    pub fn assoc_id(&self) -> AssocId {
        self.aid
    }

    fn with_assoc<R>(&self, f: impl FnOnce(&crate::assoc::Association) -> R) -> Option<R> {
        let inner = self.u.inner.borrow();
        inner.eps.get(&self.ep).and_then(|core| core.assoc(self.aid)).map(f)
    }

    pub fn state(&self) -> AssocState {
        self.with_assoc(|a| a.state()).unwrap_or(AssocState::Closed)
    }

    pub fn close_reason(&self) -> Option<CloseReason> {
        self.with_assoc(|a| a.close_reason()).flatten()
    }

    pub fn stats(&self) -> AssocStats {
        self.with_assoc(|a| a.assoc_stats()).unwrap_or_default()
    }

    pub fn retransmits(&self) -> u64 {
        self.with_assoc(|a| a.retransmit_count() + a.fast_retransmit_count()).unwrap_or(0)
    }

    pub fn duplicates(&self) -> u64 {
        self.with_assoc(|a| a.duplicate_count()).unwrap_or(0)
    }

    pub fn peer_addrs(&self) -> Vec<SocketAddr> {
        self.with_assoc(|a| a.peer_addrs()).unwrap_or_default()
    }

    /// (outbound, inbound) stream counts agreed during the handshake.
    pub fn negotiated_streams(&self) -> Option<(u16, u16)> {
        self.with_assoc(|a| a.negotiated_streams()).flatten()
    }

    pub fn current_path(&self) -> Option<SocketAddr> {
        self.with_assoc(|a| a.current_path())
    }

    pub fn next_event(&self) -> Option<AssocEvent> {
        let mut inner = self.u.inner.borrow_mut();
        inner.eps.get_mut(&self.ep)?.assoc_mut(self.aid)?.events.pop_front()
    }

    pub fn wait_established(&self) -> Result<(), SctpError> {
        loop {
            match self.state() {
                AssocState::Closed => {
                    return Err(SctpError::Closed(
                        self.close_reason().unwrap_or(CloseReason::Aborted),
                    ));
                }
                AssocState::CookieWait | AssocState::CookieEchoed => {}
                _ => return Ok(()),
            }
            if !self.u.step() {
                return Err(SctpError::Timeout);
            }
        }
    }

    /// Queues one message, pumping the universe while the send buffer
    /// is full.
    pub fn send(&self, sid: u16, ppid: u32, payload: &[u8]) -> Result<(), SctpError> {
        loop {
            {
                let mut inner = self.u.inner.borrow_mut();
                let now = inner.net.now_ms();
                let core = inner.eps.get_mut(&self.ep).ok_or(SctpError::EndpointDown)?;
                match core.app_send(now, self.aid, sid, ppid, payload.to_vec()) {
                    Ok(effects) => {
                        apply_effects(&mut inner, self.ep, effects);
                        return Ok(());
                    }
                    Err(AppSendError::BufferFull) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            if !self.u.step() {
                return Err(SctpError::Timeout);
            }
        }
    }

    pub fn try_recv(&self) -> Option<ReceivedMessage> {
        let mut inner = self.u.inner.borrow_mut();
        inner.eps.get_mut(&self.ep)?.assoc_mut(self.aid)?.recv_q.pop_front()
    }

    /// Receives one message, pumping until `deadline_ms` of absolute
    /// virtual time.
    pub fn recv_deadline(&self, deadline_ms: u64) -> Result<ReceivedMessage, SctpError> {
        loop {
            if let Some(msg) = self.try_recv() {
                return Ok(msg);
            }
            if self.state() == AssocState::Closed {
                return Err(SctpError::Closed(
                    self.close_reason().unwrap_or(CloseReason::Aborted),
                ));
            }
            if !self.u.step_until(deadline_ms) {
                return Err(SctpError::Timeout);
            }
        }
    }

    pub fn recv(&self) -> Result<ReceivedMessage, SctpError> {
        let deadline = self.u.now_ms() + 60_000;
        self.recv_deadline(deadline)
    }

    /// Graceful close; pumps until the shutdown handshake (bounded by
    /// its guard timer) finishes.
    pub fn close(&self) -> Result<(), SctpError> {
        {
            let mut inner = self.u.inner.borrow_mut();
            let now = inner.net.now_ms();
            let core = inner.eps.get_mut(&self.ep).ok_or(SctpError::EndpointDown)?;
            let effects = core.app_close(now, self.aid);
            apply_effects(&mut inner, self.ep, effects);
        }
        while self.state() != AssocState::Closed {
            if !self.u.step() {
                return Err(SctpError::Timeout);
            }
        }
        Ok(())
    }

    /// Forgets the association (post-close bookkeeping cleanup).
    pub fn release(&self) {
        let mut inner = self.u.inner.borrow_mut();
        if let Some(core) = inner.eps.get_mut(&self.ep) {
            core.release(self.aid);
        }
    }
}

// ---------------------------------------------------------------------------
// UDP driver
// ---------------------------------------------------------------------------

struct DriverState {
    core: EndpointCore,
    /// (fire-at, tie-break) to timer identity.
    timers: BTreeMap<(u64, u64), (AssocId, TimerId)>,
    timer_keys: HashMap<(AssocId, TimerId), (u64, u64)>,
    seq: u64,
    driver_done: bool,
}

struct Shared {
    state: Mutex<DriverState>,
    cv: Condvar,
    net: UdpNet,
    epoch: Instant,
    stop: std::sync::atomic::AtomicBool,
}

impl Shared {
    fn now_ms(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    fn apply_locked(&self, st: &mut DriverState, effects: Vec<Effect>) {
        for effect in effects {
            match effect {
                Effect::Transmit { from, to, packet } => {
                    let _ = self.net.send(from, to, &packet);
                }
                Effect::TimerStart { aid, timer, after_ms } => {
                    if let Some(old) = st.timer_keys.remove(&(aid, timer)) {
                        st.timers.remove(&old);
                    }
                    let key = (self.now_ms() + after_ms, st.seq);
                    st.seq += 1;
                    st.timers.insert(key, (aid, timer));
                    st.timer_keys.insert((aid, timer), key);
                }
                Effect::TimerStop { aid, timer } => {
                    if let Some(old) = st.timer_keys.remove(&(aid, timer)) {
                        st.timers.remove(&old);
                    }
                }
                Effect::TimerStopAll { aid } => {
                    let keys: Vec<_> =
                        st.timer_keys.keys().filter(|&&(a, _)| a == aid).copied().collect();
                    for k in keys {
                        if let Some(old) = st.timer_keys.remove(&k) {
                            st.timers.remove(&old);
                        }
                    }
                }
            }
        }
    }

    fn fire_due_timers(&self, st: &mut DriverState) {
        loop {
            let now = self.now_ms();
            let Some((&key, &(aid, timer))) = st.timers.iter().next() else { return };
            if key.0 > now {
                return;
            }
            st.timers.remove(&key);
            st.timer_keys.remove(&(aid, timer));
            let effects = st.core.handle_timer(now, aid, timer);
            self.apply_locked(st, effects);
        }
    }
}

fn driver_loop(shared: Arc<Shared>, rx: Receiver<Datagram>) {
    loop {
        if shared.stop.load(std::sync::atomic::Ordering::Relaxed) {
            break;
        }
        let wait_ms = {
            let mut st = shared.state.lock().expect("driver state");
            shared.fire_due_timers(&mut st);
            shared.cv.notify_all();
            let now = shared.now_ms();
            st.timers
                .keys()
                .next()
                .map(|&(at, _)| at.saturating_sub(now))
                .unwrap_or(100)
                .clamp(1, 100)
        };
        match rx.recv_timeout(Duration::from_millis(wait_ms)) {
            Ok(dg) => {
                let mut st = shared.state.lock().expect("driver state");
                let now = shared.now_ms();
                let effects = st.core.handle_datagram(now, dg.local, dg.from, &dg.bytes);
                shared.apply_locked(&mut st, effects);
                // Drain whatever else is already queued before waking
                // the application side.
                while let Ok(dg) = rx.try_recv() {
                    let now = shared.now_ms();
                    let effects = st.core.handle_datagram(now, dg.local, dg.from, &dg.bytes);
                    shared.apply_locked(&mut st, effects);
                }
                shared.cv.notify_all();
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    let mut st = shared.state.lock().expect("driver state");
    st.driver_done = true;
    shared.cv.notify_all();
}

/// A UDP endpoint backed by a driver thread.
pub struct Endpoint {
    shared: Arc<Shared>,
    driver: Option<std::thread::JoinHandle<()>>,
}

impl Endpoint {
    /// Binds sockets (port 0 picks free ports) and starts the driver.
    pub fn bind(
        addrs: &[SocketAddr],
        listening: bool,
        options: InitOptions,
    ) -> Result<Endpoint, SctpError> {
        let (net, rx) = UdpNet::bind(addrs)?;
        let cfg = EndpointConfig { local_addrs: net.local_addrs().to_vec(), listening, options };
        let core = EndpointCore::new(cfg, rand::random());
        let shared = Arc::new(Shared {
            state: Mutex::new(DriverState {
                core,
                timers: BTreeMap::new(),
                timer_keys: HashMap::new(),
                seq: 0,
                driver_done: false,
            }),
            cv: Condvar::new(),
            net,
            epoch: Instant::now(),
            stop: std::sync::atomic::AtomicBool::new(false),
        });
        let driver = {
            let shared = shared.clone();
            std::thread::spawn(move || driver_loop(shared, rx))
        };
        Ok(Endpoint { shared, driver: Some(driver) })
    }

    pub fn local_addrs(&self) -> Vec<SocketAddr> {
        self.shared.net.local_addrs().to_vec()
    }

    pub fn stats(&self) -> EndpointStats {
        self.shared.state.lock().expect("state").core.stats
    }

    /// Starts a handshake without blocking; early sends are staged.
    pub fn connect_start(&self, peer: SocketAddr) -> Connection {
        let mut st = self.shared.state.lock().expect("state");
        let now = self.shared.now_ms();
        let (aid, effects) = st.core.dial(now, peer);
        self.shared.apply_locked(&mut st, effects);
        Connection { shared: self.shared.clone(), aid }
    }

    pub fn connect(&self, peer: SocketAddr, timeout: Duration) -> Result<Connection, SctpError> {
        let conn = self.connect_start(peer);
        conn.wait_established(timeout)?;
        Ok(conn)
    }

    pub fn accept(&self, timeout: Duration) -> Result<Connection, SctpError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.shared.state.lock().expect("state");
        loop {
            if let Some(aid) = st.core.accept_q.pop_front() {
                return Ok(Connection { shared: self.shared.clone(), aid });
            }
            if st.driver_done {
                return Err(SctpError::EndpointDown);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(SctpError::Timeout);
            }
            let (guard, _) = self
                .shared
                .cv
                .wait_timeout(st, (deadline - now).min(Duration::from_millis(100)))
                .expect("state");
            st = guard;
        }
    }

    pub fn shutdown(&mut self) {
        self.shared.stop.store(true, std::sync::atomic::Ordering::Relaxed);
        self.shared.net.shutdown();
        if let Some(handle) = self.driver.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// One UDP-backed association handle; cheap to clone across threads.
#[derive(Clone)]
pub struct Connection {
    shared: Arc<Shared>,
    aid: AssocId,
}

impl std::fmt::Debug for Connection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Connection").field("aid", &self.aid).finish()
    }
}

impl Connection {
    pub fn assoc_id(&self) -> AssocId {
        self.aid
    }

    fn with_assoc<R>(&self, f: impl FnOnce(&crate::assoc::Association) -> R) -> Option<R> {
        let st = self.shared.state.lock().expect("state");
        st.core.assoc(self.aid).map(f)
    }

    pub fn state(&self) -> AssocState {
        self.with_assoc(|a| a.state()).unwrap_or(AssocState::Closed)
    }

    pub fn close_reason(&self) -> Option<CloseReason> {
        self.with_assoc(|a| a.close_reason()).flatten()
    }

    pub fn stats(&self) -> AssocStats {
        self.with_assoc(|a| a.assoc_stats()).unwrap_or_default()
    }

    pub fn retransmits(&self) -> u64 {
        self.with_assoc(|a| a.retransmit_count() + a.fast_retransmit_count()).unwrap_or(0)
    }

    pub fn duplicates(&self) -> u64 {
        self.with_assoc(|a| a.duplicate_count()).unwrap_or(0)
    }

    pub fn peer_addrs(&self) -> Vec<SocketAddr> {
        self.with_assoc(|a| a.peer_addrs()).unwrap_or_default()
    }

    /// (outbound, inbound) stream counts agreed during the handshake.
    pub fn negotiated_streams(&self) -> Option<(u16, u16)> {
        self.with_assoc(|a| a.negotiated_streams()).flatten()
    }

    pub fn current_path(&self) -> Option<SocketAddr> {
        self.with_assoc(|a| a.current_path())
    }

    pub fn next_event(&self) -> Option<AssocEvent> {
        let mut st = self.shared.state.lock().expect("state");
        st.core.assoc_mut(self.aid)?.events.pop_front()
    }

    pub fn wait_established(&self, timeout: Duration) -> Result<(), SctpError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.shared.state.lock().expect("state");
        loop {
            match st.core.assoc(self.aid).map(|a| a.state()) {
                None => return Err(SctpError::Closed(CloseReason::Aborted)),
                Some(AssocState::Closed) => {
                    let reason = st
                        .core
                        .assoc(self.aid)
                        .and_then(|a| a.close_reason())
                        .unwrap_or(CloseReason::Aborted);
                    return Err(SctpError::Closed(reason));
                }
                Some(AssocState::CookieWait) | Some(AssocState::CookieEchoed) => {}
                Some(_) => return Ok(()),
            }
            if st.driver_done {
                return Err(SctpError::EndpointDown);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(SctpError::Timeout);
            }
            let (guard, _) = self
                .shared
                .cv
                .wait_timeout(st, (deadline - now).min(Duration::from_millis(100)))
                .expect("state");
            st = guard;
        }
    }

    /// Queues one message, blocking while the send buffer is full.
    pub fn send(&self, sid: u16, ppid: u32, payload: &[u8]) -> Result<(), SctpError> {
        let mut st = self.shared.state.lock().expect("state");
        loop {
            let now = self.shared.now_ms();
            match st.core.app_send(now, self.aid, sid, ppid, payload.to_vec()) {
                Ok(effects) => {
                    self.shared.apply_locked(&mut st, effects);
                    return Ok(());
                }
                Err(AppSendError::BufferFull) => {
                    if st.driver_done {
                        return Err(SctpError::EndpointDown);
                    }
                    let (guard, _) = self
                        .shared
                        .cv
                        .wait_timeout(st, Duration::from_millis(50))
                        .expect("state");
                    st = guard;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub fn try_recv(&self) -> Option<ReceivedMessage> {
        let mut st = self.shared.state.lock().expect("state");
        st.core.assoc_mut(self.aid)?.recv_q.pop_front()
    }

    pub fn recv(&self, timeout: Duration) -> Result<ReceivedMessage, SctpError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.shared.state.lock().expect("state");
        loop {
            match st.core.assoc_mut(self.aid) {
                None => return Err(SctpError::Closed(CloseReason::Aborted)),
                Some(assoc) => {
                    if let Some(msg) = assoc.recv_q.pop_front() {
                        return Ok(msg);
                    }
                    if assoc.state() == AssocState::Closed {
                        let reason = assoc.close_reason().unwrap_or(CloseReason::Aborted);
                        return Err(SctpError::Closed(reason));
                    }
                }
            }
            if st.driver_done {
                return Err(SctpError::EndpointDown);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(SctpError::Timeout);
            }
            let (guard, _) = self
                .shared
                .cv
                .wait_timeout(st, (deadline - now).min(Duration::from_millis(100)))
                .expect("state");
            st = guard;
        }
    }

    /// Graceful close, bounded by the shutdown guard timer plus
    /// `timeout` slack.
    pub fn close(&self, timeout: Duration) -> Result<(), SctpError> {
        {
            let mut st = self.shared.state.lock().expect("state");
            let now = self.shared.now_ms();
            let effects = st.core.app_close(now, self.aid);
            self.shared.apply_locked(&mut st, effects);
        }
        let deadline = Instant::now() + timeout;
        let mut st = self.shared.state.lock().expect("state");
        loop {
            match st.core.assoc(self.aid).map(|a| a.state()) {
                None | Some(AssocState::Closed) => return Ok(()),
                Some(_) => {}
            }
            if st.driver_done {
                return Err(SctpError::EndpointDown);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(SctpError::Timeout);
            }
            let (guard, _) = self
                .shared
                .cv
                .wait_timeout(st, (deadline - now).min(Duration::from_millis(100)))
                .expect("state");
            st = guard;
        }
    }

    pub fn release(&self) {
        let mut st = self.shared.state.lock().expect("state");
        st.core.release(self.aid);
    }
}
