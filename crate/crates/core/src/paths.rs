//! Destination address bookkeeping for multihomed peers.
//!
//! Each known peer address is a path probed by periodic heartbeats.
//! Five consecutive unanswered probes mark a path down; traffic then
//! moves to the first live alternate. The primary keeps its designation
//! while down — heartbeats continue, and a matching ack brings traffic
//! back to it.

use crate::wire::HeartbeatInfo;
use std::net::SocketAddr;

pub const HEARTBEAT_INTERVAL_MS: u64 = 2000;
/// Consecutive unanswered heartbeats before a path is declared down.
pub const PATH_FAILURE_THRESHOLD: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathState {
    Up,
    Down,
}

#[derive(Debug, Clone)]
pub struct Path {
    pub addr: SocketAddr,
    pub state: PathState,
    /// Unanswered heartbeats in a row; any ack or peer traffic clears it.
    pub failures: u32,
    /// Probe awaiting its echo; acks with any other nonce are ignored.
    outstanding: Option<HeartbeatInfo>,
}

impl Path {
    fn new(addr: SocketAddr) -> Path {
        Path { addr, state: PathState::Up, failures: 0, outstanding: None }
    }
}

/// The active destination moved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Failover {
    pub from: SocketAddr,
    pub to: SocketAddr,
}

/// Outcome of a heartbeat timer tick on one path.
#[derive(Debug, Default)]
pub struct HeartbeatTick {
    /// Probe to send to the path.
    pub send: Option<HeartbeatInfo>,
    pub failover: Option<Failover>,
}

#[derive(Debug)]
pub struct PathTable {
    /// Insertion order is preference order after the primary.
    paths: Vec<Path>,
    primary: usize,
    effective: usize,
}

impl PathTable {
    pub fn new(primary_addr: SocketAddr) -> PathTable {
        PathTable { paths: vec![Path::new(primary_addr)], primary: 0, effective: 0 }
    }

    /// Registers an alternate destination; false if already known.
    pub fn add_path(&mut self, addr: SocketAddr) -> bool {
        if self.contains(addr) {
            return false;
        }
        self.paths.push(Path::new(addr));
        true
    }

    pub fn contains(&self, addr: SocketAddr) -> bool {
        self.paths.iter().any(|p| p.addr == addr)
    }

    pub fn addrs(&self) -> impl Iterator<Item = SocketAddr> + '_ {
        self.paths.iter().map(|p| p.addr)
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn primary_addr(&self) -> SocketAddr {
        self.paths[self.primary].addr
    }

    /// Destination for fresh DATA and retransmissions: the primary while
    /// it is up, else the first live alternate, else the primary again
    /// (a last resort that keeps packets flowing toward recovery).
    pub fn select_path(&self) -> SocketAddr {
        self.paths[self.effective].addr
    }

    pub fn state_of(&self, addr: SocketAddr) -> Option<PathState> {
        self.paths.iter().find(|p| p.addr == addr).map(|p| p.state)
    }

    fn recompute_effective(&mut self) -> Option<Failover> {
        let previous = self.effective;
        self.effective = if self.paths[self.primary].state == PathState::Up {
            self.primary
        } else {
            self.paths
                .iter()
                .position(|p| p.state == PathState::Up)
                .unwrap_or(self.primary)
        };
        (self.effective != previous).then(|| Failover {
            from: self.paths[previous].addr,
            to: self.paths[self.effective].addr,
        })
    }

    /// Heartbeat timer fired for `addr`. An unanswered previous probe
    /// counts as a failure; the new probe goes out regardless of path
    /// state so a recovered link can be detected.
    pub fn on_heartbeat_timer(&mut self, addr: SocketAddr, nonce: u64, now_ms: u64) -> HeartbeatTick {
        let Some(path) = self.paths.iter_mut().find(|p| p.addr == addr) else {
            return HeartbeatTick::default();
        };
        if path.outstanding.is_some() {
            path.failures = path.failures.saturating_add(1);
            if path.failures >= PATH_FAILURE_THRESHOLD {
                path.state = PathState::Down;
            }
        }
        let info = HeartbeatInfo { nonce, sent_at_ms: now_ms };
        path.outstanding = Some(info);
        HeartbeatTick { send: Some(info), failover: self.recompute_effective() }
    }

    /// Heartbeat echo from `addr`. Only the exact outstanding probe
    /// counts; a match revives the path.
    pub fn on_heartbeat_ack(&mut self, addr: SocketAddr, info: HeartbeatInfo) -> Option<Failover> {
        let path = self.paths.iter_mut().find(|p| p.addr == addr)?;
        if path.outstanding != Some(info) {
            return None;
        }
        path.outstanding = None;
        path.failures = 0;
        path.state = PathState::Up;
        self.recompute_effective()
    }

    /// Any authenticated traffic from `addr` proves it alive enough to
    /// clear the failure count. It does not revive a down path — only a
    /// heartbeat ack does — so flapping links re-prove themselves.
    pub fn on_peer_activity(&mut self, addr: SocketAddr) {
        if let Some(path) = self.paths.iter_mut().find(|p| p.addr == addr) {
            path.failures = 0;
        }
    }

    /// Forces a path down, e.g. when the transport reports the local
    /// interface gone.
    pub fn set_down(&mut self, addr: SocketAddr) -> Option<Failover> {
        let path = self.paths.iter_mut().find(|p| p.addr == addr)?;
        path.state = PathState::Down;
        self.recompute_effective()
    }

    pub fn set_up(&mut self, addr: SocketAddr) -> Option<Failover> {
        let path = self.paths.iter_mut().find(|p| p.addr == addr)?;
        path.state = PathState::Up;
        path.failures = 0;
        self.recompute_effective()
    }
}
