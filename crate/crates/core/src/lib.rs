//! Userland SCTP over UDP, plus a deterministic network simulator.
//!
//! The protocol engine is written sans-io: [`assoc`] holds a pure state
//! machine that consumes events (inbound chunks, app sends, timer
//! expiries) and emits actions (packets to send, messages to deliver,
//! timers to arm). The [`transport`] module provides the two backends —
//! real UDP sockets and a seeded in-process simulator — and [`api`]
//! wraps everything in blocking socket-style handles.
//!
//! Module map:
//!
//! - [`wire`] — packet/chunk encode + decode, CRC-32C
//! - [`cookie`] — HMAC-authenticated state cookies for the handshake
//! - [`streams`] — per-stream sequencing, fragmentation, reassembly
//! - [`reliability`] — TSN bookkeeping, SACK generation, retransmission
//! - [`paths`] — destination address table, heartbeats, failover
//! - [`assoc`] — association state machine and endpoint dispatch
//! - [`transport`] — UDP backend and the deterministic simulator
//! - [`api`] — listener/connection handles

pub mod api;
pub mod assoc;
pub mod cookie;
pub mod paths;
pub mod reliability;
pub mod streams;
pub mod transport;
pub mod types;
pub mod wire;

pub use api::{Connection, Endpoint, SctpError, SimConn, SimEndpoint, SimUniverse};
pub use assoc::{AssocEvent, AssocState, CloseReason, InitOptions};
pub use streams::ReceivedMessage;
pub use transport::LinkProfile;
pub use types::{AssocId, Ssn, Tsn};
