//! Bit-exact encoding and decoding of SCTP packets and chunks.
//!
//! A packet is a 12-byte common header followed by one or more chunks,
//! each padded to a 4-byte boundary with zeros. All integers are
//! big-endian. The checksum field holds the CRC-32C of the whole packet
//! computed with the checksum field set to zero.
//!
//! ```txt
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |      Source Port Number       |    Destination Port Number    |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |                       Verification Tag                        |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |                           Checksum                            |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |  Chunk Type   | Chunk  Flags  |        Chunk Length           |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! |                         Chunk Value ...                       |
//! +-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+-+
//! ```

use crate::types::Tsn;
use std::net::{IpAddr, SocketAddr};
use thiserror::Error;

pub const COMMON_HEADER_SIZE: usize = 12;
pub const CHUNK_HEADER_SIZE: usize = 4;
/// Fixed fields of a DATA chunk including the chunk header: type, flags,
/// length, tsn, sid, ssn, ppid.
pub const DATA_CHUNK_HEADER_SIZE: usize = 16;
/// Chunk length field is u16, counting header plus unpadded body.
pub const MAX_CHUNK_SIZE: usize = 65535;

pub const CHUNK_TYPE_DATA: u8 = 0;
pub const CHUNK_TYPE_INIT: u8 = 1;
pub const CHUNK_TYPE_INIT_ACK: u8 = 2;
pub const CHUNK_TYPE_SACK: u8 = 3;
pub const CHUNK_TYPE_HEARTBEAT: u8 = 4;
pub const CHUNK_TYPE_HEARTBEAT_ACK: u8 = 5;
pub const CHUNK_TYPE_ABORT: u8 = 6;
pub const CHUNK_TYPE_SHUTDOWN: u8 = 7;
pub const CHUNK_TYPE_SHUTDOWN_ACK: u8 = 8;
pub const CHUNK_TYPE_COOKIE_ECHO: u8 = 10;
pub const CHUNK_TYPE_COOKIE_ACK: u8 = 11;
pub const CHUNK_TYPE_SHUTDOWN_COMPLETE: u8 = 14;

/// DATA chunk flag: last fragment of a user message.
pub const DATA_FLAG_END: u8 = 0x01;
/// DATA chunk flag: first fragment of a user message.
pub const DATA_FLAG_BEGIN: u8 = 0x02;

/// TLV parameter carrying the state cookie in INIT-ACK.
pub const PARAM_STATE_COOKIE: u16 = 7;
/// TLV parameter advertising an IPv4 address: 2-byte port + 4-byte address.
pub const PARAM_IPV4_ADDR: u16 = 5;
/// TLV parameter advertising an IPv6 address: 2-byte port + 16-byte address.
pub const PARAM_IPV6_ADDR: u16 = 6;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("data shorter than declared length")]
    Truncated,
    #[error("packet checksum mismatch")]
    BadChecksum,
    #[error("chunk length field invalid")]
    BadLength,
    #[error("serialized chunk exceeds 65535 bytes")]
    ChunkTooLarge,
    #[error("packet carries no chunks")]
    EmptyPacket,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommonHeader {
    pub src_port: u16,
    pub dst_port: u16,
    pub verification_tag: u32,
    pub checksum: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataChunk {
    pub tsn: Tsn,
    pub sid: u16,
    pub ssn: u16,
    pub ppid: u32,
    /// True on the first fragment of a user message.
    pub begin: bool,
    /// True on the last fragment of a user message.
    pub end: bool,
    pub payload: Vec<u8>,
}

impl DataChunk {
    pub fn wire_size(&self) -> usize {
        DATA_CHUNK_HEADER_SIZE + self.payload.len()
    }
}

/// Type-length-value parameter inside INIT and INIT-ACK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parameter {
    pub param_type: u16,
    pub value: Vec<u8>,
}

impl Parameter {
    pub fn cookie(blob: Vec<u8>) -> Parameter {
        Parameter { param_type: PARAM_STATE_COOKIE, value: blob }
    }

    pub fn address(addr: SocketAddr) -> Parameter {
        let mut value = addr.port().to_be_bytes().to_vec();
        match addr.ip() {
            IpAddr::V4(ip) => {
                value.extend_from_slice(&ip.octets());
                Parameter { param_type: PARAM_IPV4_ADDR, value }
            }
            IpAddr::V6(ip) => {
                value.extend_from_slice(&ip.octets());
                Parameter { param_type: PARAM_IPV6_ADDR, value }
            }
        }
    }

    /// Decodes an address advertisement parameter, if this is one.
    pub fn as_address(&self) -> Option<SocketAddr> {
        match (self.param_type, self.value.len()) {
            (PARAM_IPV4_ADDR, 6) => {
                let port = u16::from_be_bytes([self.value[0], self.value[1]]);
                let mut ip = [0u8; 4];
                ip.copy_from_slice(&self.value[2..6]);
                Some(SocketAddr::new(IpAddr::from(ip), port))
            }
            (PARAM_IPV6_ADDR, 18) => {
                let port = u16::from_be_bytes([self.value[0], self.value[1]]);
                let mut ip = [0u8; 16];
                ip.copy_from_slice(&self.value[2..18]);
                Some(SocketAddr::new(IpAddr::from(ip), port))
            }
            _ => None,
        }
    }
}

/// Body shared by INIT and INIT-ACK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InitBody {
    pub initiate_tag: u32,
    pub a_rwnd: u32,
    pub outbound_streams: u16,
    pub max_inbound_streams: u16,
    pub initial_tsn: Tsn,
    pub parameters: Vec<Parameter>,
}

impl InitBody {
    pub fn cookie(&self) -> Option<&[u8]> {
        self.parameters
            .iter()
            .find(|p| p.param_type == PARAM_STATE_COOKIE)
            .map(|p| p.value.as_slice())
    }

    pub fn advertised_addrs(&self) -> Vec<SocketAddr> {
        self.parameters.iter().filter_map(Parameter::as_address).collect()
    }
}

/// Gap ack block, offsets relative to the cumulative TSN ack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GapBlock {
    pub start: u16,
    pub end: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SackBody {
    pub cumulative_tsn_ack: Tsn,
    pub a_rwnd: u32,
    pub gap_blocks: Vec<GapBlock>,
    pub duplicate_tsns: Vec<Tsn>,
}

/// Heartbeat body: 8-byte nonce plus 8-byte send timestamp, echoed
/// verbatim by HEARTBEAT-ACK.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeartbeatInfo {
    pub nonce: u64,
    pub sent_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Chunk {
    Data(DataChunk),
    Init(InitBody),
    InitAck(InitBody),
    Sack(SackBody),
    Heartbeat(HeartbeatInfo),
    HeartbeatAck(HeartbeatInfo),
    Abort,
    Shutdown,
    ShutdownAck,
    ShutdownComplete,
    CookieEcho { cookie: Vec<u8> },
    CookieAck,
    /// Chunk types outside the set above are preserved, not rejected.
    Unknown { chunk_type: u8, flags: u8, body: Vec<u8> },
}

impl Chunk {
    pub fn chunk_type(&self) -> u8 {
        match self {
            Chunk::Data(_) => CHUNK_TYPE_DATA,
            Chunk::Init(_) => CHUNK_TYPE_INIT,
            Chunk::InitAck(_) => CHUNK_TYPE_INIT_ACK,
            Chunk::Sack(_) => CHUNK_TYPE_SACK,
            Chunk::Heartbeat(_) => CHUNK_TYPE_HEARTBEAT,
            Chunk::HeartbeatAck(_) => CHUNK_TYPE_HEARTBEAT_ACK,
            Chunk::Abort => CHUNK_TYPE_ABORT,
            Chunk::Shutdown => CHUNK_TYPE_SHUTDOWN,
            Chunk::ShutdownAck => CHUNK_TYPE_SHUTDOWN_ACK,
            Chunk::ShutdownComplete => CHUNK_TYPE_SHUTDOWN_COMPLETE,
            Chunk::CookieEcho { .. } => CHUNK_TYPE_COOKIE_ECHO,
            Chunk::CookieAck => CHUNK_TYPE_COOKIE_ACK,
            Chunk::Unknown { chunk_type, .. } => *chunk_type,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Chunk::Data(_) => "DATA",
            Chunk::Init(_) => "INIT",
            Chunk::InitAck(_) => "INIT-ACK",
            Chunk::Sack(_) => "SACK",
            Chunk::Heartbeat(_) => "HEARTBEAT",
            Chunk::HeartbeatAck(_) => "HEARTBEAT-ACK",
            Chunk::Abort => "ABORT",
            Chunk::Shutdown => "SHUTDOWN",
            Chunk::ShutdownAck => "SHUTDOWN-ACK",
            Chunk::ShutdownComplete => "SHUTDOWN-COMPLETE",
            Chunk::CookieEcho { .. } => "COOKIE-ECHO",
            Chunk::CookieAck => "COOKIE-ACK",
            Chunk::Unknown { .. } => "UNKNOWN",
        }
    }

    /// Serialized size including chunk header, excluding padding.
    pub fn wire_size(&self) -> usize {
        CHUNK_HEADER_SIZE
            + match self {
                Chunk::Data(d) => DATA_CHUNK_HEADER_SIZE - CHUNK_HEADER_SIZE + d.payload.len(),
                Chunk::Init(b) | Chunk::InitAck(b) => {
                    16 + b.parameters.iter().map(|p| pad4(4 + p.value.len())).sum::<usize>()
                }
                Chunk::Sack(s) => 12 + 4 * s.gap_blocks.len() + 4 * s.duplicate_tsns.len(),
                Chunk::Heartbeat(_) | Chunk::HeartbeatAck(_) => 16,
                Chunk::Abort
                | Chunk::Shutdown
                | Chunk::ShutdownAck
                | Chunk::ShutdownComplete
                | Chunk::CookieAck => 0,
                Chunk::CookieEcho { cookie } => cookie.len(),
                Chunk::Unknown { body, .. } => body.len(),
            }
    }

    /// Size the chunk occupies inside a packet, padding included.
    pub fn padded_size(&self) -> usize {
        pad4(self.wire_size())
    }
}

pub fn pad4(n: usize) -> usize {
    (n + 3) & !3
}

/// CRC-32C (Castagnoli polynomial 0x1EDC6F41, reflected, init 0xFFFFFFFF,
/// final XOR 0xFFFFFFFF).
pub fn crc32c(data: &[u8]) -> u32 {
    const TABLE: [u32; 256] = crc32c_table();
    let mut crc = 0xFFFF_FFFFu32;
    for &byte in data {
        crc = (crc >> 8) ^ TABLE[((crc ^ byte as u32) & 0xFF) as usize];
    }
    crc ^ 0xFFFF_FFFF
}

const fn crc32c_table() -> [u32; 256] {
    // Reflected form of the Castagnoli polynomial.
    const POLY: u32 = 0x82F6_3B78;
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u32;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ POLY } else { crc >> 1 };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
    fn pad_to4(&mut self) {
        while self.buf.len() % 4 != 0 {
            self.buf.push(0);
        }
    }
}

fn encode_chunk(out: &mut Writer, chunk: &Chunk) -> Result<(), WireError> {
    let size = chunk.wire_size();
    if size > MAX_CHUNK_SIZE {
        return Err(WireError::ChunkTooLarge);
    }
    let flags: u8 = match chunk {
        Chunk::Data(d) => {
            let mut f = 0;
            if d.end {
                f |= DATA_FLAG_END;
            }
            if d.begin {
                f |= DATA_FLAG_BEGIN;
            }
            f
        }
        Chunk::Unknown { flags, .. } => *flags,
        _ => 0,
    };
    out.u8(chunk.chunk_type());
    out.u8(flags);
    out.u16(size as u16);
    match chunk {
        Chunk::Data(d) => {
            out.u32(d.tsn.0);
            out.u16(d.sid);
            out.u16(d.ssn);
            out.u32(d.ppid);
            out.bytes(&d.payload);
        }
        Chunk::Init(b) | Chunk::InitAck(b) => {
            out.u32(b.initiate_tag);
            out.u32(b.a_rwnd);
            out.u16(b.outbound_streams);
            out.u16(b.max_inbound_streams);
            out.u32(b.initial_tsn.0);
            for param in &b.parameters {
                out.u16(param.param_type);
                out.u16((4 + param.value.len()) as u16);
                out.bytes(&param.value);
                out.pad_to4();
            }
        }
        Chunk::Sack(s) => {
            out.u32(s.cumulative_tsn_ack.0);
            out.u32(s.a_rwnd);
            out.u16(s.gap_blocks.len() as u16);
            out.u16(s.duplicate_tsns.len() as u16);
            for gap in &s.gap_blocks {
                out.u16(gap.start);
                out.u16(gap.end);
            }
            for dup in &s.duplicate_tsns {
                out.u32(dup.0);
            }
        }
        Chunk::Heartbeat(hb) | Chunk::HeartbeatAck(hb) => {
            out.u64(hb.nonce);
            out.u64(hb.sent_at_ms);
        }
        Chunk::Abort
        | Chunk::Shutdown
        | Chunk::ShutdownAck
        | Chunk::ShutdownComplete
        | Chunk::CookieAck => {}
        Chunk::CookieEcho { cookie } => out.bytes(cookie),
        Chunk::Unknown { body, .. } => out.bytes(body),
    }
    out.pad_to4();
    Ok(())
}

/// Serializes a packet, filling in the checksum.
pub fn encode_packet(header: &CommonHeader, chunks: &[Chunk]) -> Result<Vec<u8>, WireError> {
    if chunks.is_empty() {
        return Err(WireError::EmptyPacket);
    }
    let mut w = Writer { buf: Vec::with_capacity(COMMON_HEADER_SIZE + 64) };
    w.u16(header.src_port);
    w.u16(header.dst_port);
    w.u32(header.verification_tag);
    w.u32(0); // checksum, filled below
    for chunk in chunks {
        encode_chunk(&mut w, chunk)?;
    }
    let sum = crc32c(&w.buf);
    w.buf[8..12].copy_from_slice(&sum.to_be_bytes());
    Ok(w.buf)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        let b = self.take(8)?;
        let mut arr = [0u8; 8];
        arr.copy_from_slice(b);
        Ok(u64::from_be_bytes(arr))
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.remaining() < n {
            return Err(WireError::Truncated);
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }
}

fn decode_init_body(body: &[u8]) -> Result<InitBody, WireError> {
    let mut r = Reader { data: body, pos: 0 };
    let initiate_tag = r.u32()?;
    let a_rwnd = r.u32()?;
    let outbound_streams = r.u16()?;
    let max_inbound_streams = r.u16()?;
    let initial_tsn = Tsn(r.u32()?);
    let mut parameters = Vec::new();
    while r.remaining() >= 4 {
        let param_type = r.u16()?;
        let len = r.u16()? as usize;
        if len < 4 || len - 4 > r.remaining() {
            return Err(WireError::BadLength);
        }
        let value = r.take(len - 4)?.to_vec();
        // Skip inter-parameter padding; the last one may be unpadded.
        let pad = pad4(len) - len;
        let _ = r.take(pad.min(r.remaining()));
        parameters.push(Parameter { param_type, value });
    }
    if r.remaining() != 0 {
        return Err(WireError::BadLength);
    }
    Ok(InitBody { initiate_tag, a_rwnd, outbound_streams, max_inbound_streams, initial_tsn, parameters })
}

fn decode_chunk(chunk_type: u8, flags: u8, body: &[u8]) -> Result<Chunk, WireError> {
    let mut r = Reader { data: body, pos: 0 };
    let chunk = match chunk_type {
        CHUNK_TYPE_DATA => {
            let tsn = Tsn(r.u32()?);
            let sid = r.u16()?;
            let ssn = r.u16()?;
            let ppid = r.u32()?;
            let payload = r.take(r.remaining())?.to_vec();
            if payload.is_empty() {
                // Empty DATA chunks are invalid.
                return Err(WireError::BadLength);
            }
            Chunk::Data(DataChunk {
                tsn,
                sid,
                ssn,
                ppid,
                begin: flags & DATA_FLAG_BEGIN != 0,
                end: flags & DATA_FLAG_END != 0,
                payload,
            })
        }
        CHUNK_TYPE_INIT => Chunk::Init(decode_init_body(body)?),
        CHUNK_TYPE_INIT_ACK => Chunk::InitAck(decode_init_body(body)?),
        CHUNK_TYPE_SACK => {
            let cumulative_tsn_ack = Tsn(r.u32()?);
            let a_rwnd = r.u32()?;
            let num_gaps = r.u16()? as usize;
            let num_dups = r.u16()? as usize;
            if r.remaining() != 4 * num_gaps + 4 * num_dups {
                return Err(WireError::BadLength);
            }
            let mut gap_blocks = Vec::with_capacity(num_gaps);
            for _ in 0..num_gaps {
                gap_blocks.push(GapBlock { start: r.u16()?, end: r.u16()? });
            }
            let mut duplicate_tsns = Vec::with_capacity(num_dups);
            for _ in 0..num_dups {
                duplicate_tsns.push(Tsn(r.u32()?));
            }
            Chunk::Sack(SackBody { cumulative_tsn_ack, a_rwnd, gap_blocks, duplicate_tsns })
        }
        CHUNK_TYPE_HEARTBEAT | CHUNK_TYPE_HEARTBEAT_ACK => {
            let info = HeartbeatInfo { nonce: r.u64()?, sent_at_ms: r.u64()? };
            if chunk_type == CHUNK_TYPE_HEARTBEAT {
                Chunk::Heartbeat(info)
            } else {
                Chunk::HeartbeatAck(info)
            }
        }
        CHUNK_TYPE_ABORT => Chunk::Abort,
        CHUNK_TYPE_SHUTDOWN => Chunk::Shutdown,
        CHUNK_TYPE_SHUTDOWN_ACK => Chunk::ShutdownAck,
        CHUNK_TYPE_SHUTDOWN_COMPLETE => Chunk::ShutdownComplete,
        CHUNK_TYPE_COOKIE_ECHO => Chunk::CookieEcho { cookie: body.to_vec() },
        CHUNK_TYPE_COOKIE_ACK => Chunk::CookieAck,
        other => Chunk::Unknown { chunk_type: other, flags, body: body.to_vec() },
    };
    Ok(chunk)
}

/// Parses and checksum-verifies a packet. Total over arbitrary input:
/// never panics or over-reads.
pub fn decode_packet(data: &[u8]) -> Result<(CommonHeader, Vec<Chunk>), WireError> {
    if data.len() < COMMON_HEADER_SIZE {
        return Err(WireError::Truncated);
    }
    let header = CommonHeader {
        src_port: u16::from_be_bytes([data[0], data[1]]),
        dst_port: u16::from_be_bytes([data[2], data[3]]),
        verification_tag: u32::from_be_bytes([data[4], data[5], data[6], data[7]]),
        checksum: u32::from_be_bytes([data[8], data[9], data[10], data[11]]),
    };
    let mut zeroed = data.to_vec();
    zeroed[8..12].fill(0);
    if crc32c(&zeroed) != header.checksum {
        return Err(WireError::BadChecksum);
    }

    let mut chunks = Vec::new();
    let mut rest = &data[COMMON_HEADER_SIZE..];
    while !rest.is_empty() {
        if rest.len() < CHUNK_HEADER_SIZE {
            return Err(WireError::Truncated);
        }
        let chunk_type = rest[0];
        let flags = rest[1];
        let len = u16::from_be_bytes([rest[2], rest[3]]) as usize;
        if len < CHUNK_HEADER_SIZE {
            return Err(WireError::BadLength);
        }
        if len > rest.len() {
            return Err(WireError::Truncated);
        }
        chunks.push(decode_chunk(chunk_type, flags, &rest[CHUNK_HEADER_SIZE..len])?);
        // The final chunk's padding may be absent.
        rest = &rest[pad4(len).min(rest.len())..];
    }
    if chunks.is_empty() {
        return Err(WireError::EmptyPacket);
    }
    Ok((header, chunks))
}
