//! State cookies for the four-way handshake.
//!
//! A listener answers INIT without allocating anything: every field it
//! would have to remember is serialized into a cookie, authenticated
//! with HMAC-SHA256 under an endpoint-local secret, and sent back in
//! INIT-ACK. Only when the initiator echoes the cookie — proving it can
//! receive at its claimed source address — does the listener rebuild the
//! association state from the cookie contents.

use hmac::{Hmac, Mac};
use sha2::Sha256;
use std::net::{IpAddr, SocketAddr};
use thiserror::Error;

type HmacSha256 = Hmac<Sha256>;

const MAC_LEN: usize = 32;
/// Upper bound on the serialized cookie; fits any address family.
pub const MAX_COOKIE_LEN: usize = 512;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CookieError {
    /// MAC mismatch or blob too mangled to parse.
    #[error("cookie authentication failed")]
    BadMac,
    #[error("cookie older than allowed")]
    Expired,
    #[error("cookie echoed from a different address")]
    AddrMismatch,
}

/// Everything the listener needs to rebuild an association when the
/// cookie comes back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateCookie {
    pub peer_addr: SocketAddr,
    /// Peer's initiate tag; goes into the verification tag of every
    /// packet we send them.
    pub peer_tag: u32,
    /// Tag we advertised in INIT-ACK; peers must echo it back to us.
    pub local_tag: u32,
    pub peer_rwnd: u32,
    pub peer_initial_tsn: u32,
    /// First TSN we advertised in INIT-ACK.
    pub local_initial_tsn: u32,
    pub inbound_streams: u16,
    pub outbound_streams: u16,
    pub created_at_ms: u64,
}

impl StateCookie {
    fn serialize_fields(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(64);
        buf.extend_from_slice(&self.created_at_ms.to_be_bytes());
        buf.extend_from_slice(&self.peer_tag.to_be_bytes());
        buf.extend_from_slice(&self.local_tag.to_be_bytes());
        buf.extend_from_slice(&self.peer_rwnd.to_be_bytes());
        buf.extend_from_slice(&self.peer_initial_tsn.to_be_bytes());
        buf.extend_from_slice(&self.local_initial_tsn.to_be_bytes());
        buf.extend_from_slice(&self.inbound_streams.to_be_bytes());
        buf.extend_from_slice(&self.outbound_streams.to_be_bytes());
        buf.extend_from_slice(&self.peer_addr.port().to_be_bytes());
        match self.peer_addr.ip() {
            IpAddr::V4(ip) => {
                buf.push(4);
                buf.extend_from_slice(&ip.octets());
            }
            IpAddr::V6(ip) => {
                buf.push(6);
                buf.extend_from_slice(&ip.octets());
            }
        }
        buf
    }

    fn deserialize_fields(data: &[u8]) -> Option<StateCookie> {
        let fixed = 8 + 4 * 5 + 2 * 2 + 2 + 1;
        if data.len() < fixed {
            return None;
        }
        let u32_at = |off: usize| u32::from_be_bytes(data[off..off + 4].try_into().unwrap());
        let u16_at = |off: usize| u16::from_be_bytes(data[off..off + 2].try_into().unwrap());
        let created_at_ms = u64::from_be_bytes(data[0..8].try_into().unwrap());
        let port = u16_at(32);
        let ip = match (data[34], data.len() - fixed) {
            (4, 4) => {
                let b: [u8; 4] = data[35..39].try_into().unwrap();
                IpAddr::from(b)
            }
            (6, 16) => {
                let b: [u8; 16] = data[35..51].try_into().unwrap();
                IpAddr::from(b)
            }
            _ => return None,
        };
        Some(StateCookie {
            peer_addr: SocketAddr::new(ip, port),
            peer_tag: u32_at(8),
            local_tag: u32_at(12),
            peer_rwnd: u32_at(16),
            peer_initial_tsn: u32_at(20),
            local_initial_tsn: u32_at(24),
            inbound_streams: u16_at(28),
            outbound_streams: u16_at(30),
            created_at_ms,
        })
    }
}

/// Serializes and signs a cookie. Deterministic in its inputs.
pub fn make_cookie(secret: &[u8], cookie: &StateCookie) -> Vec<u8> {
    let mut blob = cookie.serialize_fields();
    let mut mac = HmacSha256::new_from_slice(secret).expect("hmac accepts any key length");
    mac.update(&blob);
    blob.extend_from_slice(&mac.finalize().into_bytes());
    debug_assert!(blob.len() <= MAX_COOKIE_LEN);
    blob
}

/// Authenticates and validates an echoed cookie. Checks run in a fixed
/// order — MAC, then source address, then age — so a forged blob learns
/// nothing from the error variant.
pub fn verify_cookie(
    secret: &[u8],
    blob: &[u8],
    now_ms: u64,
    max_age_ms: u64,
    source_addr: SocketAddr,
) -> Result<StateCookie, CookieError> {
    if blob.len() < MAC_LEN {
        return Err(CookieError::BadMac);
    }
    let (fields, tag) = blob.split_at(blob.len() - MAC_LEN);
    let mut mac = HmacSha256::new_from_slice(secret).expect("hmac accepts any key length");
    mac.update(fields);
    // verify_slice compares in constant time.
    mac.verify_slice(tag).map_err(|_| CookieError::BadMac)?;
    let cookie = StateCookie::deserialize_fields(fields).ok_or(CookieError::BadMac)?;
    if cookie.peer_addr != source_addr {
        return Err(CookieError::AddrMismatch);
    }
    if now_ms.saturating_sub(cookie.created_at_ms) > max_age_ms {
        return Err(CookieError::Expired);
    }
    Ok(cookie)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    const SECRET: &[u8] = b"0123456789abcdef0123456789abcdef";

    fn sample(addr: &str) -> StateCookie {
        StateCookie {
            peer_addr: addr.parse().unwrap(),
            peer_tag: 0x1111_2222,
            local_tag: 0x3333_4444,
            peer_rwnd: 131072,
            peer_initial_tsn: 1000,
            local_initial_tsn: 2000,
            inbound_streams: 10,
            outbound_streams: 10,
            created_at_ms: 50_000,
        }
    }

    #[test]
    fn roundtrip_within_max_age() {
        let cookie = sample("10.0.0.1:9899");
        let blob = make_cookie(SECRET, &cookie);
        assert!(blob.len() <= MAX_COOKIE_LEN);
        let got = verify_cookie(SECRET, &blob, 50_000 + 60_000, 60_000, cookie.peer_addr).unwrap();
        assert_eq!(got, cookie);
    }

    #[test]
    fn ipv6_roundtrip() {
        let cookie = sample("[fe80::2:3]:1234");
        let blob = make_cookie(SECRET, &cookie);
        let got = verify_cookie(SECRET, &blob, 50_001, 60_000, cookie.peer_addr).unwrap();
        assert_eq!(got, cookie);
    }

    #[test]
    fn deterministic_for_same_inputs() {
        let cookie = sample("10.0.0.1:9899");
        assert_eq!(make_cookie(SECRET, &cookie), make_cookie(SECRET, &cookie));
    }

    #[test]
    fn any_flipped_bit_fails_mac() {
        let cookie = sample("10.0.0.1:9899");
        let blob = make_cookie(SECRET, &cookie);
        for i in 0..blob.len() {
            let mut bad = blob.clone();
            bad[i] ^= 0x80;
            assert_eq!(
                verify_cookie(SECRET, &bad, 50_001, 60_000, cookie.peer_addr),
                Err(CookieError::BadMac),
                "byte {i} tamper went undetected"
            );
        }
    }

    #[test]
    fn wrong_secret_fails_mac() {
        let cookie = sample("10.0.0.1:9899");
        let blob = make_cookie(SECRET, &cookie);
        assert_eq!(
            verify_cookie(b"another-secret", &blob, 50_001, 60_000, cookie.peer_addr),
            Err(CookieError::BadMac)
        );
    }

    #[test]
    fn stale_cookie_expires() {
        let cookie = sample("10.0.0.1:9899");
        let blob = make_cookie(SECRET, &cookie);
        assert_eq!(
            verify_cookie(SECRET, &blob, 50_000 + 60_001, 60_000, cookie.peer_addr),
            Err(CookieError::Expired)
        );
    }

    #[test]
    fn echo_from_other_address_rejected() {
        let cookie = sample("10.0.0.1:9899");
        let blob = make_cookie(SECRET, &cookie);
        assert_eq!(
            verify_cookie(SECRET, &blob, 50_001, 60_000, "10.0.0.2:9899".parse().unwrap()),
            Err(CookieError::AddrMismatch)
        );
    }

    #[test]
    fn mac_check_precedes_age_and_addr() {
        // Tampered + expired + wrong source must still report BadMac.
        let cookie = sample("10.0.0.1:9899");
        let mut blob = make_cookie(SECRET, &cookie);
        blob[0] ^= 1;
        assert_eq!(
            verify_cookie(SECRET, &blob, u64::MAX, 0, "9.9.9.9:1".parse().unwrap()),
            Err(CookieError::BadMac)
        );
    }

    #[test]
    fn random_blobs_never_verify() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xC00C1E);
        let addr: SocketAddr = "10.0.0.1:9899".parse().unwrap();
        for _ in 0..1000 {
            let len = rng.gen_range(0..256);
            let blob: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            assert_eq!(verify_cookie(SECRET, &blob, 50_001, 60_000, addr), Err(CookieError::BadMac));
        }
    }
}
