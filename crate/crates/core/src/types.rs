//! Small domain newtypes shared across the stack.

use std::fmt;

/// Transmission sequence number. Per-association ordering for
/// reliability and acknowledgement, wrapping modulo 2^32.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tsn(pub u32);

impl Tsn {
    pub fn next(self) -> Tsn {
        Tsn(self.0.wrapping_add(1))
    }

    pub fn prev(self) -> Tsn {
        Tsn(self.0.wrapping_sub(1))
    }

    /// Serial-number comparison: true iff `self` is after `other` in
    /// wrapping order (distance below half the number space).
    pub fn after(self, other: Tsn) -> bool {
        let diff = self.0.wrapping_sub(other.0);
        diff != 0 && diff < 0x8000_0000
    }

    pub fn distance_from(self, other: Tsn) -> u32 {
        self.0.wrapping_sub(other.0)
    }
}

impl fmt::Debug for Tsn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tsn({})", self.0)
    }
}

/// Stream sequence number. Per-stream ordering for delivery, wrapping
/// modulo 2^16.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ssn(pub u16);

impl Ssn {
    pub fn next(self) -> Ssn {
        Ssn(self.0.wrapping_add(1))
    }

    /// Serial-number comparison modulo 2^16.
    pub fn after(self, other: Ssn) -> bool {
        let diff = self.0.wrapping_sub(other.0);
        diff != 0 && diff < 0x8000
    }
}

impl fmt::Debug for Ssn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Ssn({})", self.0)
    }
}

/// Endpoint-local association identifier, monotonically assigned and
/// never reused for the endpoint's lifetime.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AssocId(pub u32);

impl fmt::Debug for AssocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AssocId({})", self.0)
    }
}

impl fmt::Display for AssocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsn_serial_compare_wraps() {
        assert!(Tsn(1).after(Tsn(0)));
        assert!(!Tsn(0).after(Tsn(0)));
        assert!(Tsn(0).after(Tsn(u32::MAX)));
        assert!(!Tsn(u32::MAX).after(Tsn(0)));
        assert!(Tsn(5).after(Tsn(u32::MAX - 5)));
    }

    #[test]
    fn ssn_serial_compare_wraps() {
        assert!(Ssn(0).after(Ssn(u16::MAX)));
        assert!(Ssn(1).after(Ssn(0)));
        assert!(!Ssn(u16::MAX).after(Ssn(0)));
    }
}
