use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

/// Largest 11-bit identifier.
pub const STANDARD_ID_MAX: u32 = 0x7FF;
/// Largest 29-bit identifier.
pub const EXTENDED_ID_MAX: u32 = 0x1FFF_FFFF;
/// Classic CAN payload limit.
pub const MAX_PAYLOAD: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IdKind {
    Standard,
    Extended,
}

impl IdKind {
    pub const fn max_id(self) -> u32 {
        match self {
            IdKind::Standard => STANDARD_ID_MAX,
            IdKind::Extended => EXTENDED_ID_MAX,
        }
    }

    /// Number of hex digits used to print an identifier of this kind.
    pub const fn id_digits(self) -> usize {
        match self {
            IdKind::Standard => 3,
            IdKind::Extended => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("identifier {id:#x} out of range for {kind:?} frame")]
    IdOutOfRange { id: u32, kind: IdKind },
    #[error("payload of {0} bytes exceeds 8")]
    PayloadTooLong(usize),
}

/// A CAN 2.0B data frame.
///
/// The payload is stored inline so frames are `Copy` and cheap to queue.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct CanFrame {
    id: u32,
    kind: IdKind,
    len: u8,
    data: [u8; MAX_PAYLOAD],
}

impl CanFrame {
    pub fn new(id: u32, kind: IdKind, payload: &[u8]) -> Result<Self, FrameError> {
        if id > kind.max_id() {
            return Err(FrameError::IdOutOfRange { id, kind });
        }
        if payload.len() > MAX_PAYLOAD {
            return Err(FrameError::PayloadTooLong(payload.len()));
        }
        let mut data = [0u8; MAX_PAYLOAD];
        data[..payload.len()].copy_from_slice(payload);
        Ok(CanFrame {
            id,
            kind,
            len: payload.len() as u8,
            data,
        })
    }

    pub fn standard(id: u32, payload: &[u8]) -> Result<Self, FrameError> {
        Self::new(id, IdKind::Standard, payload)
    }

    pub fn extended(id: u32, payload: &[u8]) -> Result<Self, FrameError> {
        Self::new(id, IdKind::Extended, payload)
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn kind(&self) -> IdKind {
        self.kind
    }

    pub fn is_extended(&self) -> bool {
        self.kind == IdKind::Extended
    }

    pub fn data(&self) -> &[u8] {
        &self.data[..self.len as usize]
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Bit `bit` (0 = LSB) of payload byte `byte`, or `None` when the payload is too short.
    pub fn bit(&self, byte: usize, bit: u8) -> Option<bool> {
        self.data().get(byte).map(|b| b >> bit & 1 == 1)
    }

    /// Copy of this frame with one payload bit toggled. Out-of-range positions return the frame unchanged.
    pub fn with_bit_flipped(&self, byte: usize, bit: u8) -> CanFrame {
        let mut out = *self;
        if byte < out.len() {
            out.data[byte] ^= 1 << bit;
        }
        out
    }

    /// Arbitration key: lower sorts first and wins the bus.
    ///
    /// The 11 base bits are compared first; a standard data frame beats an
    /// extended frame with the same base because SRR/IDE are recessive in the
    /// extended format.
    pub fn arbitration_key(&self) -> (u32, bool, u32) {
        match self.kind {
            IdKind::Standard => (self.id, false, 0),
            IdKind::Extended => (self.id >> 18, true, self.id & 0x3_FFFF),
        }
    }

    /// Nominal bits on the wire (no bit stuffing).
    pub fn wire_bits(&self) -> u32 {
        match self.kind {
            IdKind::Standard => 108,
            IdKind::Extended => 110,
        }
    }
}

impl PartialOrd for CanFrame {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CanFrame {
    fn cmp(&self, other: &Self) -> Ordering {
        self.arbitration_key()
            .cmp(&other.arbitration_key())
            .then_with(|| self.data().cmp(other.data()))
    }
}

impl fmt::Display for CanFrame {
    /// candump-style `ID#PAYLOAD`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            IdKind::Standard => write!(f, "{:03X}#", self.id)?,
            IdKind::Extended => write!(f, "{:08X}#", self.id)?,
        }
        for b in self.data() {
            write!(f, "{b:02X}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for CanFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CanFrame({self})")
    }
}
