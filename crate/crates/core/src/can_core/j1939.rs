//! J1939 29-bit identifier layout.
//!
//! ```text
//!  28..26   25   24   23..16   15..8   7..0
//!  prio     R    DP   PF       PS      SA
//! ```
//! The reserved (extended data page) bit is always written as 0.

use thiserror::Error;

use super::frame::IdKind;
use super::pattern::{Pattern, Slot};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum J1939Error {
    #[error("priority {0} exceeds 3 bits")]
    Priority(u8),
    #[error("data page {0} exceeds 1 bit")]
    DataPage(u8),
    #[error("identifier {0:#x} exceeds 29 bits")]
    Identifier(u32),
}

/// PDU formats below this value are destination specific (PDU1).
pub const PDU2_THRESHOLD: u8 = 0xF0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct J1939Id {
    pub priority: u8,
    pub data_page: u8,
    pub pdu_format: u8,
    pub pdu_specific: u8,
    pub source_address: u8,
}

impl J1939Id {
    pub fn pack(&self) -> Result<u32, J1939Error> {
        if self.priority > 7 {
            return Err(J1939Error::Priority(self.priority));
        }
        if self.data_page > 1 {
            return Err(J1939Error::DataPage(self.data_page));
        }
        Ok(u32::from(self.priority) << 26
            | u32::from(self.data_page) << 24
            | u32::from(self.pdu_format) << 16
            | u32::from(self.pdu_specific) << 8
            | u32::from(self.source_address))
    }

    pub fn unpack(id: u32) -> Result<Self, J1939Error> {
        if id > 0x1FFF_FFFF {
            return Err(J1939Error::Identifier(id));
        }
        Ok(J1939Id {
            priority: (id >> 26 & 0x7) as u8,
            data_page: (id >> 24 & 0x1) as u8,
            pdu_format: (id >> 16 & 0xFF) as u8,
            pdu_specific: (id >> 8 & 0xFF) as u8,
            source_address: (id & 0xFF) as u8,
        })
    }

    /// 18-bit parameter group number; PDU1 formats drop the destination address.
    pub fn pgn(&self) -> u32 {
        let ps = if self.pdu_format < PDU2_THRESHOLD {
            0
        } else {
            self.pdu_specific
        };
        u32::from(self.data_page) << 16 | u32::from(self.pdu_format) << 8 | u32::from(ps)
    }
}

/// PGN carried by a 29-bit identifier.
pub fn pgn(id: u32) -> Result<u32, J1939Error> {
    J1939Id::unpack(id).map(|j| j.pgn())
}

/// Extended-id pattern that sweeps every PDU format / PDU specific pair
/// for a fixed priority, data page and source address.
pub fn pgn_sweep_pattern(
    priority: u8,
    data_page: u8,
    source_address: u8,
    payload_digits: &[Slot],
) -> Result<Pattern, J1939Error> {
    let base = J1939Id {
        priority,
        data_page,
        pdu_format: 0,
        pdu_specific: 0,
        source_address,
    }
    .pack()?;
    let text: String = (0..8)
        .rev()
        .enumerate()
        .map(|(i, shift)| {
            if (2..6).contains(&i) {
                '.'
            } else {
                char::from_digit(base >> (4 * shift) & 0xF, 16).unwrap()
            }
        })
        .collect();
    let payload: String = payload_digits
        .iter()
        .map(|s| match s {
            Slot::Fixed(d) => char::from_digit(u32::from(*d), 16).unwrap(),
            Slot::Wild => '.',
        })
        .collect();
    Ok(Pattern::parse(&text, &payload, IdKind::Extended)
        .expect("packed J1939 ids are always valid extended patterns"))
}
