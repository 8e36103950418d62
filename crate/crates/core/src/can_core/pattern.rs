//! Hex-digit wildcard patterns over identifier and payload.
//!
//! A pattern such as `123 12ab..78` fixes every digit except the `.`
//! positions. Patterns define the fuzz input space for the brute-force,
//! mutation and (optionally) random strategies.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::frame::{CanFrame, IdKind, MAX_PAYLOAD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Fixed(u8),
    Wild,
}

impl Slot {
    pub fn is_wild(self) -> bool {
        matches!(self, Slot::Wild)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternPart {
    Id,
    Payload,
}

impl fmt::Display for PatternPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatternPart::Id => "id",
            PatternPart::Payload => "payload",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    /// `position` is 1-based within the part, after any `0x` prefix.
    #[error("invalid character {found:?} at {part} digit {position}")]
    InvalidDigit {
        part: PatternPart,
        position: usize,
        found: char,
    },
    #[error("payload has {0} digits; expected an even count")]
    OddPayload(usize),
    #[error("payload has {0} digits; at most 16 allowed")]
    PayloadTooLong(usize),
    #[error("{kind:?} id needs exactly {expected} digits, got {found} (use --extended for 29-bit ids)")]
    IdDigitCount {
        kind: IdKind,
        expected: usize,
        found: usize,
    },
    #[error("fixed id digits exceed the {kind:?} range (smallest match {smallest:#x}), first offending digit {position}")]
    IdOutOfRange {
        kind: IdKind,
        smallest: u64,
        position: usize,
    },
    #[error("expected `<id> <payload>`, got {0:?}")]
    Shape(String),
    #[error("pattern has no wildcard digits")]
    NoWildcards,
}

/// Wildcard mask over identifier and payload hex digits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pattern {
    kind: IdKind,
    id_digits: Vec<Slot>,
    payload_digits: Vec<Slot>,
}

fn parse_slots(text: &str, part: PatternPart) -> Result<Vec<Slot>, PatternError> {
    text.chars()
        .enumerate()
        .map(|(i, c)| match c {
            '.' => Ok(Slot::Wild),
            c => c
                .to_digit(16)
                .map(|d| Slot::Fixed(d as u8))
                .ok_or(PatternError::InvalidDigit {
                    part,
                    position: i + 1,
                    found: c,
                }),
        })
        .collect()
}

impl Pattern {
    /// Parses the id part (optional `0x` prefix) and the payload part.
    pub fn parse(id: &str, payload: &str, kind: IdKind) -> Result<Self, PatternError> {
        let id = id
            .strip_prefix("0x")
            .or_else(|| id.strip_prefix("0X"))
            .unwrap_or(id);
        let id_digits = parse_slots(id, PatternPart::Id)?;
        let payload_digits = parse_slots(payload, PatternPart::Payload)?;
        if payload_digits.len() > 2 * MAX_PAYLOAD {
            return Err(PatternError::PayloadTooLong(payload_digits.len()));
        }
        if payload_digits.len() % 2 != 0 {
            return Err(PatternError::OddPayload(payload_digits.len()));
        }
        if id_digits.len() != kind.id_digits() {
            return Err(PatternError::IdDigitCount {
                kind,
                expected: kind.id_digits(),
                found: id_digits.len(),
            });
        }
        let smallest = digits_value(id_digits.iter().map(|s| match s {
            Slot::Fixed(d) => *d,
            Slot::Wild => 0,
        }));
        if smallest > u64::from(kind.max_id()) {
            // Most significant fixed digit that pushes the minimum over the limit.
            let max_digits = hex_digits(kind.max_id(), kind.id_digits());
            let position = id_digits
                .iter()
                .zip(&max_digits)
                .position(|(s, m)| matches!(s, Slot::Fixed(d) if d > m))
                .map_or(1, |p| p + 1);
            return Err(PatternError::IdOutOfRange {
                kind,
                smallest,
                position,
            });
        }
        Ok(Pattern {
            kind,
            id_digits,
            payload_digits,
        })
    }

    /// The exact-id, fixed-payload pattern that denotes `frame`.
    pub fn from_frame(frame: &CanFrame) -> Self {
        let id_digits = hex_digits(frame.id(), frame.kind().id_digits())
            .into_iter()
            .map(Slot::Fixed)
            .collect();
        let payload_digits = frame
            .data()
            .iter()
            .flat_map(|b| [Slot::Fixed(b >> 4), Slot::Fixed(b & 0xF)])
            .collect();
        Pattern {
            kind: frame.kind(),
            id_digits,
            payload_digits,
        }
    }

    /// Fixes the id of `frame` and opens every digit of a `payload_len`-byte payload.
    pub fn payload_wildcard(frame: &CanFrame, payload_len: usize) -> Self {
        let mut p = Self::from_frame(frame);
        p.payload_digits = vec![Slot::Wild; 2 * payload_len.min(MAX_PAYLOAD)];
        p
    }

    pub fn kind(&self) -> IdKind {
        self.kind
    }

    pub fn id_digits(&self) -> &[Slot] {
        &self.id_digits
    }

    pub fn payload_digits(&self) -> &[Slot] {
        &self.payload_digits
    }

    pub fn payload_len(&self) -> usize {
        self.payload_digits.len() / 2
    }

    pub fn id_wildcards(&self) -> usize {
        self.id_digits.iter().filter(|s| s.is_wild()).count()
    }

    pub fn payload_wildcards(&self) -> usize {
        self.payload_digits.iter().filter(|s| s.is_wild()).count()
    }

    pub fn wildcards(&self) -> usize {
        self.id_wildcards() + self.payload_wildcards()
    }

    /// Number of concrete frames the pattern denotes, ids clamped to the kind's range.
    pub fn space_size(&self) -> u128 {
        let ids = count_le(&self.id_digits, self.kind.max_id());
        ids * 16u128.pow(self.payload_wildcards() as u32)
    }

    /// Does `frame` agree with every fixed digit?
    pub fn matches(&self, frame: &CanFrame) -> bool {
        if frame.kind() != self.kind || frame.len() != self.payload_len() {
            return false;
        }
        let id = hex_digits(frame.id(), self.kind.id_digits());
        let payload = frame.data().iter().flat_map(|b| [b >> 4, b & 0xF]);
        self.id_digits
            .iter()
            .zip(id)
            .chain(self.payload_digits.iter().zip(payload))
            .all(|(slot, d)| match slot {
                Slot::Fixed(f) => *f == d,
                Slot::Wild => true,
            })
    }

    /// Builds a frame from wildcard values given in pattern order (id digits first).
    /// Returns `None` when the resulting id is out of range.
    pub fn instantiate(&self, wild_values: &[u8]) -> Option<CanFrame> {
        let mut values = wild_values.iter().copied();
        let mut fill = |slot: &Slot| match slot {
            Slot::Fixed(d) => *d,
            Slot::Wild => values.next().unwrap_or(0) & 0xF,
        };
        let id = digits_value(self.id_digits.iter().map(&mut fill));
        if id > u64::from(self.kind.max_id()) {
            return None;
        }
        let nibbles: Vec<u8> = self.payload_digits.iter().map(&mut fill).collect();
        let payload: Vec<u8> = nibbles.chunks(2).map(|p| p[0] << 4 | p[1]).collect();
        CanFrame::new(id as u32, self.kind, &payload).ok()
    }

    /// All concrete frames in lexicographic order of the wildcard digits.
    pub fn enumerate(&self) -> PatternIter<'_> {
        PatternIter {
            pattern: self,
            counter: vec![0; self.wildcards()],
            done: false,
        }
    }

    /// Random bit-flip walk over the wildcard digits.
    pub fn mutate(&self, seed: u64) -> Result<Mutator, PatternError> {
        Mutator::new(self.clone(), seed)
    }

    /// A uniformly random concrete frame from the pattern space.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CanFrame {
        let n = self.wildcards();
        let mut values = vec![0u8; n];
        loop {
            for v in values.iter_mut() {
                *v = rng.gen_range(0..16);
            }
            if let Some(f) = self.instantiate(&values) {
                return f;
            }
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let write = |f: &mut fmt::Formatter<'_>, slots: &[Slot]| -> fmt::Result {
            for s in slots {
                match s {
                    Slot::Fixed(d) => write!(f, "{d:X}")?,
                    Slot::Wild => f.write_str(".")?,
                }
            }
            Ok(())
        };
        write(f, &self.id_digits)?;
        f.write_str(" ")?;
        write(f, &self.payload_digits)
    }
}

/// Parses `"<id> <payload>"` (or `<id>#<payload>`).
pub fn parse_pattern(text: &str, kind: IdKind) -> Result<Pattern, PatternError> {
    let text = text.trim();
    let (id, payload) = match text.split_once('#') {
        Some(parts) => parts,
        None => {
            let mut it = text.split_whitespace();
            let id = it.next().ok_or_else(|| PatternError::Shape(text.into()))?;
            let payload = it.next().unwrap_or("");
            if it.next().is_some() {
                return Err(PatternError::Shape(text.into()));
            }
            (id, payload)
        }
    };
    Pattern::parse(id, payload, kind)
}

fn digits_value(digits: impl Iterator<Item = u8>) -> u64 {
    digits.fold(0u64, |acc, d| acc << 4 | u64::from(d))
}

fn hex_digits(value: u32, count: usize) -> Vec<u8> {
    (0..count)
        .rev()
        .map(|i| (value >> (4 * i) & 0xF) as u8)
        .collect()
}

/// Count digit assignments whose value is `<= max`.
fn count_le(digits: &[Slot], max: u32) -> u128 {
    let max_digits = hex_digits(max, digits.len());
    let mut wild_after: Vec<u32> = vec![0; digits.len()];
    let mut acc = 0;
    for i in (0..digits.len()).rev() {
        wild_after[i] = acc;
        if digits[i].is_wild() {
            acc += 1;
        }
    }
    let mut count = 0u128;
    for (i, (slot, m)) in digits.iter().zip(&max_digits).enumerate() {
        let free = 16u128.pow(wild_after[i]);
        match *slot {
            Slot::Wild => count += u128::from(*m) * free,
            Slot::Fixed(d) if d < *m => return count + free,
            Slot::Fixed(d) if d > *m => return count,
            Slot::Fixed(_) => {}
        }
    }
    count + 1
}

/// Iterator returned by [`Pattern::enumerate`].
#[derive(Debug, Clone)]
pub struct PatternIter<'a> {
    pattern: &'a Pattern,
    counter: Vec<u8>,
    done: bool,
}

impl Iterator for PatternIter<'_> {
    type Item = CanFrame;

    fn next(&mut self) -> Option<CanFrame> {
        if self.done {
            return None;
        }
        // Ids grow monotonically with the counter, so the first out-of-range id ends the walk.
        let Some(frame) = self.pattern.instantiate(&self.counter) else {
            self.done = true;
            return None;
        };
        self.done = true;
        for v in self.counter.iter_mut().rev() {
            if *v < 0xF {
                *v += 1;
                self.done = false;
                break;
            }
            *v = 0;
        }
        Some(frame)
    }
}

/// Infinite stream of frames, each one bit flip away from its predecessor.
///
/// Starts from the all-zero wildcard assignment. Flips that would push the
/// identifier out of range are redrawn.
#[derive(Debug, Clone)]
pub struct Mutator {
    pattern: Pattern,
    assignment: Vec<u8>,
    rng: ChaCha8Rng,
}

impl Mutator {
    pub fn new(pattern: Pattern, seed: u64) -> Result<Self, PatternError> {
        let n = pattern.wildcards();
        if n == 0 {
            return Err(PatternError::NoWildcards);
        }
        Ok(Mutator {
            pattern,
            assignment: vec![0; n],
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn assignment(&self) -> &[u8] {
        &self.assignment
    }

    /// Flip one random bit; returns the (wildcard index, bit) that changed and the new frame.
    pub fn step(&mut self) -> (usize, u8, CanFrame) {
        loop {
            let slot = self.rng.gen_range(0..self.assignment.len());
            let bit = self.rng.gen_range(0..4u8);
            self.assignment[slot] ^= 1 << bit;
            match self.pattern.instantiate(&self.assignment) {
                Some(frame) => return (slot, bit, frame),
                None => self.assignment[slot] ^= 1 << bit,
            }
        }
    }
}

impl Iterator for Mutator {
    type Item = CanFrame;

    fn next(&mut self) -> Option<CanFrame> {
        Some(self.step().2)
    }
}
