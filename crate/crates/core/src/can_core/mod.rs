//! Frames, wildcard patterns, J1939 identifiers and the traffic-log format.

pub mod frame;
pub mod j1939;
pub mod log;
pub mod pattern;

pub use frame::{CanFrame, FrameError, IdKind, EXTENDED_ID_MAX, MAX_PAYLOAD, STANDARD_ID_MAX};
pub use j1939::{pgn, J1939Error, J1939Id};
pub use log::{Direction, LogEntry, LogError, TrafficLog};
pub use pattern::{parse_pattern, Mutator, Pattern, PatternError, Slot};
