//! Traffic logs in candump text form.
//!
//! One frame per line:
//!
//! ```text
//! (1.500000) vcan0:tx 123#12AB0078
//! ```
//!
//! Seconds and a 6-digit microsecond fraction of virtual time, the channel
//! with a `:tx`/`:rx` direction suffix, and the frame. A line without a
//! suffix is read as sent traffic.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use thiserror::Error;

use super::frame::{CanFrame, IdKind};
use crate::Micros;

pub const DEFAULT_CHANNEL: &str = "vcan0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Sent,
    Received,
}

impl Direction {
    fn suffix(self) -> &'static str {
        match self {
            Direction::Sent => "tx",
            Direction::Received => "rx",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LogEntry {
    pub timestamp: Micros,
    pub direction: Direction,
    pub frame: CanFrame,
}

impl LogEntry {
    pub fn sent(timestamp: Micros, frame: CanFrame) -> Self {
        LogEntry {
            timestamp,
            direction: Direction::Sent,
            frame,
        }
    }

    pub fn received(timestamp: Micros, frame: CanFrame) -> Self {
        LogEntry {
            timestamp,
            direction: Direction::Received,
            frame,
        }
    }

    /// Formats this entry as one log line (without newline).
    pub fn to_line(&self, channel: &str) -> String {
        format!(
            "({}.{:06}) {}:{} {}",
            self.timestamp / 1_000_000,
            self.timestamp % 1_000_000,
            channel,
            self.direction.suffix(),
            self.frame
        )
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: timestamp goes backwards")]
    Unordered { line: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Timestamp-ordered record of sent and received frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficLog {
    pub channel: String,
    entries: Vec<LogEntry>,
}

impl Default for TrafficLog {
    fn default() -> Self {
        TrafficLog::new()
    }
}

impl TrafficLog {
    pub fn new() -> Self {
        TrafficLog {
            channel: DEFAULT_CHANNEL.to_string(),
            entries: Vec::new(),
        }
    }

    /// Builds a log from entries in any order; equal timestamps keep their relative order.
    pub fn from_entries(mut entries: Vec<LogEntry>) -> Self {
        entries.sort_by_key(|e| e.timestamp);
        TrafficLog {
            channel: DEFAULT_CHANNEL.to_string(),
            entries,
        }
    }

    /// Inserts after every entry with a timestamp `<=` the new one.
    pub fn push(&mut self, entry: LogEntry) {
        let at = self
            .entries
            .partition_point(|e| e.timestamp <= entry.timestamp);
        self.entries.insert(at, entry);
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<LogEntry> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sent(&self) -> impl Iterator<Item = &LogEntry> + '_ {
        self.entries
            .iter()
            .filter(|e| e.direction == Direction::Sent)
    }

    /// Timestamp span covered by the sent entries, if any.
    pub fn sent_span(&self) -> Option<(Micros, Micros)> {
        let mut it = self.sent();
        let first = it.next()?.timestamp;
        let last = it.last().map_or(first, |e| e.timestamp);
        Some((first, last))
    }

    pub fn write_to<W: Write>(&self, mut sink: W) -> io::Result<()> {
        for e in &self.entries {
            writeln!(sink, "{}", e.to_line(&self.channel))?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(source: R) -> Result<Self, LogError> {
        let mut log = TrafficLog::new();
        let mut channel: Option<String> = None;
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (ch, entry) = parse_line(line).map_err(|reason| LogError::Malformed {
                line: i + 1,
                reason,
            })?;
            if log.entries.last().is_some_and(|l| l.timestamp > entry.timestamp) {
                return Err(LogError::Unordered { line: i + 1 });
            }
            channel.get_or_insert(ch);
            log.entries.push(entry);
        }
        if let Some(ch) = channel {
            log.channel = ch;
        }
        Ok(log)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut out = io::BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()
    }

    pub fn load(path: &Path) -> Result<Self, LogError> {
        Self::read_from(io::BufReader::new(fs::File::open(path)?))
    }
}

impl fmt::Display for TrafficLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{}", e.to_line(&self.channel))?;
        }
        Ok(())
    }
}

impl FromIterator<LogEntry> for TrafficLog {
    fn from_iter<I: IntoIterator<Item = LogEntry>>(iter: I) -> Self {
        TrafficLog::from_entries(iter.into_iter().collect())
    }
}

/// Parses one log line into its channel name and entry.
pub fn parse_line(line: &str) -> Result<(String, LogEntry), String> {
    let mut parts = line.split_whitespace();
    let (Some(ts), Some(chan), Some(frame), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err("expected `(<time>) <channel> <id>#<payload>`".into());
    };
    let timestamp = parse_timestamp(ts)?;
    let (channel, direction) = match chan.rsplit_once(':') {
        Some((c, "tx")) => (c, Direction::Sent),
        Some((c, "rx")) => (c, Direction::Received),
        Some((_, other)) => return Err(format!("unknown direction suffix {other:?}")),
        None => (chan, Direction::Sent),
    };
    Ok((
        channel.to_string(),
        LogEntry {
            timestamp,
            direction,
            frame: parse_frame(frame)?,
        },
    ))
}

fn parse_timestamp(ts: &str) -> Result<Micros, String> {
    let inner = ts
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| format!("timestamp {ts:?} not parenthesised"))?;
    let (secs, micros) = inner
        .split_once('.')
        .ok_or_else(|| format!("timestamp {inner:?} lacks a fraction"))?;
    if micros.len() != 6 || !micros.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("fraction {micros:?} must be 6 digits"));
    }
    let secs: u64 = secs
        .parse()
        .map_err(|_| format!("bad seconds {secs:?}"))?;
    let micros: u64 = micros.parse().expect("checked digits");
    secs.checked_mul(1_000_000)
        .and_then(|s| s.checked_add(micros))
        .ok_or_else(|| "timestamp overflow".to_string())
}

/// Parses `ID#PAYLOAD`; a 3-digit id is standard, 8 digits extended.
pub fn parse_frame(text: &str) -> Result<CanFrame, String> {
    let (id, payload) = text
        .split_once('#')
        .ok_or_else(|| format!("frame {text:?} lacks '#'"))?;
    let kind = match id.len() {
        3 => IdKind::Standard,
        8 => IdKind::Extended,
        n => return Err(format!("id {id:?} has {n} digits; expected 3 or 8")),
    };
    let id = u32::from_str_radix(id, 16).map_err(|_| format!("bad id {id:?}"))?;
    if payload.len() % 2 != 0 {
        return Err(format!("payload {payload:?} has odd length"));
    }
    let bytes = (0..payload.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&payload[i..i + 2], 16))
        .collect::<Result<Vec<u8>, _>>()
        .map_err(|_| format!("bad payload {payload:?}"))?;
    CanFrame::new(id, kind, &bytes).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_log_is_empty_file() {
        let mut buf = Vec::new();
        TrafficLog::new().write_to(&mut buf).unwrap();
        assert!(buf.is_empty());
        assert_eq!(TrafficLog::read_from(&b""[..]).unwrap(), TrafficLog::new());
    }

    #[test]
    fn parses_reference_line() {
        let log = TrafficLog::read_from(&b"(1.500000) vcan0 123#12AB0078\n"[..]).unwrap();
        let e = log.entries()[0];
        assert_eq!(e.timestamp, 1_500_000);
        assert_eq!(e.direction, Direction::Sent);
        assert_eq!(e.frame.id(), 0x123);
        assert_eq!(e.frame.kind(), IdKind::Standard);
        assert_eq!(e.frame.data(), &[0x12, 0xAB, 0x00, 0x78]);
    }

    #[test]
    fn writes_suffix_and_empty_payload() {
        let mut log = TrafficLog::new();
        log.push(LogEntry::received(
            20_000_001,
            CanFrame::extended(0x18FEF100, &[]).unwrap(),
        ));
        assert_eq!(log.to_string(), "(20.000001) vcan0:rx 18FEF100#\n");
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let text = b"(0.000000) vcan0:tx 123#00\n\n(0.1) vcan0 123#00\n";
        match TrafficLog::read_from(&text[..]) {
            Err(LogError::Malformed { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        for bad in [
            "(0.000000) vcan0 1234#00",
            "(0.000000) vcan0 123#0",
            "(0.000000) vcan0 800#",
            "(0.000000) vcan0:xx 123#",
            "0.000000 vcan0 123#",
            "(0.000000) vcan0 123#001122334455667788",
        ] {
            assert!(parse_line(bad).is_err(), "{bad}");
        }
        let unordered = b"(1.000000) vcan0 123#\n(0.500000) vcan0 123#\n";
        assert!(matches!(
            TrafficLog::read_from(&unordered[..]),
            Err(LogError::Unordered { line: 2 })
        ));
    }

    #[test]
    fn push_keeps_order() {
        let f = CanFrame::standard(1, &[]).unwrap();
        let mut log = TrafficLog::new();
        log.push(LogEntry::sent(10, f));
        log.push(LogEntry::sent(30, f));
        log.push(LogEntry::received(20, f));
        let ts: Vec<_> = log.entries().iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, [10, 20, 30]);
    }
}
