//! Line-oriented campaign report.
//!
//! ```text
//! strategy auto
//! seed 0
//! sent 4096
//! events 31
//! blacklist 0C0
//! cause 1 light 6 activated 9534100 9034100 replays=9 faults=0
//! frame (9.520000) vcan0:tx 351#FFFFFFFF
//! map 6 351 0 6 high
//! chain 10 6B0#FFFFFFFF 6B8#FFFFFFFF
//! flaky light 3 activated stretched replay at 50 ms spacing
//! ```

use std::fmt;
use std::str::FromStr;

use crate::can_core::log::{parse_frame, DEFAULT_CHANNEL};
use crate::can_core::{CanFrame, TrafficLog};
use crate::oracles::{EventMatcher, OracleEvent};
use crate::strategies::{Blacklist, CauseReport};
use crate::ChannelId;

/// A recovered output mapping: `channel` follows `bit` of `byte` in frames on `id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct MapEntry {
    pub channel: ChannelId,
    pub id: u32,
    pub extended: bool,
    pub byte: usize,
    pub bit: u8,
    /// The output lights when the bit is set (as opposed to cleared).
    pub active_high: bool,
}

impl fmt::Display for MapEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let polarity = if self.active_high { "high" } else { "low" };
        if self.extended {
            write!(f, "map {} {:08X} {} {} {polarity}", self.channel, self.id, self.byte, self.bit)
        } else {
            write!(f, "map {} {:03X} {} {} {polarity}", self.channel, self.id, self.byte, self.bit)
        }
    }
}

impl FromStr for MapEntry {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let bad = || format!("malformed map line: {line}");
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 || f[0] != "map" {
            return Err(bad());
        }
        Ok(MapEntry {
            channel: f[1].parse().map_err(|_| bad())?,
            id: u32::from_str_radix(f[2], 16).map_err(|_| bad())?,
            extended: f[2].len() > 3,
            byte: f[3].parse().map_err(|_| bad())?,
            bit: f[4].parse().map_err(|_| bad())?,
            active_high: match f[5] {
                "high" => true,
                "low" => false,
                _ => return Err(bad()),
            },
        })
    }
}

fn matcher_text(m: &EventMatcher) -> String {
    format!(
        "{} {} {}",
        m.oracle.as_deref().unwrap_or("*"),
        m.channel.map_or_else(|| "-".to_string(), |c| c.to_string()),
        m.transition
    )
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Report {
    lines: Vec<String>,
    causes: usize,
}

impl Report {
    pub fn new(strategy: &str, seed: u64) -> Self {
        Report {
            lines: vec![format!("strategy {strategy}"), format!("seed {seed}")],
            causes: 0,
        }
    }

    pub fn line(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }

    pub fn summary(&mut self, log: &TrafficLog, events: &[OracleEvent]) {
        self.line(format!("sent {}", log.sent().count()));
        self.line(format!("events {}", events.len()));
    }

    pub fn blacklist(&mut self, b: &Blacklist) {
        for l in b.to_string().lines() {
            self.line(format!("blacklist {l}"));
        }
    }

    pub fn cause(&mut self, c: &CauseReport) {
        self.causes += 1;
        let e = &c.event;
        self.line(format!(
            "cause {} {} {} {} {} {} replays={} faults={}",
            self.causes,
            e.oracle,
            e.channel.map_or_else(|| "-".to_string(), |c| c.to_string()),
            e.transition,
            e.timestamp,
            e.window_start,
            c.replays,
            c.fault_replays
        ));
        for f in &c.causal_frames {
            self.line(format!("frame {}", f.to_line(DEFAULT_CHANNEL)));
        }
    }

    pub fn map(&mut self, m: &MapEntry) {
        self.line(m.to_string());
    }

    pub fn chain(&mut self, channel: ChannelId, frames: &[CanFrame]) {
        let list: Vec<String> = frames.iter().map(|f| f.to_string()).collect();
        self.line(format!("chain {channel} {}", list.join(" ")));
    }

    pub fn flaky(&mut self, target: &EventMatcher, reason: &str) {
        self.line(format!("flaky {} {reason}", matcher_text(target)));
    }

    pub fn spontaneous(&mut self, channel: ChannelId) {
        self.line(format!("spontaneous {channel}"));
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }
}

/// Map entries of a report text.
pub fn parse_map(text: &str) -> Result<Vec<MapEntry>, String> {
    text.lines().filter(|l| l.starts_with("map ")).map(str::parse).collect()
}

/// Causal frames of every cause block in a report text.
pub fn parse_cause_frames(text: &str) -> Result<Vec<Vec<CanFrame>>, String> {
    let mut out: Vec<Vec<CanFrame>> = Vec::new();
    for l in text.lines() {
        if l.starts_with("cause ") {
            out.push(Vec::new());
        } else if let Some(rest) = l.strip_prefix("frame ") {
            let frame_field = rest.split_whitespace().last().ok_or_else(|| format!("bad frame line: {l}"))?;
            let frame = parse_frame(frame_field)?;
            out.last_mut().ok_or_else(|| format!("frame outside a cause: {l}"))?.push(frame);
        }
    }
    Ok(out)
}
