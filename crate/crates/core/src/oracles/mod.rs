//! Bug oracles: calibrated and threshold indicator classification,
//! transition detection and heartbeat-absence (fault) detection.
//!
//! Oracles hold no hidden state; previous classifications and last-seen
//! times are passed in or owned by explicit monitor values, so replays
//! evaluate identically.

mod edges;
mod geometry;
mod heartbeat;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use edges::{edge_events, EdgeDetector, DEFAULT_ATTRIBUTION};
pub use geometry::{calibrate, CalibrationPair, Classifier, Rgb, Scalar, Threshold};
pub use heartbeat::{heartbeat_check, HeartbeatMonitor, HeartbeatSignal, HeartbeatSpec, DEFAULT_TOLERANCE};

use crate::{ChannelId, Micros};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("channel {0}: on and off references are identical")]
    DegenerateCalibration(ChannelId),
    #[error("threshold level must be positive")]
    BadThreshold,
    #[error("heartbeat period must be positive and tolerance factor above 1")]
    BadHeartbeat,
    #[error("malformed event line: {0}")]
    BadEventLine(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum IndicatorState {
    #[default]
    Off,
    On,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Transition {
    Activated,
    Deactivated,
    Fault,
    Recovered,
    OutputObserved,
}

impl Transition {
    pub fn as_str(self) -> &'static str {
        match self {
            Transition::Activated => "activated",
            Transition::Deactivated => "deactivated",
            Transition::Fault => "fault",
            Transition::Recovered => "recovered",
            Transition::OutputObserved => "output-observed",
        }
    }
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Transition {
    type Err = OracleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "activated" => Transition::Activated,
            "deactivated" => Transition::Deactivated,
            "fault" => Transition::Fault,
            "recovered" => Transition::Recovered,
            "output-observed" => Transition::OutputObserved,
            other => return Err(OracleError::BadEventLine(other.to_string())),
        })
    }
}

/// A detected state change with the time window of candidate causal frames.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OracleEvent {
    pub oracle: String,
    pub channel: Option<ChannelId>,
    pub transition: Transition,
    pub timestamp: Micros,
    pub window_start: Micros,
}

impl OracleEvent {
    /// `<t_us> <oracle> <channel|-> <transition>`, plus ` unattributed` when no frame
    /// was sent inside the attribution window.
    pub fn to_line(&self, attributed: bool) -> String {
        let channel = self
            .channel
            .map_or_else(|| "-".to_string(), |c| c.to_string());
        let mut line = format!(
            "{} {} {} {}",
            self.timestamp, self.oracle, channel, self.transition
        );
        if !attributed {
            line.push_str(" unattributed");
        }
        line
    }

    /// Inverse of [`OracleEvent::to_line`]. The attribution window is not stored, so
    /// `window_start` is set to the timestamp.
    pub fn parse_line(line: &str) -> Result<(OracleEvent, bool), OracleError> {
        let bad = || OracleError::BadEventLine(line.to_string());
        let fields: Vec<&str> = line.split_whitespace().collect();
        let attributed = match fields.get(4) {
            None => true,
            Some(&"unattributed") if fields.len() == 5 => false,
            _ => return Err(bad()),
        };
        if fields.len() < 4 {
            return Err(bad());
        }
        let timestamp: Micros = fields[0].parse().map_err(|_| bad())?;
        let channel = match fields[2] {
            "-" => None,
            c => Some(c.parse().map_err(|_| bad())?),
        };
        Ok((
            OracleEvent {
                oracle: fields[1].to_string(),
                channel,
                transition: fields[3].parse()?,
                timestamp,
                window_start: timestamp,
            },
            attributed,
        ))
    }

    /// Does this event match the given selector?
    pub fn matches(&self, sel: &EventMatcher) -> bool {
        sel.transition == self.transition
            && sel.channel.is_none_or(|c| self.channel == Some(c))
            && sel.oracle.as_ref().is_none_or(|o| *o == self.oracle)
    }
}

/// Selects the events a minimization run is chasing.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EventMatcher {
    pub oracle: Option<String>,
    pub channel: Option<ChannelId>,
    pub transition: Transition,
}

impl EventMatcher {
    pub fn activation(channel: ChannelId) -> Self {
        EventMatcher {
            oracle: None,
            channel: Some(channel),
            transition: Transition::Activated,
        }
    }

    pub fn fault() -> Self {
        EventMatcher {
            oracle: None,
            channel: None,
            transition: Transition::Fault,
        }
    }

    pub fn of(event: &OracleEvent) -> Self {
        EventMatcher {
            oracle: Some(event.oracle.clone()),
            channel: event.channel,
            transition: event.transition,
        }
    }
}
