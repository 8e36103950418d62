use super::{OracleError, OracleEvent, Transition};
use crate::{ChannelId, Micros};

pub const DEFAULT_TOLERANCE: f64 = 2.5;

/// What counts as a heartbeat observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeartbeatSignal {
    /// A sensor channel classified as on.
    Channel(ChannelId),
    /// A frame with this arbitration id seen on the bus.
    Frame(u32),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeartbeatSpec {
    pub signal: HeartbeatSignal,
    pub period: Micros,
    pub tolerance_factor: f64,
}

impl HeartbeatSpec {
    pub fn new(signal: HeartbeatSignal, period: Micros, tolerance_factor: f64) -> Result<Self, OracleError> {
        if period == 0 || tolerance_factor.is_nan() || tolerance_factor <= 1.0 {
            return Err(OracleError::BadHeartbeat);
        }
        Ok(HeartbeatSpec {
            signal,
            period,
            tolerance_factor,
        })
    }

    pub fn with_period_ms(signal: HeartbeatSignal, period_ms: u64) -> Result<Self, OracleError> {
        Self::new(signal, period_ms * 1_000, DEFAULT_TOLERANCE)
    }

    /// Largest tolerated gap.
    pub fn bound(&self) -> f64 {
        self.period as f64 * self.tolerance_factor
    }
}

/// True when the signal has been absent for longer than `period * tolerance_factor`.
pub fn heartbeat_check(spec: &HeartbeatSpec, last_seen: Micros, now: Micros) -> bool {
    now.saturating_sub(last_seen) as f64 > spec.bound()
}

/// Tracks one heartbeat and reports fault / recovery transitions.
#[derive(Debug, Clone)]
pub struct HeartbeatMonitor {
    pub name: String,
    spec: HeartbeatSpec,
    last_seen: Micros,
    faulted: bool,
}

impl HeartbeatMonitor {
    /// `start` acts as the first observation.
    pub fn new(name: impl Into<String>, spec: HeartbeatSpec, start: Micros) -> Self {
        HeartbeatMonitor {
            name: name.into(),
            spec,
            last_seen: start,
            faulted: false,
        }
    }

    pub fn spec(&self) -> &HeartbeatSpec {
        &self.spec
    }

    pub fn is_faulted(&self) -> bool {
        self.faulted
    }

    fn channel(&self) -> Option<ChannelId> {
        match self.spec.signal {
            HeartbeatSignal::Channel(c) => Some(c),
            HeartbeatSignal::Frame(_) => None,
        }
    }

    /// Evaluate at `now`; emits a fault event on the alive → faulted edge.
    pub fn check(&mut self, now: Micros) -> Option<OracleEvent> {
        if !self.faulted && heartbeat_check(&self.spec, self.last_seen, now) {
            self.faulted = true;
            return Some(OracleEvent {
                oracle: self.name.clone(),
                channel: self.channel(),
                transition: Transition::Fault,
                timestamp: now,
                window_start: self.last_seen,
            });
        }
        None
    }

    /// Record an observation at `t`. A gap that was never checked still
    /// yields its fault event before the recovery.
    pub fn observe(&mut self, t: Micros) -> Vec<OracleEvent> {
        let mut out: Vec<OracleEvent> = self.check(t).into_iter().collect();
        self.last_seen = self.last_seen.max(t);
        if self.faulted {
            self.faulted = false;
            out.push(OracleEvent {
                oracle: self.name.clone(),
                channel: self.channel(),
                transition: Transition::Recovered,
                timestamp: t,
                window_start: t,
            });
        }
        out
    }
}
