//! Control unit that shuts down when periodic traffic it depends on stops.

use serde::{Deserialize, Serialize};

use super::board::OutputBoard;
use super::cluster::{validate_indicators, IndicatorBank, IndicatorSpec};
use super::SimError;
use crate::bus::{Node, NodeCtx};
use crate::can_core::{CanFrame, IdKind};
use crate::oracles::DEFAULT_TOLERANCE;
use crate::{ChannelId, Micros};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequiredId {
    pub id: u32,
    pub period_ms: u64,
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

fn default_hold_ms() -> u64 {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeartbeatEcuConfig {
    #[serde(rename = "required")]
    pub required: Vec<RequiredId>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Lamp lit while the unit is alive.
    pub alive_channel: ChannelId,
    /// Optional status frame the unit broadcasts while alive.
    #[serde(default)]
    pub status_id: Option<u32>,
    #[serde(default)]
    pub status_period_ms: Option<u64>,
    /// Outputs that only work while the unit is alive.
    #[serde(default, rename = "indicator")]
    pub indicators: Vec<IndicatorSpec>,
    #[serde(default = "default_hold_ms")]
    pub hold_ms: u64,
}

impl HeartbeatEcuConfig {
    pub fn new(required: Vec<RequiredId>, alive_channel: ChannelId) -> Self {
        HeartbeatEcuConfig {
            required,
            tolerance: DEFAULT_TOLERANCE,
            alive_channel,
            status_id: None,
            status_period_ms: None,
            indicators: Vec::new(),
            hold_ms: default_hold_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.required.is_empty() || self.required.iter().any(|r| r.period_ms == 0) {
            return Err(SimError::Layout("heartbeat ids need positive periods".into()));
        }
        if self.tolerance.partial_cmp(&1.0) != Some(std::cmp::Ordering::Greater) {
            return Err(SimError::Layout("tolerance must exceed 1".into()));
        }
        if self.status_id.is_some() != self.status_period_ms.is_some_and(|p| p > 0) {
            return Err(SimError::Layout("status_id needs a positive status_period_ms".into()));
        }
        validate_indicators(&self.indicators)?;
        if self.indicators.iter().any(|i| i.channel == self.alive_channel) {
            return Err(SimError::Layout(format!("channel {} used twice", self.alive_channel)));
        }
        Ok(())
    }

    /// Largest tolerated gap for each required id.
    pub fn bounds(&self) -> Vec<Micros> {
        self.required
            .iter()
            .map(|r| (r.period_ms as f64 * 1_000.0 * self.tolerance).floor() as Micros)
            .collect()
    }
}

/// Pure heartbeat state machine.
#[derive(Debug, Clone)]
pub struct HeartbeatState {
    config: HeartbeatEcuConfig,
    bounds: Vec<Micros>,
    last_seen: Vec<Micros>,
    faulted_at: Option<Micros>,
    bank: IndicatorBank,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeartbeatOutcome {
    /// Nothing visible changed.
    Quiet,
    /// Gated outputs may have changed; the returned times are hold expiries.
    Outputs(Vec<Micros>),
    /// The latch was just set.
    Faulted,
}

impl HeartbeatState {
    pub fn new(config: HeartbeatEcuConfig, start: Micros) -> Self {
        let bounds = config.bounds();
        let bank = IndicatorBank::new(config.indicators.clone(), config.hold_ms, 1_000);
        HeartbeatState {
            last_seen: vec![start; config.required.len()],
            bounds,
            faulted_at: None,
            bank,
            config,
        }
    }

    pub fn config(&self) -> &HeartbeatEcuConfig {
        &self.config
    }

    pub fn is_faulted(&self) -> bool {
        self.faulted_at.is_some()
    }

    pub fn faulted_at(&self) -> Option<Micros> {
        self.faulted_at
    }

    /// Bound check for every required id at `now`.
    pub fn tick(&mut self, now: Micros) -> HeartbeatOutcome {
        if self.is_faulted() {
            return HeartbeatOutcome::Quiet;
        }
        let late = self
            .last_seen
            .iter()
            .zip(&self.bounds)
            .any(|(&seen, &bound)| now - seen > bound);
        if late {
            self.faulted_at = Some(now);
            self.bank.clear();
            return HeartbeatOutcome::Faulted;
        }
        HeartbeatOutcome::Quiet
    }

    pub fn step(&mut self, frame: &CanFrame, now: Micros) -> HeartbeatOutcome {
        if let HeartbeatOutcome::Faulted = self.tick(now) {
            return HeartbeatOutcome::Faulted;
        }
        if self.is_faulted() {
            return HeartbeatOutcome::Quiet;
        }
        if frame.kind() == IdKind::Standard {
            for (i, r) in self.config.required.iter().enumerate() {
                if r.id == frame.id() {
                    self.last_seen[i] = now;
                }
            }
        }
        HeartbeatOutcome::Outputs(self.bank.step(frame, now))
    }

    /// When the next bound check is due for required id `idx`.
    pub fn deadline(&self, idx: usize) -> Micros {
        self.last_seen[idx] + self.bounds[idx] + 1
    }

    pub fn reset(&mut self, now: Micros) {
        self.faulted_at = None;
        self.last_seen.iter_mut().for_each(|t| *t = now);
    }

    fn lamp_states(&self) -> Vec<(ChannelId, bool)> {
        let alive = !self.is_faulted();
        std::iter::once((self.config.alive_channel, alive))
            .chain(
                self.bank
                    .specs()
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (s.channel, alive && self.bank.is_lit(i))),
            )
            .collect()
    }

    fn expire(&mut self, now: Micros) {
        self.bank.expire(now);
    }
}

const TOKEN_STATUS: u64 = u64::MAX;
const TOKEN_EXPIRE: u64 = u64::MAX - 1;

#[derive(Debug, Clone)]
pub struct HeartbeatEcu {
    config: HeartbeatEcuConfig,
    state: Option<HeartbeatState>,
}

impl HeartbeatEcu {
    pub fn new(config: HeartbeatEcuConfig) -> Self {
        HeartbeatEcu {
            config,
            state: None,
        }
    }

    fn publish(state: &HeartbeatState, ctx: &mut NodeCtx<'_, OutputBoard>) {
        let now = ctx.now();
        for (ch, on) in state.lamp_states() {
            ctx.world().set_indicator(ch, now, on);
        }
    }
}

impl Node<OutputBoard> for HeartbeatEcu {
    fn on_attach(&mut self, ctx: &mut NodeCtx<'_, OutputBoard>) {
        let now = ctx.now();
        let state = HeartbeatState::new(self.config.clone(), now);
        for i in 0..self.config.required.len() {
            ctx.schedule(state.deadline(i), i as u64);
        }
        if let Some(p) = self.config.status_period_ms {
            ctx.schedule(now + p * 1_000, TOKEN_STATUS);
        }
        Self::publish(&state, ctx);
        self.state = Some(state);
    }

    fn on_frame(&mut self, frame: &CanFrame, ctx: &mut NodeCtx<'_, OutputBoard>) {
        let Some(state) = self.state.as_mut() else {
            return;
        };
        let now = ctx.now();
        match state.step(frame, now) {
            HeartbeatOutcome::Quiet => return,
            HeartbeatOutcome::Faulted => {}
            HeartbeatOutcome::Outputs(wakeups) => {
                for t in wakeups {
                    ctx.schedule(t, TOKEN_EXPIRE);
                }
                for (i, r) in state.config.required.iter().enumerate() {
                    if r.id == frame.id() && frame.kind() == IdKind::Standard {
                        ctx.schedule(state.deadline(i), i as u64);
                    }
                }
            }
        }
        Self::publish(state, ctx);
    }

    fn on_timer(&mut self, token: u64, ctx: &mut NodeCtx<'_, OutputBoard>) {
        let Some(state) = self.state.as_mut() else {
            return;
        };
        let now = ctx.now();
        match token {
            TOKEN_STATUS => {
                if !state.is_faulted() {
                    if let (Some(id), Some(p)) = (self.config.status_id, self.config.status_period_ms) {
                        ctx.send(CanFrame::standard(id, &[0x01]).expect("validated id"));
                        ctx.schedule(now + p * 1_000, TOKEN_STATUS);
                    }
                }
                return;
            }
            TOKEN_EXPIRE => state.expire(now),
            _ => {
                state.tick(now);
            }
        }
        Self::publish(state, ctx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> HeartbeatEcuConfig {
        HeartbeatEcuConfig::new(
            vec![RequiredId {
                id: 0x0C0,
                period_ms: 50,
            }],
            30,
        )
    }

    fn hb() -> CanFrame {
        CanFrame::standard(0x0C0, &[0]).unwrap()
    }

    #[test]
    fn steady_heartbeat_stays_alive() {
        let mut s = HeartbeatState::new(cfg(), 0);
        for k in 1..1_000 {
            s.step(&hb(), k * 50_000);
            s.tick(k * 50_000 + 49_999);
        }
        assert!(!s.is_faulted());
    }

    #[test]
    fn long_gap_faults_and_latches() {
        let mut s = HeartbeatState::new(cfg(), 0);
        s.step(&hb(), 50_000);
        assert_eq!(s.tick(175_000), HeartbeatOutcome::Quiet);
        assert_eq!(s.step(&hb(), 250_000), HeartbeatOutcome::Faulted);
        assert_eq!(s.faulted_at(), Some(250_000));
        s.step(&hb(), 260_000);
        assert!(s.is_faulted());
        s.reset(300_000);
        assert!(!s.is_faulted());
    }

    #[test]
    fn bound_is_period_times_tolerance() {
        assert_eq!(cfg().bounds(), [125_000]);
    }

    #[test]
    fn validation() {
        let mut c = cfg();
        assert!(c.validate().is_ok());
        c.tolerance = 1.0;
        assert!(c.validate().is_err());
        c.tolerance = 2.5;
        c.status_id = Some(0x7E8);
        assert!(c.validate().is_err());
        c.status_period_ms = Some(100);
        assert!(c.validate().is_ok());
    }
}
