//! Simulated instrument cluster.
//!
//! Each indicator listens to one bit of one standard-id frame. A frame with
//! the bit in its active level lights the lamp for the hold time; a frame
//! with the bit inactive turns it off immediately, so fast successive
//! frames can overwrite each other. Default-on indicators use active-low
//! status bits: they light for frames whose bit is clear (e.g. an all-zero
//! payload). Two-stage indicators only light when their arm frame was seen
//! within the arm window before the fire frame. At power-up every lamp is
//! lit for the lamp-test period.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::board::OutputBoard;
use super::SimError;
use crate::bus::{Node, NodeCtx};
use crate::can_core::{CanFrame, IdKind, STANDARD_ID_MAX};
use crate::{ChannelId, Micros};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitRef {
    pub id: u32,
    pub byte: usize,
    pub bit: u8,
}

impl BitRef {
    /// Bit value carried by `frame`, if it is a standard frame on this id with a long enough payload.
    pub fn read(&self, frame: &CanFrame) -> Option<bool> {
        if frame.kind() != IdKind::Standard || frame.id() != self.id {
            return None;
        }
        frame.bit(self.byte, self.bit)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorSpec {
    #[serde(default)]
    pub name: String,
    pub channel: ChannelId,
    pub id: u32,
    pub byte: usize,
    pub bit: u8,
    #[serde(default)]
    pub default_on: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<BitRef>,
}

impl IndicatorSpec {
    pub fn trigger(&self) -> BitRef {
        BitRef {
            id: self.id,
            byte: self.byte,
            bit: self.bit,
        }
    }

    pub fn is_two_stage(&self) -> bool {
        self.arm.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedleSpec {
    #[serde(default)]
    pub name: String,
    pub channel: ChannelId,
    pub id: u32,
    pub byte: usize,
}

fn default_hold_ms() -> u64 {
    200
}

fn default_lamp_test_ms() -> u64 {
    1_000
}

fn default_arm_window_ms() -> u64 {
    1_000
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLayout {
    #[serde(default = "default_hold_ms")]
    pub hold_ms: u64,
    #[serde(default = "default_lamp_test_ms")]
    pub lamp_test_ms: u64,
    #[serde(default = "default_arm_window_ms")]
    pub arm_window_ms: u64,
    #[serde(default, rename = "indicator")]
    pub indicators: Vec<IndicatorSpec>,
    #[serde(default, rename = "needle")]
    pub needles: Vec<NeedleSpec>,
}

/// The layout shipped in `fixtures/default_cluster.toml`.
pub const DEFAULT_CLUSTER_TOML: &str = include_str!("../../fixtures/default_cluster.toml");

impl ClusterLayout {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let layout: ClusterLayout = toml::from_str(text).map_err(|e| SimError::Layout(e.to_string()))?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn default_layout() -> Self {
        Self::from_toml(DEFAULT_CLUSTER_TOML).expect("bundled layout is valid")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        validate_indicators(&self.indicators)?;
        let mut seen: BTreeSet<ChannelId> = self.indicators.iter().map(|i| i.channel).collect();
        for n in &self.needles {
            if !seen.insert(n.channel) {
                return Err(SimError::Layout(format!("channel {} used twice", n.channel)));
            }
            check_bit(n.id, n.byte, 0)?;
        }
        if self.hold_ms == 0 {
            return Err(SimError::Layout("hold_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn indicator(&self, channel: ChannelId) -> Option<&IndicatorSpec> {
        self.indicators.iter().find(|i| i.channel == channel)
    }
}

fn check_bit(id: u32, byte: usize, bit: u8) -> Result<(), SimError> {
    if id > STANDARD_ID_MAX {
        return Err(SimError::Layout(format!("id {id:#x} is not a standard id")));
    }
    if byte >= 8 || bit >= 8 {
        return Err(SimError::Layout(format!("bit {byte}.{bit} of {id:#x} out of range")));
    }
    Ok(())
}

pub(crate) fn validate_indicators(indicators: &[IndicatorSpec]) -> Result<(), SimError> {
    let mut channels = BTreeSet::new();
    for ind in indicators {
        if !channels.insert(ind.channel) {
            return Err(SimError::Layout(format!("channel {} used twice", ind.channel)));
        }
        check_bit(ind.id, ind.byte, ind.bit)?;
        if let Some(a) = &ind.arm {
            check_bit(a.id, a.byte, a.bit)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputDelta {
    Indicator { channel: ChannelId, on: bool },
    Needle { channel: ChannelId, value: u8 },
}

impl OutputDelta {
    pub fn apply(&self, board: &mut OutputBoard, at: Micros) {
        match *self {
            OutputDelta::Indicator { channel, on } => board.set_indicator(channel, at, on),
            OutputDelta::Needle { channel, value } => board.set_needle(channel, at, value),
        }
    }
}

/// Lamp logic shared by the cluster and gated ECU functions.
#[derive(Debug, Clone)]
pub struct IndicatorBank {
    specs: Vec<IndicatorSpec>,
    hold: Micros,
    arm_window: Micros,
    lit: Vec<bool>,
    expires: Vec<Micros>,
    armed_at: Vec<Option<Micros>>,
}

impl IndicatorBank {
    pub fn new(specs: Vec<IndicatorSpec>, hold_ms: u64, arm_window_ms: u64) -> Self {
        let n = specs.len();
        IndicatorBank {
            specs,
            hold: hold_ms * 1_000,
            arm_window: arm_window_ms * 1_000,
            lit: vec![false; n],
            expires: vec![0; n],
            armed_at: vec![None; n],
        }
    }

    pub fn specs(&self) -> &[IndicatorSpec] {
        &self.specs
    }

    pub fn is_lit(&self, idx: usize) -> bool {
        self.lit[idx]
    }

    /// Feed one frame; returns the expiry times of lamps lit or refreshed by it.
    pub fn step(&mut self, frame: &CanFrame, now: Micros) -> Vec<Micros> {
        let mut wakeups = Vec::new();
        for (i, spec) in self.specs.iter().enumerate() {
            if let Some(arm) = &spec.arm {
                if arm.read(frame) == Some(true) {
                    self.armed_at[i] = Some(now);
                }
            }
            let Some(bit) = spec.trigger().read(frame) else {
                continue;
            };
            let mut active = bit != spec.default_on;
            if spec.arm.is_some() {
                active &= self.armed_at[i].is_some_and(|t| now - t <= self.arm_window);
            }
            if active {
                self.expires[i] = now + self.hold;
                self.lit[i] = true;
                wakeups.push(self.expires[i]);
            } else {
                self.lit[i] = false;
            }
        }
        wakeups
    }

    /// Turn off lamps whose hold time has run out; returns their indices.
    pub fn expire(&mut self, now: Micros) -> Vec<usize> {
        let mut out = Vec::new();
        for i in 0..self.specs.len() {
            if self.lit[i] && self.expires[i] <= now {
                self.lit[i] = false;
                out.push(i);
            }
        }
        out
    }

    /// Turn everything off.
    pub fn clear(&mut self) -> Vec<usize> {
        let out = (0..self.lit.len()).filter(|&i| self.lit[i]).collect();
        self.lit.iter_mut().for_each(|l| *l = false);
        out
    }
}

/// Pure cluster state machine; [`ClusterNode`] attaches it to a bus.
#[derive(Debug, Clone)]
pub struct ClusterState {
    layout: ClusterLayout,
    bank: IndicatorBank,
    lamp_test_until: Micros,
}

impl ClusterState {
    pub fn new(layout: ClusterLayout, power_on: Micros) -> Self {
        let bank = IndicatorBank::new(layout.indicators.clone(), layout.hold_ms, layout.arm_window_ms);
        ClusterState {
            lamp_test_until: power_on + layout.lamp_test_ms * 1_000,
            layout,
            bank,
        }
    }

    pub fn layout(&self) -> &ClusterLayout {
        &self.layout
    }

    pub fn lamp_test_until(&self) -> Micros {
        self.lamp_test_until
    }

    fn displayed(&self, idx: usize, now: Micros) -> bool {
        now < self.lamp_test_until || self.bank.is_lit(idx)
    }

    /// Displayed state of every indicator, in layout order.
    pub fn snapshot(&self, now: Micros) -> Vec<OutputDelta> {
        self.layout
            .indicators
            .iter()
            .enumerate()
            .map(|(i, s)| OutputDelta::Indicator {
                channel: s.channel,
                on: self.displayed(i, now),
            })
            .collect()
    }

    /// Process one received frame. Returns visible output changes and the
    /// expiry times the caller should wake up for.
    pub fn step(&mut self, frame: &CanFrame, now: Micros) -> (Vec<OutputDelta>, Vec<Micros>) {
        let before: Vec<bool> = (0..self.layout.indicators.len())
            .map(|i| self.displayed(i, now))
            .collect();
        let wakeups = self.bank.step(frame, now);
        let mut deltas = self.diff(&before, now);
        for n in &self.layout.needles {
            if frame.kind() == IdKind::Standard && frame.id() == n.id {
                if let Some(&value) = frame.data().get(n.byte) {
                    deltas.push(OutputDelta::Needle {
                        channel: n.channel,
                        value,
                    });
                }
            }
        }
        (deltas, wakeups)
    }

    /// Apply hold-time expiry and the end of the lamp test at `now`.
    pub fn expire(&mut self, now: Micros) -> Vec<OutputDelta> {
        let before: Vec<bool> = (0..self.layout.indicators.len())
            .map(|i| self.displayed(i, now.saturating_sub(1)))
            .collect();
        self.bank.expire(now);
        self.diff(&before, now)
    }

    fn diff(&self, before: &[bool], now: Micros) -> Vec<OutputDelta> {
        self.layout
            .indicators
            .iter()
            .enumerate()
            .filter(|(i, _)| before[*i] != self.displayed(*i, now))
            .map(|(i, s)| OutputDelta::Indicator {
                channel: s.channel,
                on: self.displayed(i, now),
            })
            .collect()
    }
}

const LAMP_TEST_END: u64 = u64::MAX;

/// Bus node wrapping [`ClusterState`].
#[derive(Debug, Clone)]
pub struct ClusterNode {
    layout: ClusterLayout,
    state: Option<ClusterState>,
}

impl ClusterNode {
    pub fn new(layout: ClusterLayout) -> Self {
        ClusterNode {
            layout,
            state: None,
        }
    }
}

impl Node<OutputBoard> for ClusterNode {
    fn on_attach(&mut self, ctx: &mut NodeCtx<'_, OutputBoard>) {
        let now = ctx.now();
        let state = ClusterState::new(self.layout.clone(), now);
        for d in state.snapshot(now) {
            d.apply(ctx.world(), now);
        }
        if state.lamp_test_until() > now {
            ctx.schedule(state.lamp_test_until(), LAMP_TEST_END);
        }
        self.state = Some(state);
    }

    fn on_frame(&mut self, frame: &CanFrame, ctx: &mut NodeCtx<'_, OutputBoard>) {
        let Some(state) = self.state.as_mut() else {
            return;
        };
        let now = ctx.now();
        let (deltas, wakeups) = state.step(frame, now);
        for d in deltas {
            d.apply(ctx.world(), now);
        }
        for t in wakeups {
            ctx.schedule(t, 0);
        }
    }

    fn on_timer(&mut self, _token: u64, ctx: &mut NodeCtx<'_, OutputBoard>) {
        let Some(state) = self.state.as_mut() else {
            return;
        };
        let now = ctx.now();
        for d in state.expire(now) {
            d.apply(ctx.world(), now);
        }
    }
}
