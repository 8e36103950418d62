//! Colour-sensor harness watching the target's physical outputs.
//!
//! Up to 64 RGB sensors sit behind 8-way I2C multiplexers (three address
//! bits, eight channels each). A sensor integrates light for 7 ms at 12-bit
//! or 110 ms at 16-bit precision and is double buffered: a read returns the
//! sample that finished one full window before the current one, so a step
//! change shows up between one and two integration times later. Selecting
//! a different multiplexer channel costs a small fixed delay.
//!
//! The harness owns channel bookkeeping and the polling schedule; the
//! [`SensorBackend`] owns the device. [`SimulatedBackend`] reads the output
//! history recorded by the simulated targets.

mod sim;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sim::{sample_instant, SimulatedBackend, DEFAULT_NOISE};

use crate::{ChannelId, Micros, RgbCounts};

pub const MAX_CHANNELS: usize = 64;
pub const DEFAULT_MUX_OVERHEAD: Micros = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    P12,
    P16,
}

impl Precision {
    pub fn integration_time(self) -> Micros {
        match self {
            Precision::P12 => 7_000,
            Precision::P16 => 110_000,
        }
    }

    pub fn max_count(self) -> u16 {
        match self {
            Precision::P12 => 4_095,
            Precision::P16 => u16::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sensitivity {
    Lux375,
    #[default]
    Lux10k,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorChannel {
    pub id: ChannelId,
    pub mux_address: u8,
    pub mux_channel: u8,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub sensitivity: Sensitivity,
    /// Output the sensor is taped to.
    pub indicator: ChannelId,
    /// Raw counts seen with the lamp lit; defaults depend on precision.
    #[serde(default)]
    pub on: Option<[u16; 3]>,
    #[serde(default)]
    pub off: Option<[u16; 3]>,
}

impl SensorChannel {
    pub fn new(id: ChannelId, mux_address: u8, mux_channel: u8, precision: Precision, indicator: ChannelId) -> Self {
        SensorChannel {
            id,
            mux_address,
            mux_channel,
            precision,
            sensitivity: Sensitivity::default(),
            indicator,
            on: None,
            off: None,
        }
    }

    pub fn integration_time(&self) -> Micros {
        self.precision.integration_time()
    }

    pub fn on_profile(&self) -> [u16; 3] {
        let scale = self.count_scale();
        self.on.unwrap_or([3_000 * scale, 1_200 * scale, 400 * scale])
    }

    pub fn off_profile(&self) -> [u16; 3] {
        let scale = self.count_scale();
        self.off.unwrap_or([300 * scale, 260 * scale, 240 * scale])
    }

    fn count_scale(&self) -> u16 {
        match self.precision {
            Precision::P12 => 1,
            Precision::P16 => 16,
        }
    }

    fn mux_slot(&self) -> (u8, u8) {
        (self.mux_address, self.mux_channel)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RgbReading {
    pub red: u16,
    pub green: u16,
    pub blue: u16,
    pub channel: ChannelId,
    pub timestamp: Micros,
    /// Returned before the sensor finished a post-configuration window.
    pub stale: bool,
}

impl RgbReading {
    pub fn rgb(&self) -> RgbCounts {
        RgbCounts::new(self.red.into(), self.green.into(), self.blue.into())
    }
}

/// What a backend returns for one read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawSample {
    pub rgb: [u16; 3],
    pub stale: bool,
}

/// Device access. Selecting the multiplexer channel is part of `read`.
pub trait SensorBackend {
    fn init(&mut self, channel: &SensorChannel, now: Micros);

    fn read(&mut self, channel: &SensorChannel, now: Micros) -> RawSample;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error("unknown sensor channel {0}")]
    UnknownChannel(ChannelId),
    #[error("sensor channel {0} read before init")]
    Uninitialized(ChannelId),
    #[error("invalid harness topology: {0}")]
    Topology(String),
}

fn default_overhead() -> Micros {
    DEFAULT_MUX_OVERHEAD
}

fn default_noise() -> f64 {
    DEFAULT_NOISE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    #[serde(default = "default_overhead")]
    pub mux_overhead_us: Micros,
    /// Noise amplitude as a fraction of each reference component.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default, rename = "channel")]
    pub channels: Vec<SensorChannel>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            mux_overhead_us: DEFAULT_MUX_OVERHEAD,
            noise: DEFAULT_NOISE,
            channels: Vec::new(),
        }
    }
}

impl HarnessConfig {
    /// One sensor per output, filling multiplexers in order.
    pub fn for_outputs(outputs: &[ChannelId], precision: Precision) -> Self {
        let channels = outputs
            .iter()
            .enumerate()
            .map(|(i, &out)| SensorChannel::new(out, (i / 8) as u8, (i % 8) as u8, precision, out))
            .collect();
        HarnessConfig {
            channels,
            ..HarnessConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Topology(m));
        if self.channels.len() > MAX_CHANNELS {
            return bad(format!("{} sensors exceed {MAX_CHANNELS}", self.channels.len()));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return bad("noise must be in [0, 1)".into());
        }
        let mut ids = BTreeSet::new();
        let mut slots = BTreeSet::new();
        for c in &self.channels {
            if c.mux_address > 7 || c.mux_channel > 7 {
                return bad(format!("sensor {}: mux address and channel are 0-7", c.id));
            }
            if !ids.insert(c.id) {
                return bad(format!("sensor id {} declared twice", c.id));
            }
            if !slots.insert(c.mux_slot()) {
                return bad(format!("mux slot {}/{} used twice", c.mux_address, c.mux_channel));
            }
            let max = c.precision.max_count();
            if c.on_profile().iter().chain(&c.off_profile()).any(|&v| v > max) {
                return bad(format!("sensor {}: profile exceeds {max} counts", c.id));
            }
            if c.on_profile() == c.off_profile() {
                return bad(format!("sensor {}: on and off profiles are identical", c.id));
            }
        }
        Ok(())
    }

    pub fn channel(&self, id: ChannelId) -> Option<&SensorChannel> {
        self.channels.iter().find(|c| c.id == id)
    }
}

/// Multiplexed sensor bank with a polling scheduler.
#[derive(Debug, Clone)]
pub struct Harness<B> {
    channels: BTreeMap<ChannelId, SensorChannel>,
    overhead: Micros,
    backend: B,
    initialized: BTreeSet<ChannelId>,
    selected: Option<(u8, u8)>,
    clock: Micros,
}

impl<B: SensorBackend> Harness<B> {
    pub fn new(config: &HarnessConfig, backend: B) -> Result<Self, HarnessError> {
        config.validate()?;
        Ok(Harness {
            channels: config.channels.iter().map(|c| (c.id, c.clone())).collect(),
            overhead: config.mux_overhead_us,
            backend,
            initialized: BTreeSet::new(),
            selected: None,
            clock: 0,
        })
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn channel(&self, id: ChannelId) -> Result<&SensorChannel, HarnessError> {
        self.channels.get(&id).ok_or(HarnessError::UnknownChannel(id))
    }

    pub fn channel_ids(&self) -> impl Iterator<Item = ChannelId> + '_ {
        self.channels.keys().copied()
    }

    /// Harness time after the most recent poll.
    pub fn now(&self) -> Micros {
        self.clock
    }

    /// Reset and configure a sensor; repeated calls leave it untouched.
    pub fn init_channel(&mut self, id: ChannelId, now: Micros) -> Result<(), HarnessError> {
        let ch = self.channels.get(&id).ok_or(HarnessError::UnknownChannel(id))?;
        if self.initialized.insert(id) {
            self.backend.init(ch, now);
        }
        Ok(())
    }

    pub fn init_all(&mut self, now: Micros) {
        let ids: Vec<_> = self.channels.keys().copied().collect();
        for id in ids {
            self.init_channel(id, now).expect("declared channel");
        }
    }

    /// Read one sensor no earlier than `now`, paying the multiplexer switch if needed.
    pub fn poll(&mut self, id: ChannelId, now: Micros) -> Result<RgbReading, HarnessError> {
        let ch = self.channels.get(&id).ok_or(HarnessError::UnknownChannel(id))?;
        if !self.initialized.contains(&id) {
            return Err(HarnessError::Uninitialized(id));
        }
        let mut t = now.max(self.clock);
        if self.selected != Some(ch.mux_slot()) {
            t += self.overhead;
            self.selected = Some(ch.mux_slot());
        }
        self.clock = t;
        let raw = self.backend.read(ch, t);
        Ok(RgbReading {
            red: raw.rgb[0],
            green: raw.rgb[1],
            blue: raw.rgb[2],
            channel: id,
            timestamp: t,
            stale: raw.stale,
        })
    }

    /// Round-robin over `schedule`, waiting one integration time after each read.
    /// Stops at the first read that would land after `until`.
    pub fn poll_all(
        &mut self,
        schedule: &[ChannelId],
        from: Micros,
        until: Micros,
    ) -> Result<Vec<RgbReading>, HarnessError> {
        let mut out = Vec::new();
        if schedule.is_empty() {
            return Ok(out);
        }
        for id in schedule {
            self.channel(*id)?;
        }
        let mut t = from;
        'outer: loop {
            for &id in schedule {
                let saved = (self.clock, self.selected);
                let r = self.poll(id, t)?;
                if r.timestamp > until {
                    (self.clock, self.selected) = saved;
                    break 'outer;
                }
                t = r.timestamp + self.channels[&id].integration_time();
                out.push(r);
            }
        }
        Ok(out)
    }
}
