//! Deterministic simulated targets: an instrument cluster, a unit that
//! depends on periodic heartbeat traffic, and a receiver of authenticated
//! frames with two optional flaws.
//!
//! Targets are bus nodes over a shared [`OutputBoard`] that records every
//! physical output. Their behavior depends only on received frames and
//! virtual time.

mod auth;
mod board;
mod cluster;
mod heartbeat;
mod player;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use auth::{auth_tag, AuthBugs, AuthEcu, AuthEcuConfig, AuthSender, AuthState, DEFAULT_WINDOW, TAG_LEN};
pub use board::OutputBoard;
pub use cluster::{
    BitRef, ClusterLayout, ClusterNode, ClusterState, IndicatorBank, IndicatorSpec, NeedleSpec, OutputDelta,
    DEFAULT_CLUSTER_TOML,
};
pub use heartbeat::{HeartbeatEcu, HeartbeatEcuConfig, HeartbeatOutcome, HeartbeatState, RequiredId};
pub use player::{PeriodicSender, Player};

use crate::bus::{Bus, BusError};
use crate::ChannelId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid target layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Bus(#[from] BusError),
}

/// Legitimate traffic for the authenticated receiver.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthSenderConfig {
    pub period_ms: u64,
    #[serde(default)]
    pub payload: Vec<u8>,
}

/// Every simulated target of a campaign.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetSet {
    #[serde(default)]
    pub cluster: Option<ClusterLayout>,
    #[serde(default)]
    pub heartbeat: Option<HeartbeatEcuConfig>,
    #[serde(default)]
    pub auth: Option<AuthEcuConfig>,
    #[serde(default)]
    pub auth_sender: Option<AuthSenderConfig>,
}

/// Where a lamp is driven from, for comparing against recovered maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroundTruth {
    pub channel: ChannelId,
    pub trigger: BitRef,
    pub default_on: bool,
    pub arm: Option<BitRef>,
}

impl TargetSet {
    pub fn validate(&self) -> Result<(), SimError> {
        if let Some(c) = &self.cluster {
            c.validate()?;
        }
        if let Some(h) = &self.heartbeat {
            h.validate()?;
        }
        if let Some(a) = &self.auth {
            a.validate()?;
        }
        if self.auth_sender.is_some() && self.auth.is_none() {
            return Err(SimError::Layout("auth_sender without an auth target".into()));
        }
        if let Some(s) = &self.auth_sender {
            if s.period_ms == 0 || s.payload.len() > 8 {
                return Err(SimError::Layout("auth sender needs a period and at most 8 bytes".into()));
            }
        }
        let mut channels: Vec<ChannelId> = self.output_channels();
        let n = channels.len();
        channels.sort_unstable();
        channels.dedup();
        if channels.len() != n {
            return Err(SimError::Layout("output channels overlap between targets".into()));
        }
        Ok(())
    }

    /// Every lamp channel the targets drive.
    pub fn output_channels(&self) -> Vec<ChannelId> {
        let mut out = Vec::new();
        if let Some(c) = &self.cluster {
            out.extend(c.indicators.iter().map(|i| i.channel));
        }
        if let Some(h) = &self.heartbeat {
            out.push(h.alive_channel);
            out.extend(h.indicators.iter().map(|i| i.channel));
        }
        if let Some(a) = &self.auth {
            out.push(a.display_channel);
        }
        out
    }

    /// Seeded mapping of every frame-driven lamp.
    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        let specs = self
            .cluster
            .iter()
            .flat_map(|c| c.indicators.iter())
            .chain(self.heartbeat.iter().flat_map(|h| h.indicators.iter()));
        let mut out: Vec<GroundTruth> = specs
            .map(|s| GroundTruth {
                channel: s.channel,
                trigger: s.trigger(),
                default_on: s.default_on,
                arm: s.arm,
            })
            .collect();
        out.sort_by_key(|g| g.channel);
        out
    }

    /// Attach every target (and the legitimate auth sender) to `bus`.
    pub fn attach(&self, bus: &mut Bus<OutputBoard>) -> Result<(), SimError> {
        if let Some(c) = &self.cluster {
            bus.attach(Box::new(ClusterNode::new(c.clone())))?;
        }
        if let Some(h) = &self.heartbeat {
            bus.attach(Box::new(HeartbeatEcu::new(h.clone())))?;
        }
        if let Some(a) = &self.auth {
            bus.attach(Box::new(AuthEcu::new(a.clone())))?;
            if let Some(s) = &self.auth_sender {
                bus.attach(Box::new(AuthSender::new(a, s.period_ms, &s.payload)))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::BusConfig;
    use crate::can_core::CanFrame;

    fn bus() -> Bus<OutputBoard> {
        Bus::new(BusConfig::default(), OutputBoard::new()).unwrap()
    }

    #[test]
    fn cluster_on_bus_lights_and_expires() {
        let targets = TargetSet {
            cluster: Some(ClusterLayout::default_layout()),
            ..TargetSet::default()
        };
        let mut bus = bus();
        targets.attach(&mut bus).unwrap();
        let port = bus.attach_port().unwrap();
        bus.send(port, CanFrame::standard(0x351, &[0xFF; 4]).unwrap(), 2_000_000)
            .unwrap();
        bus.run_until(3_000_000).unwrap();
        let board = bus.world();
        assert!(board.indicator_at(6, 999_999), "lamp test");
        assert!(!board.indicator_at(6, 1_000_000));
        let on = board.activations(6, 1_000_000);
        assert_eq!(on, [2_000_216]);
        assert!(board.indicator_at(6, 2_200_215));
        assert!(!board.indicator_at(6, 2_200_216));
    }

    #[test]
    fn replay_determinism() {
        let targets = TargetSet {
            cluster: Some(ClusterLayout::default_layout()),
            ..TargetSet::default()
        };
        let run = || {
            let mut bus = bus();
            targets.attach(&mut bus).unwrap();
            let port = bus.attach_port().unwrap();
            for k in 0..200u32 {
                let f = CanFrame::standard(0x100 + k * 7 % 0x700, &[(k * 37) as u8; 8]).unwrap();
                bus.send(port, f, 1_000_000 + u64::from(k) * 3_000).unwrap();
            }
            bus.run_until(3_000_000).unwrap();
            bus.into_world()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn heartbeat_on_bus() {
        let mut cfg = HeartbeatEcuConfig::new(vec![RequiredId { id: 0x0C0, period_ms: 50 }], 30);
        cfg.status_id = Some(0x7E8);
        cfg.status_period_ms = Some(100);
        let targets = TargetSet {
            heartbeat: Some(cfg),
            ..TargetSet::default()
        };
        let mut bus = bus();
        targets.attach(&mut bus).unwrap();
        let hb = CanFrame::standard(0x0C0, &[0]).unwrap();
        bus.attach(Box::new(PeriodicSender::new(hb, 50_000, 10_000).until(500_000)))
            .unwrap();
        bus.run_until(2_000_000).unwrap();
        // Last heartbeat delivered at 460_000 + 216; fault one bound later.
        let hist = bus.world().indicator_history(30);
        assert_eq!(hist, &[(0, true), (460_216 + 125_001, false)]);
        let status: Vec<_> = bus.trace().iter().filter(|t| t.frame.id() == 0x7E8).collect();
        assert_eq!(status.len(), 5);
    }

    #[test]
    fn auth_sender_pulses_display() {
        let a = AuthEcuConfig::new(b"k", 0x123, 0x124, 40);
        let targets = TargetSet {
            auth: Some(a),
            auth_sender: Some(AuthSenderConfig {
                period_ms: 250,
                payload: vec![1, 2],
            }),
            ..TargetSet::default()
        };
        targets.validate().unwrap();
        let mut bus = bus();
        targets.attach(&mut bus).unwrap();
        bus.run_until(1_100_000).unwrap();
        assert_eq!(bus.world().activations(40, 0).len(), 4);
    }

    #[test]
    fn ground_truth_export() {
        let t = TargetSet {
            cluster: Some(ClusterLayout::default_layout()),
            ..TargetSet::default()
        };
        let g = t.ground_truth();
        assert_eq!(g.len(), 12);
        assert_eq!(g[6].trigger, BitRef { id: 0x351, byte: 0, bit: 6 });
    }
}
