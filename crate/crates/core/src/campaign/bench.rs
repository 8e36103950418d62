//! The simulated test rig: targets on a virtual bus, a sensor harness
//! looking at their outputs, and the oracles turning readings into events.
//!
//! Every session powers the targets up from scratch at time zero. The
//! cluster runs its lamp test first; the other targets, the background
//! traffic and the strategy start at [`Testbench::ready`].

use std::collections::{BTreeMap, BTreeSet};

use log::debug;
use thiserror::Error;

use super::config::{CampaignConfig, ConfigError, HeartbeatOracleConfig};
use crate::bus::{Bus, BusConfig, BusError, NodeHandle, Transmission, VirtualPort};
use crate::can_core::{CanFrame, LogEntry};
use crate::harness::{sample_instant, Harness, HarnessConfig, HarnessError, RgbReading, SimulatedBackend};
use crate::oracles::{
    calibrate, Classifier, EdgeDetector, EventMatcher, HeartbeatMonitor, HeartbeatSignal, HeartbeatSpec,
    IndicatorState, OracleError, OracleEvent, Threshold, Transition,
};
use crate::sim_ecu::{
    AuthEcu, AuthSender, ClusterNode, HeartbeatEcu, OutputBoard, PeriodicSender, Player, SimError, TargetSet,
};
use crate::strategies::{CyclicStream, ReplayPlan, Replayer, StrategyError};
use crate::{ChannelId, CountClassifier, Micros};

pub const LIGHT_ORACLE: &str = "light";
pub const LIVENESS_ORACLE: &str = "liveness";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

impl From<BenchError> for StrategyError {
    fn from(e: BenchError) -> Self {
        StrategyError::Replay(e.to_string())
    }
}

/// Oracle settings of a bench.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSettings {
    pub attribution: Micros,
    pub debounce: usize,
    pub threshold_level: Option<i64>,
    pub threshold_band: Option<i64>,
    pub heartbeats: Vec<HeartbeatOracleConfig>,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            attribution: crate::oracles::DEFAULT_ATTRIBUTION,
            debounce: 1,
            threshold_level: None,
            threshold_band: None,
            heartbeats: Vec::new(),
        }
    }
}

/// Which outputs an observation polls.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Watch {
    All,
    Outputs(BTreeSet<ChannelId>),
}

impl Watch {
    fn includes(&self, ch: ChannelId) -> bool {
        match self {
            Watch::All => true,
            Watch::Outputs(s) => s.contains(&ch),
        }
    }
}

/// A powered-up rig with a passive port for the strategy.
pub struct Session {
    pub bus: Bus<OutputBoard>,
    pub port: NodeHandle,
    pub ready: Micros,
}

impl Session {
    pub fn port(&mut self) -> VirtualPort<'_, OutputBoard> {
        VirtualPort::new(&mut self.bus, self.port)
    }
}

#[derive(Debug, Clone)]
pub struct Testbench {
    targets: TargetSet,
    harness: HarnessConfig,
    bus: BusConfig,
    seed: u64,
    oracles: OracleSettings,
    monitors: Vec<(String, HeartbeatSpec)>,
    liveness: Option<ChannelId>,
    classifiers: BTreeMap<ChannelId, CountClassifier>,
    ready: Micros,
    /// Traffic every session carries, e.g. what the target needs to stay alive.
    pub background: Vec<CyclicStream>,
}

impl Testbench {
    pub fn new(
        targets: TargetSet,
        harness: HarnessConfig,
        bus: BusConfig,
        seed: u64,
        oracles: OracleSettings,
    ) -> Result<Self, BenchError> {
        targets.validate()?;
        harness.validate()?;
        let mut monitors = Vec::new();
        for h in &oracles.heartbeats {
            let signal = match (h.channel, h.frame) {
                (Some(c), None) => HeartbeatSignal::Channel(c),
                (None, Some(id)) => HeartbeatSignal::Frame(id),
                _ => {
                    return Err(SimError::Layout(format!(
                        "heartbeat oracle {} needs exactly one of channel or frame",
                        h.name
                    ))
                    .into())
                }
            };
            if let HeartbeatSignal::Channel(c) = signal {
                if !harness.channels.iter().any(|s| s.indicator == c) {
                    return Err(HarnessError::Topology(format!("heartbeat oracle {} watches unsensed output {c}", h.name)).into());
                }
            }
            monitors.push((h.name.clone(), HeartbeatSpec::new(signal, h.period_ms * 1_000, h.tolerance)?));
        }
        let ready = targets.cluster.as_ref().map_or(0, |c| c.lamp_test_ms * 1_000);
        let liveness = targets.heartbeat.as_ref().map(|h| h.alive_channel);
        let mut bench = Testbench {
            targets,
            harness,
            bus,
            seed,
            oracles,
            monitors,
            liveness,
            classifiers: BTreeMap::new(),
            ready,
            background: Vec::new(),
        };
        bench.calibrate()?;
        Ok(bench)
    }

    pub fn from_config(cfg: &CampaignConfig) -> Result<Self, ConfigError> {
        let targets = cfg.targets()?;
        let harness = cfg.harness_config(&targets)?;
        let oracles = OracleSettings {
            attribution: cfg.identify.attribution_ms * 1_000,
            debounce: cfg.oracles.debounce,
            threshold_level: cfg.oracles.threshold_level,
            threshold_band: cfg.oracles.threshold_band,
            heartbeats: cfg.oracles.heartbeat.clone(),
        };
        Testbench::new(targets, harness, cfg.bus_config()?, cfg.seed, oracles).map_err(|e| match e {
            BenchError::Sim(e) => ConfigError::Target(e),
            BenchError::Harness(e) => ConfigError::Harness(e),
            BenchError::Oracle(e) => ConfigError::Oracle(e),
            BenchError::Bus(e) => ConfigError::Invalid(e.to_string()),
        })
    }

    pub fn targets(&self) -> &TargetSet {
        &self.targets
    }

    pub fn harness(&self) -> &HarnessConfig {
        &self.harness
    }

    /// When the strategy may start sending.
    pub fn ready(&self) -> Micros {
        self.ready
    }

    pub fn classifier(&self, sensor: ChannelId) -> Option<&CountClassifier> {
        self.classifiers.get(&sensor)
    }

    fn max_integration(&self) -> Micros {
        self.harness
            .channels
            .iter()
            .map(|c| c.integration_time())
            .max()
            .unwrap_or(0)
    }

    /// Settling time after the last frame of a replay: the attribution
    /// window plus a full polling round with sensor lag.
    pub fn tail(&self) -> Micros {
        let round = (self.max_integration() + self.harness.mux_overhead_us) * (self.harness.channels.len() as Micros + 2);
        self.oracles.attribution + round
    }

    pub fn attribution(&self) -> Micros {
        self.oracles.attribution
    }

    /// Lamp-test readings give on references, post-test readings off
    /// references. Outputs the lamp test does not reach fall back to a
    /// threshold derived from their dark reading.
    fn calibrate(&mut self) -> Result<(), BenchError> {
        let t_max = self.max_integration();
        let cal_end = self.ready + 3 * t_max;
        let mut bus = Bus::new(self.bus, OutputBoard::new())?;
        if let Some(c) = &self.targets.cluster {
            bus.attach(Box::new(ClusterNode::new(c.clone())))?;
        }
        bus.run_until(cal_end)?;
        let lamps: BTreeSet<ChannelId> = self
            .targets
            .cluster
            .iter()
            .flat_map(|c| c.indicators.iter().map(|i| i.channel))
            .collect();
        let board = bus.world();
        let mut harness = Harness::new(&self.harness, SimulatedBackend::new(board, self.seed, self.harness.noise))?;
        harness.init_all(0);
        let t_on = self.ready / 2;
        let mut on_refs = BTreeMap::new();
        for s in self.harness.channels.iter().filter(|s| lamps.contains(&s.indicator)) {
            let r = harness.poll(s.id, t_on)?;
            let during_test = sample_instant(0, s.integration_time(), r.timestamp).is_some_and(|at| at < self.ready);
            if !r.stale && during_test {
                on_refs.insert(s.id, r);
            }
        }
        for s in &self.harness.channels {
            let off = harness.poll(s.id, cal_end)?;
            let classifier = match on_refs.get(&s.id) {
                Some(on) => calibrate(s.indicator, on.rgb(), off.rgb())
                    .map(Classifier::Calibrated)
                    .or_else(|_| self.threshold_for(&off))?,
                None => self.threshold_for(&off)?,
            };
            debug!("sensor {}: {classifier:?}", s.id);
            self.classifiers.insert(s.id, classifier);
        }
        Ok(())
    }

    fn threshold_for(&self, dark: &RgbReading) -> Result<CountClassifier, OracleError> {
        let dark_max = dark.rgb().max_component();
        let level = self.oracles.threshold_level.unwrap_or(4 * dark_max).max(1);
        let band = self.oracles.threshold_band.unwrap_or(dark_max);
        Ok(Classifier::Threshold(Threshold::new(level, band)?))
    }

    /// Power up the targets, start background traffic and run to [`Testbench::ready`].
    pub fn session(&self, extra: &[CyclicStream]) -> Result<Session, BenchError> {
        let mut bus = Bus::new(self.bus, OutputBoard::new())?;
        if let Some(c) = &self.targets.cluster {
            bus.attach(Box::new(ClusterNode::new(c.clone())))?;
        }
        let port = bus.attach_port()?;
        bus.run_until(self.ready)?;
        if let Some(h) = &self.targets.heartbeat {
            bus.attach(Box::new(HeartbeatEcu::new(h.clone())))?;
        }
        if let Some(a) = &self.targets.auth {
            bus.attach(Box::new(AuthEcu::new(a.clone())))?;
            if let Some(s) = &self.targets.auth_sender {
                bus.attach(Box::new(AuthSender::new(a, s.period_ms, &s.payload)))?;
            }
        }
        for stream in self.background.iter().chain(extra) {
            attach_stream(&mut bus, stream, self.ready)?;
        }
        Ok(Session {
            bus,
            port,
            ready: self.ready,
        })
    }

    /// Outputs worth polling while chasing `target`.
    pub fn watch_for(&self, target: &EventMatcher) -> Watch {
        if target.channel.is_none() && target.transition != Transition::Fault {
            return Watch::All;
        }
        let mut set: BTreeSet<ChannelId> = target.channel.into_iter().collect();
        set.extend(self.liveness);
        set.extend(self.monitors.iter().filter_map(|(_, s)| match s.signal {
            HeartbeatSignal::Channel(c) => Some(c),
            HeartbeatSignal::Frame(_) => None,
        }));
        Watch::Outputs(set)
    }

    /// Poll the sensors over `[ready, until]` of a finished session and run the oracles.
    pub fn observe(
        &self,
        board: &OutputBoard,
        trace: &[Transmission],
        until: Micros,
        watch: &Watch,
    ) -> Result<Vec<OracleEvent>, BenchError> {
        let sensors: Vec<_> = self
            .harness
            .channels
            .iter()
            .filter(|s| watch.includes(s.indicator))
            .collect();
        let schedule: Vec<ChannelId> = sensors.iter().map(|s| s.id).collect();
        let mut harness = Harness::new(&self.harness, SimulatedBackend::new(board, self.seed, self.harness.noise))?;
        harness.init_all(0);
        let readings = harness.poll_all(&schedule, self.ready, until)?;

        let monitor_channels: BTreeSet<ChannelId> = self
            .monitors
            .iter()
            .filter_map(|(_, s)| match s.signal {
                HeartbeatSignal::Channel(c) => Some(c),
                HeartbeatSignal::Frame(_) => None,
            })
            .collect();
        let mut monitors: Vec<HeartbeatMonitor> = self
            .monitors
            .iter()
            .map(|(name, spec)| HeartbeatMonitor::new(name.clone(), *spec, self.ready))
            .collect();
        let mut detectors: BTreeMap<ChannelId, EdgeDetector> = BTreeMap::new();
        let mut states: BTreeMap<ChannelId, IndicatorState> = BTreeMap::new();
        for s in &sensors {
            let (oracle, initial) = if Some(s.indicator) == self.liveness {
                (LIVENESS_ORACLE, IndicatorState::On)
            } else {
                (LIGHT_ORACLE, IndicatorState::Off)
            };
            detectors.insert(
                s.id,
                EdgeDetector::new(oracle, s.indicator, self.oracles.attribution)
                    .with_debounce(self.oracles.debounce)
                    .with_state(initial),
            );
            states.insert(s.id, initial);
        }

        let mut events = Vec::new();
        for r in &readings {
            let sensor = self.harness.channel(r.channel).expect("polled sensors are declared");
            let valid = sample_instant(0, sensor.integration_time(), r.timestamp).is_some_and(|at| at >= self.ready);
            if r.stale || !valid {
                continue;
            }
            let prev = states[&r.channel];
            let state = self.classifiers[&r.channel].classify(r.rgb(), prev);
            states.insert(r.channel, state);
            let output = sensor.indicator;
            if monitor_channels.contains(&output) {
                for m in monitors.iter_mut() {
                    if m.spec().signal != HeartbeatSignal::Channel(output) {
                        continue;
                    }
                    if state == IndicatorState::On && prev == IndicatorState::Off {
                        events.extend(m.observe(r.timestamp));
                    } else {
                        events.extend(m.check(r.timestamp));
                    }
                }
                continue;
            }
            let Some(ev) = detectors.get_mut(&r.channel).expect("detector per sensor").feed(r.timestamp, state) else {
                continue;
            };
            if ev.oracle == LIVENESS_ORACLE {
                events.push(OracleEvent {
                    transition: match ev.transition {
                        Transition::Deactivated => Transition::Fault,
                        _ => Transition::Recovered,
                    },
                    ..ev
                });
            } else {
                events.push(ev);
            }
        }

        for m in monitors.iter_mut() {
            let HeartbeatSignal::Frame(id) = m.spec().signal else {
                continue;
            };
            let bound = m.spec().bound().floor() as Micros;
            let mut last = self.ready;
            let seen = trace
                .iter()
                .filter(|t| t.frame.id() == id && t.delivered >= self.ready && t.delivered <= until);
            for t in seen {
                if last + bound < t.delivered {
                    events.extend(m.check(last + bound + 1));
                }
                events.extend(m.observe(t.delivered));
                last = t.delivered;
            }
            if last + bound < until {
                events.extend(m.check(last + bound + 1));
            }
        }

        events.sort_by(|a, b| {
            (a.timestamp, &a.oracle, a.channel, a.transition.as_str()).cmp(&(
                b.timestamp,
                &b.oracle,
                b.channel,
                b.transition.as_str(),
            ))
        });
        Ok(events)
    }

    /// Observe everything a finished session produced up to `until`.
    pub fn observe_session(&self, session: &Session, until: Micros, watch: &Watch) -> Result<Vec<OracleEvent>, BenchError> {
        self.observe(session.bus.world(), session.bus.trace(), until, watch)
    }

    pub fn replayer(&self) -> BenchReplayer<'_> {
        BenchReplayer { bench: self }
    }
}

fn attach_stream(bus: &mut Bus<OutputBoard>, stream: &CyclicStream, origin: Micros) -> Result<(), BusError> {
    let Some(first) = stream.frames.first() else {
        return Ok(());
    };
    match stream.period {
        Some(p) => bus.attach(Box::new(PeriodicSender::cycling(stream.frames.clone(), p, stream.phase)))?,
        None => bus.attach(Box::new(Player::new(vec![(origin + stream.phase, *first)])))?,
    };
    Ok(())
}

/// Replays plans on fresh sessions of a [`Testbench`]. Plan time zero is
/// the bench's ready instant; reported events use the same time base.
pub struct BenchReplayer<'a> {
    bench: &'a Testbench,
}

impl BenchReplayer<'_> {
    /// Run `frames` (plan time base) and return the finished session and its end.
    pub fn run(&self, frames: &[LogEntry], background: &[CyclicStream]) -> Result<(Session, Micros), BenchError> {
        let mut s = self.bench.session(background)?;
        let script: Vec<(Micros, CanFrame)> = frames.iter().map(|e| (s.ready + e.timestamp, e.frame)).collect();
        let end = s.ready + frames.last().map_or(0, |e| e.timestamp) + self.bench.tail();
        s.bus.attach(Box::new(Player::new(script)))?;
        s.bus.run_until(end)?;
        Ok((s, end))
    }
}

impl Replayer for BenchReplayer<'_> {
    fn replay(&mut self, plan: &ReplayPlan, watch: &EventMatcher) -> Result<Vec<OracleEvent>, StrategyError> {
        let (session, end) = self.run(&plan.frames, &plan.background)?;
        let ready = session.ready;
        let events = self
            .bench
            .observe_session(&session, end, &self.bench.watch_for(watch))?;
        Ok(events
            .into_iter()
            .map(|e| OracleEvent {
                timestamp: e.timestamp - ready,
                window_start: e.window_start.saturating_sub(ready),
                ..e
            })
            .collect())
    }

    fn tail(&self) -> Micros {
        self.bench.tail()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::Transport;
    use crate::sim_ecu::{ClusterLayout, HeartbeatEcuConfig, RequiredId};

    fn cluster_bench() -> Testbench {
        let targets = TargetSet {
            cluster: Some(ClusterLayout::default_layout()),
            ..TargetSet::default()
        };
        let harness = HarnessConfig::for_outputs(&targets.output_channels(), crate::harness::Precision::P12);
        Testbench::new(targets, harness, BusConfig::default(), 1, OracleSettings::default()).unwrap()
    }

    #[test]
    fn cluster_lamps_are_calibrated() {
        let b = cluster_bench();
        assert_eq!(b.ready(), 1_000_000);
        assert!((0..12).all(|c| matches!(b.classifier(c), Some(Classifier::Calibrated(_)))));
    }

    #[test]
    fn frame_lights_lamp_once() {
        let b = cluster_bench();
        let mut s = b.session(&[]).unwrap();
        let t = s.ready + 40_000;
        s.port().send(CanFrame::standard(0x351, &[0x40]).unwrap(), t).unwrap();
        s.bus.run_until(t + 1_000_000).unwrap();
        let events = b.observe_session(&s, t + 1_000_000, &Watch::All).unwrap();
        let lines: Vec<_> = events.iter().map(|e| (e.channel, e.transition)).collect();
        assert_eq!(lines, [(Some(6), Transition::Activated), (Some(6), Transition::Deactivated)]);
        assert!(events[0].timestamp > t && events[0].timestamp < t + 200_000);
    }

    #[test]
    fn missing_heartbeat_is_a_liveness_fault() {
        let hb = HeartbeatEcuConfig::new(vec![RequiredId { id: 0x0C0, period_ms: 50 }], 30);
        let targets = TargetSet {
            heartbeat: Some(hb),
            ..TargetSet::default()
        };
        let harness = HarnessConfig::for_outputs(&targets.output_channels(), crate::harness::Precision::P12);
        let b = Testbench::new(targets, harness, BusConfig::default(), 1, OracleSettings::default()).unwrap();
        assert_eq!(b.ready(), 0);
        let s = {
            let mut s = b.session(&[]).unwrap();
            s.bus.run_until(1_000_000).unwrap();
            s
        };
        let events = b.observe_session(&s, 1_000_000, &Watch::All).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].oracle, LIVENESS_ORACLE);
        assert_eq!(events[0].transition, Transition::Fault);
        assert!(events[0].timestamp > 125_000 && events[0].timestamp < 125_000 + 3 * 7_100, "{}", events[0].timestamp);

        let fed = CyclicStream {
            frames: vec![CanFrame::standard(0x0C0, &[]).unwrap()],
            period: Some(50_000),
            phase: 10_000,
        };
        let mut s = b.session(&[fed]).unwrap();
        s.bus.run_until(1_000_000).unwrap();
        assert!(b.observe_session(&s, 1_000_000, &Watch::All).unwrap().is_empty());
    }
}
