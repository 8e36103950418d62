//! Fuzzing strategies: random, brute-force, mutation, replay, identify and
//! omission, plus the blacklist shared by the last two.
//!
//! Generating strategies write one frame per delay tick through a
//! [`Transport`] and return everything sent and received as a
//! [`TrafficLog`]. Identify and omission work on recorded logs through a
//! [`Replayer`], which replays a plan against a freshly powered target and
//! reports the oracle events it saw.

mod blacklist;
mod ddmin;
mod identify;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use blacklist::Blacklist;
pub use ddmin::ddmin;
pub use identify::{
    background_streams, locate_bits, run_identify, run_omission, CauseReport, CyclicStream, IdentifyOptions,
    OmissionReport, ReplayPlan, Replayer,
};

use crate::bus::{Transport, TransportError};
use crate::can_core::{CanFrame, Direction, IdKind, LogEntry, Pattern, PatternError, TrafficLog, MAX_PAYLOAD};
use crate::Micros;

pub const DEFAULT_DELAY_MS: u64 = 10;
/// Typical working range of the inter-message delay; values outside only warn.
pub const TYPICAL_DELAY_MS: std::ops::RangeInclusive<u64> = 3..=20;
pub const DELAY_LIMITS_MS: std::ops::RangeInclusive<u64> = 1..=1_000;

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("delay of {0} ms is outside 1-1000 ms")]
    BadDelay(u64),
    #[error("this strategy needs a pattern")]
    MissingPattern,
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("log has no sent frames")]
    EmptyLog,
    #[error("event not reproduced by replay ({reason})")]
    FlakyEvent {
        reason: String,
        original: TrafficLog,
        replayed: TrafficLog,
    },
    #[error("full replay already faults the target")]
    FaultsOnFullReplay,
    #[error("blacklist: {0}")]
    Blacklist(String),
    #[error("replay failed: {0}")]
    Replay(String),
}

/// Parameters shared by the generating strategies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzConfig {
    pub delay_ms: u64,
    pub seed: u64,
    pub max_messages: u64,
    pub pattern: Option<Pattern>,
    /// Identifier kind for unpatterned random fuzzing.
    pub kind: IdKind,
    pub blacklist: Blacklist,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            delay_ms: DEFAULT_DELAY_MS,
            seed: 0,
            max_messages: 1_000,
            pattern: None,
            kind: IdKind::Standard,
            blacklist: Blacklist::new(),
        }
    }
}

impl FuzzConfig {
    /// Rejects impossible delays and warns about unusual ones.
    pub fn validate(&self) -> Result<(), StrategyError> {
        if !DELAY_LIMITS_MS.contains(&self.delay_ms) {
            return Err(StrategyError::BadDelay(self.delay_ms));
        }
        if !TYPICAL_DELAY_MS.contains(&self.delay_ms) {
            warn!("delay {} ms is outside the usual 3-20 ms range", self.delay_ms);
        }
        Ok(())
    }

    pub fn delay(&self) -> Micros {
        self.delay_ms * 1_000
    }

    fn pattern(&self) -> Result<&Pattern, StrategyError> {
        self.pattern.as_ref().ok_or(StrategyError::MissingPattern)
    }
}

fn pull_received<T: Transport>(transport: &mut T, log: &mut TrafficLog) {
    while let Some((t, frame)) = transport.receive() {
        log.push(LogEntry::received(t, frame));
    }
}

/// Send `frames` one per `delay`, starting now.
pub fn emit<T: Transport>(
    transport: &mut T,
    frames: impl IntoIterator<Item = CanFrame>,
    delay: Micros,
) -> Result<TrafficLog, StrategyError> {
    let start = transport.now();
    let mut log = TrafficLog::new();
    let mut last = start;
    for (i, frame) in frames.into_iter().enumerate() {
        let at = start + i as Micros * delay;
        transport.send(frame, at)?;
        pull_received(transport, &mut log);
        log.push(LogEntry::sent(at, frame));
        last = at;
    }
    transport.idle_until(last)?;
    pull_received(transport, &mut log);
    Ok(log)
}

/// One uniformly random frame: id over the whole range, length 0-8, random bytes.
pub fn random_frame<R: Rng + ?Sized>(rng: &mut R, kind: IdKind) -> CanFrame {
    let id = rng.gen_range(0..=kind.max_id());
    let len = rng.gen_range(0..=MAX_PAYLOAD);
    let mut data = [0u8; MAX_PAYLOAD];
    rng.fill(&mut data[..len]);
    CanFrame::new(id, kind, &data[..len]).expect("in range by construction")
}

/// Random frames, drawn from the pattern when one is configured.
pub fn run_random<T: Transport>(transport: &mut T, cfg: &FuzzConfig) -> Result<TrafficLog, StrategyError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pattern = cfg.pattern.clone();
    let kind = cfg.kind;
    let frames = (0..cfg.max_messages).map(move |_| match &pattern {
        Some(p) => p.sample(&mut rng),
        None => random_frame(&mut rng, kind),
    });
    emit(transport, frames, cfg.delay())
}

/// Every instance of the pattern in ascending order, capped at `max_messages`.
pub fn run_brute<T: Transport>(transport: &mut T, cfg: &FuzzConfig) -> Result<TrafficLog, StrategyError> {
    cfg.validate()?;
    let pattern = cfg.pattern()?;
    let space = pattern.space_size();
    if space > u128::from(cfg.max_messages) {
        warn!(
            "pattern {pattern} has {space} instances; stopping after {}",
            cfg.max_messages
        );
    }
    let frames = pattern.enumerate().take(cfg.max_messages as usize);
    emit(transport, frames, cfg.delay())
}

/// Single-bit random walk over the pattern's wildcard digits.
pub fn run_mutate<T: Transport>(transport: &mut T, cfg: &FuzzConfig) -> Result<TrafficLog, StrategyError> {
    cfg.validate()?;
    let mutator = cfg.pattern()?.mutate(cfg.seed)?;
    emit(transport, mutator.take(cfg.max_messages as usize), cfg.delay())
}

/// Sent frames of `log` with their original spacing, or a constant `delay_override`.
pub fn replay_schedule(log: &TrafficLog, delay_override: Option<Micros>) -> Vec<(Micros, CanFrame)> {
    let sent: Vec<&LogEntry> = log.sent().collect();
    let Some(first) = sent.first().map(|e| e.timestamp) else {
        return Vec::new();
    };
    sent.iter()
        .enumerate()
        .map(|(i, e)| {
            let offset = match delay_override {
                Some(d) => i as Micros * d,
                None => e.timestamp - first,
            };
            (offset, e.frame)
        })
        .collect()
}

/// Re-send the sent entries of `log`, starting now.
pub fn run_replay<T: Transport>(
    transport: &mut T,
    log: &TrafficLog,
    delay_override: Option<Micros>,
) -> Result<TrafficLog, StrategyError> {
    let start = transport.now();
    let mut out = TrafficLog::new();
    let mut last = start;
    for (offset, frame) in replay_schedule(log, delay_override) {
        let at = start + offset;
        transport.send(frame, at)?;
        pull_received(transport, &mut out);
        out.push(LogEntry::sent(at, frame));
        last = at;
    }
    transport.idle_until(last)?;
    pull_received(transport, &mut out);
    Ok(out)
}

/// Sent-direction entries only.
pub fn sent_entries(log: &TrafficLog) -> Vec<LogEntry> {
    log.entries()
        .iter()
        .filter(|e| e.direction == Direction::Sent)
        .copied()
        .collect()
}
