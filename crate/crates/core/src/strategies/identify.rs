use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info};

use super::{ddmin, sent_entries, Blacklist, StrategyError, DEFAULT_DELAY_MS};
use crate::can_core::{CanFrame, LogEntry, TrafficLog};
use crate::oracles::{EventMatcher, OracleEvent, Transition};
use crate::Micros;

/// Frames repeated in the background of a replay, cycling through `frames`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CyclicStream {
    pub frames: Vec<CanFrame>,
    /// `None` sends the first frame once.
    pub period: Option<Micros>,
    pub phase: Micros,
}

impl CyclicStream {
    fn instances(&self, until: Micros) -> Vec<LogEntry> {
        let mut out = Vec::new();
        let Some(period) = self.period else {
            if self.phase <= until {
                out.extend(self.frames.first().map(|f| LogEntry::sent(self.phase, *f)));
            }
            return out;
        };
        let mut t = self.phase;
        let mut k = 0;
        while t <= until && !self.frames.is_empty() {
            out.push(LogEntry::sent(t, self.frames[k % self.frames.len()]));
            k += 1;
            t += period;
        }
        out
    }
}

/// What to put on the bus for one replay. Times are relative to the moment
/// the freshly powered target is ready.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayPlan {
    pub frames: Vec<LogEntry>,
    pub background: Vec<CyclicStream>,
}

impl ReplayPlan {
    pub fn new(frames: Vec<LogEntry>) -> Self {
        ReplayPlan {
            frames,
            background: Vec::new(),
        }
    }

    /// Time of the last foreground frame.
    pub fn end(&self) -> Micros {
        self.frames.last().map_or(0, |e| e.timestamp)
    }

    /// Foreground and background frames up to `until`, in time order.
    pub fn expand(&self, until: Micros) -> TrafficLog {
        let mut all: Vec<LogEntry> = self.background.iter().flat_map(|s| s.instances(until)).collect();
        all.extend(self.frames.iter().copied());
        TrafficLog::from_entries(all)
    }
}

/// Replays a plan against a freshly powered target and reports every
/// oracle event seen, with timestamps on the plan's time base.
pub trait Replayer {
    fn replay(&mut self, plan: &ReplayPlan, watch: &EventMatcher) -> Result<Vec<OracleEvent>, StrategyError>;

    /// How long after the last foreground frame a replay keeps running.
    fn tail(&self) -> Micros;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentifyOptions {
    /// Number of sent frames before the event kept as candidates.
    pub window: usize,
    /// Campaign inter-message delay.
    pub delay: Micros,
    /// Stretch factor applied to `delay` for minimization replays.
    pub factor: u64,
    pub blacklist: Blacklist,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        IdentifyOptions {
            window: 100,
            delay: DEFAULT_DELAY_MS * 1_000,
            factor: 5,
            blacklist: Blacklist::new(),
        }
    }
}

impl IdentifyOptions {
    pub fn spacing(&self) -> Micros {
        self.delay * self.factor.max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CauseReport {
    /// The event as first observed, on the original log's time base.
    pub event: OracleEvent,
    /// Minimal triggering frames, as recorded, in original order.
    pub causal_frames: Vec<LogEntry>,
    /// The minimized replay (causal frames plus protected traffic) that reproduces the event.
    pub residual_log: TrafficLog,
    /// Background streams used for protected traffic.
    pub background: Vec<CyclicStream>,
    pub window_len: usize,
    pub replays: u32,
    /// Replays during which the target faulted before the last planned frame.
    pub fault_replays: u32,
}

struct Counter<'a, R: ?Sized> {
    replayer: &'a mut R,
    replays: u32,
    faults: u32,
}

impl<R: Replayer + ?Sized> Counter<'_, R> {
    fn run(&mut self, plan: &ReplayPlan, watch: &EventMatcher) -> Result<Vec<OracleEvent>, StrategyError> {
        let events = self.replayer.replay(plan, watch)?;
        self.replays += 1;
        if events
            .iter()
            .any(|e| e.transition == Transition::Fault && e.timestamp <= plan.end())
        {
            self.faults += 1;
        }
        Ok(events)
    }
}

fn median_gap(times: &[Micros]) -> Option<Micros> {
    let mut gaps: Vec<Micros> = times.windows(2).map(|w| w[1] - w[0]).filter(|&g| g > 0).collect();
    if gaps.is_empty() {
        return None;
    }
    gaps.sort_unstable();
    Some(gaps[(gaps.len() - 1) / 2])
}

/// Protected traffic of `log` as cyclic streams: one per blacklisted id (or
/// blacklisted exact frame), repeating the recorded payloads at the median
/// recorded period.
pub fn background_streams(log: &TrafficLog, blacklist: &Blacklist) -> Vec<CyclicStream> {
    let sent = sent_entries(log);
    let Some(origin) = sent.first().map(|e| e.timestamp) else {
        return Vec::new();
    };
    let mut groups: BTreeMap<(bool, u32, Vec<u8>), Vec<&LogEntry>> = BTreeMap::new();
    for e in sent.iter().filter(|e| blacklist.contains(&e.frame)) {
        let by_id = blacklist.ids().any(|id| id == e.frame.id());
        let payload = if by_id { Vec::new() } else { e.frame.data().to_vec() };
        groups
            .entry((e.frame.is_extended(), e.frame.id(), payload))
            .or_default()
            .push(e);
    }
    groups
        .into_values()
        .map(|entries| {
            let times: Vec<Micros> = entries.iter().map(|e| e.timestamp).collect();
            let period = median_gap(&times);
            let first = times[0] - origin;
            CyclicStream {
                frames: entries.iter().map(|e| e.frame).collect(),
                period,
                phase: period.map_or(first, |p| first % p),
            }
        })
        .collect()
}

fn first_match(events: &[OracleEvent], target: &EventMatcher) -> Option<OracleEvent> {
    events.iter().find(|e| e.matches(target)).cloned()
}

/// Shrink `log` to a minimal set of frames that still triggers `target`.
///
/// The full log is replayed with its original spacing to locate the event.
/// The last `window` sent frames before it become candidates; protected
/// frames are pulled out and replayed as background streams. Candidates are
/// replayed at `delay * factor` spacing and reduced by delta debugging.
pub fn run_identify<R: Replayer + ?Sized>(
    replayer: &mut R,
    log: &TrafficLog,
    target: &EventMatcher,
    opts: &IdentifyOptions,
) -> Result<CauseReport, StrategyError> {
    let mut counter = Counter {
        replayer,
        replays: 0,
        faults: 0,
    };
    identify_with(&mut counter, log, target, opts)
}

fn identify_with<R: Replayer + ?Sized>(
    counter: &mut Counter<'_, R>,
    log: &TrafficLog,
    target: &EventMatcher,
    opts: &IdentifyOptions,
) -> Result<CauseReport, StrategyError> {
    let sent = sent_entries(log);
    let origin = sent.first().ok_or(StrategyError::EmptyLog)?.timestamp;
    let full = ReplayPlan::new(
        sent.iter()
            .map(|e| LogEntry::sent(e.timestamp - origin, e.frame))
            .collect(),
    );
    let tail = counter.replayer.tail();
    let events = counter.run(&full, target)?;
    let Some(event) = first_match(&events, target) else {
        return Err(StrategyError::FlakyEvent {
            reason: "full replay".into(),
            original: log.clone(),
            replayed: full.expand(full.end() + tail),
        });
    };
    let cutoff = event.timestamp;
    let before: Vec<&LogEntry> = full.frames.iter().filter(|e| e.timestamp <= cutoff).collect();
    let window = &before[before.len().saturating_sub(opts.window)..];
    let candidates: Vec<(usize, CanFrame)> = window
        .iter()
        .enumerate()
        .filter(|(_, e)| !opts.blacklist.contains(&e.frame))
        .map(|(i, e)| (i, e.frame))
        .collect();
    let first_in_window = before.len() - window.len();
    let background = background_streams(log, &opts.blacklist);
    let spacing = opts.spacing();
    let plan_for = |subset: &[usize]| ReplayPlan {
        frames: subset
            .iter()
            .enumerate()
            .map(|(k, &i)| LogEntry::sent(spacing * (k as Micros + 1), candidates[i].1))
            .collect(),
        background: background.clone(),
    };

    let all: Vec<usize> = (0..candidates.len()).collect();
    let stretched = plan_for(&all);
    if first_match(&counter.run(&stretched, target)?, target).is_none() {
        return Err(StrategyError::FlakyEvent {
            reason: format!("stretched replay at {} ms spacing", spacing / 1_000),
            original: log.clone(),
            replayed: stretched.expand(stretched.end() + tail),
        });
    }
    let causal = ddmin(candidates.len(), |subset| {
        let events = counter.run(&plan_for(subset), target)?;
        debug!("identify: {} frames -> {}", subset.len(), events.iter().any(|e| e.matches(target)));
        Ok::<_, StrategyError>(first_match(&events, target).is_some())
    })?;
    info!(
        "identify: {} candidates reduced to {} after {} replays",
        candidates.len(),
        causal.len(),
        counter.replays
    );
    let residual = plan_for(&causal);
    Ok(CauseReport {
        event: OracleEvent {
            timestamp: event.timestamp + origin,
            window_start: event.window_start + origin,
            ..event
        },
        causal_frames: causal
            .iter()
            .map(|&i| sent[first_in_window + candidates[i].0])
            .collect(),
        residual_log: residual.expand(residual.end() + tail),
        background,
        window_len: window.len(),
        replays: counter.replays,
        fault_replays: counter.faults,
    })
}

/// Payload bits of `frame` whose flip stops it from triggering `target`.
pub fn locate_bits<R: Replayer + ?Sized>(
    replayer: &mut R,
    frame: &CanFrame,
    background: &[CyclicStream],
    target: &EventMatcher,
    spacing: Micros,
) -> Result<Vec<(usize, u8)>, StrategyError> {
    let mut out = Vec::new();
    for byte in 0..frame.len() {
        for bit in 0..8u8 {
            let plan = ReplayPlan {
                frames: vec![LogEntry::sent(spacing, frame.with_bit_flipped(byte, bit))],
                background: background.to_vec(),
            };
            let events = replayer.replay(&plan, target)?;
            if first_match(&events, target).is_none() {
                out.push((byte, bit));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OmissionReport {
    pub blacklist: Blacklist,
    /// Ids whose omission faulted the target.
    pub required: Vec<u32>,
    pub cause: Option<CauseReport>,
    pub replays: u32,
    pub fault_replays: u32,
}

/// Find the traffic the target needs to stay alive, then optionally
/// minimize the cause of `event` while protecting it.
pub fn run_omission<R: Replayer + ?Sized>(
    replayer: &mut R,
    log: &TrafficLog,
    liveness: &EventMatcher,
    event: Option<&EventMatcher>,
    opts: &IdentifyOptions,
) -> Result<OmissionReport, StrategyError> {
    let sent = sent_entries(log);
    let origin = sent.first().ok_or(StrategyError::EmptyLog)?.timestamp;
    let mut counter = Counter {
        replayer,
        replays: 0,
        faults: 0,
    };
    let plan_without = |omit: &BTreeSet<u32>| {
        ReplayPlan::new(
            sent.iter()
                .filter(|e| !omit.contains(&e.frame.id()) || opts.blacklist.contains(&e.frame))
                .map(|e| LogEntry::sent(e.timestamp - origin, e.frame))
                .collect(),
        )
    };
    let watch = event.unwrap_or(liveness);
    let full = plan_without(&BTreeSet::new());
    let events = counter.run(&full, watch)?;
    if faults_within(&events, liveness, full.end()) {
        return Err(StrategyError::FaultsOnFullReplay);
    }
    if let Some(ev) = event {
        if first_match(&events, ev).is_none() {
            return Err(StrategyError::FlakyEvent {
                reason: "full replay".into(),
                original: log.clone(),
                replayed: full.expand(full.end() + counter.replayer.tail()),
            });
        }
    }

    let ids: Vec<u32> = sent
        .iter()
        .filter(|e| !opts.blacklist.contains(&e.frame))
        .map(|e| e.frame.id())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut required = Vec::new();
    isolate(&ids, &mut |omit| {
        let set: BTreeSet<u32> = omit.iter().copied().collect();
        let events = counter.run(&plan_without(&set), liveness)?;
        Ok(faults_within(&events, liveness, full.end()))
    }, &mut required)?;
    info!("omission: {} ids, required {:03X?}", ids.len(), required);

    let mut blacklist = opts.blacklist.clone();
    for &id in &required {
        blacklist.insert_id(id);
    }
    let mut replays = counter.replays;
    let mut fault_replays = counter.faults;
    let cause = match event {
        Some(ev) => {
            let id_opts = IdentifyOptions {
                blacklist: blacklist.clone(),
                ..opts.clone()
            };
            let report = run_identify(&mut *counter.replayer, log, ev, &id_opts)?;
            replays += report.replays;
            fault_replays += report.fault_replays;
            Some(report)
        }
        None => None,
    };
    Ok(OmissionReport {
        blacklist,
        required,
        cause,
        replays,
        fault_replays,
    })
}

/// Group testing: collect ids whose omission faults the target.
/// Liveness faults after the last replayed frame only reflect the trail ending.
fn faults_within(events: &[OracleEvent], liveness: &EventMatcher, end: Micros) -> bool {
    events.iter().any(|e| e.matches(liveness) && e.timestamp <= end)
}

fn isolate(
    ids: &[u32],
    faults: &mut impl FnMut(&[u32]) -> Result<bool, StrategyError>,
    out: &mut Vec<u32>,
) -> Result<(), StrategyError> {
    if ids.is_empty() || !faults(ids)? {
        return Ok(());
    }
    if ids.len() == 1 {
        out.push(ids[0]);
        return Ok(());
    }
    let (a, b) = ids.split_at(ids.len() / 2);
    let before = out.len();
    isolate(a, faults, out)?;
    isolate(b, faults, out)?;
    if out.len() == before {
        // Only the combination faults (redundant sources); keep them all.
        out.extend_from_slice(ids);
    }
    Ok(())
}
