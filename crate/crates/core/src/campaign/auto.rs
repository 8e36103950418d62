//! Automated exploration.
//!
//! Sweeps the identifier space with an all-ones and then an all-zeros
//! payload, minimizes every newly lit output down to its causal frames,
//! locates the responsible bit, then mutates the payloads of every frame
//! found so far and minimizes whatever new outputs that lights. A baseline
//! trail, when given, first goes through omission so the traffic the
//! targets need keeps running in the background.

use std::collections::{BTreeMap, BTreeSet};

use log::info;

use super::bench::{Session, Testbench, Watch, LIGHT_ORACLE};
use super::config::CampaignConfig;
use super::report::{MapEntry, Report};
use super::{chase, CampaignError};
use crate::bus::Transport;
use crate::can_core::{parse_pattern, CanFrame, IdKind, LogEntry, Pattern, TrafficLog, MAX_PAYLOAD};
use crate::oracles::{EventMatcher, OracleEvent, Transition};
use crate::strategies::{
    background_streams, locate_bits, run_brute, run_mutate, run_omission, Blacklist, CauseReport, FuzzConfig,
    IdentifyOptions, ReplayPlan, Replayer,
};
use crate::{ChannelId, Micros};

const SWEEP_PAYLOADS: [&str; 2] = ["FFFFFFFF", "00000000"];

#[derive(Debug, Clone)]
pub struct Exploration {
    pub log: TrafficLog,
    pub events: Vec<OracleEvent>,
    pub causes: Vec<CauseReport>,
    pub map: Vec<MapEntry>,
    /// Outputs that need more than one frame, with the frames in order.
    pub chains: Vec<(ChannelId, Vec<CanFrame>)>,
    pub blacklist: Option<Blacklist>,
    pub report: Report,
}

struct Explorer<'a> {
    bench: &'a Testbench,
    opts: IdentifyOptions,
    session: Session,
    entries: Vec<LogEntry>,
    done: BTreeSet<ChannelId>,
    spontaneous: BTreeSet<ChannelId>,
    causes: Vec<CauseReport>,
    map: BTreeMap<ChannelId, MapEntry>,
    chains: BTreeMap<ChannelId, Vec<CanFrame>>,
    leads: BTreeMap<(bool, u32), CanFrame>,
    notes: Report,
}

impl Explorer<'_> {
    /// Run one generating phase on the live session and chase its new activations.
    fn phase(&mut self, cfg: &FuzzConfig, mutate: bool) -> Result<(), CampaignError> {
        let start = self.session.bus.now();
        let log = {
            let mut port = self.session.port();
            if mutate {
                run_mutate(&mut port, cfg)?
            } else {
                run_brute(&mut port, cfg)?
            }
        };
        let Some((_, last)) = log.sent_span() else {
            return Ok(());
        };
        let end = last + self.bench.tail();
        self.session.port().idle_until(end)?;
        let events = self.bench.observe_session(&self.session, end, &Watch::All)?;
        let mut fresh = Vec::new();
        for e in events.iter().filter(|e| e.timestamp > start) {
            let Some(ch) = e.channel else { continue };
            let new = e.oracle == LIGHT_ORACLE
                && e.transition == Transition::Activated
                && !self.done.contains(&ch)
                && !self.spontaneous.contains(&ch)
                && !fresh.contains(&ch);
            if new {
                fresh.push(ch);
            }
        }
        info!("phase at {start}: {} frames, new outputs {fresh:?}", log.sent().count());
        for ch in fresh {
            self.explain(ch, &log)?;
        }
        self.entries.extend(log.into_entries());
        Ok(())
    }

    fn explain(&mut self, ch: ChannelId, log: &TrafficLog) -> Result<(), CampaignError> {
        let target = EventMatcher::activation(ch);
        let mut replayer = self.bench.replayer();
        let idle = replayer.replay(&ReplayPlan::default(), &target)?;
        if idle.iter().any(|e| e.matches(&target)) {
            info!("output {ch} lights without any frames");
            self.spontaneous.insert(ch);
            return Ok(());
        }
        let Some(cause) = chase(self.bench, log, &target, &self.opts, &mut self.notes)? else {
            return Ok(());
        };
        for e in &cause.causal_frames {
            self.leads.entry((e.frame.is_extended(), e.frame.id())).or_insert(e.frame);
        }
        if let [single] = cause.causal_frames[..] {
            let frame = single.frame;
            let bits = locate_bits(&mut replayer, &frame, &cause.background, &target, self.opts.spacing())?;
            if let [(byte, bit)] = bits[..] {
                self.map.insert(
                    ch,
                    MapEntry {
                        channel: ch,
                        id: frame.id(),
                        extended: frame.is_extended(),
                        byte,
                        bit,
                        active_high: frame.bit(byte, bit) == Some(true),
                    },
                );
            } else {
                let list: Vec<String> = bits.iter().map(|(b, i)| format!("{b}.{i}")).collect();
                self.notes.line(format!("bits {ch} {frame} {}", list.join(" ")));
            }
        } else {
            self.chains
                .insert(ch, cause.causal_frames.iter().map(|e| e.frame).collect());
        }
        self.done.insert(ch);
        self.causes.push(cause);
        Ok(())
    }
}

fn sweep_pattern(kind: IdKind, payload: &str) -> Pattern {
    let id = ".".repeat(match kind {
        IdKind::Standard => 3,
        IdKind::Extended => 8,
    });
    parse_pattern(&format!("{id} {payload}"), kind).expect("sweep patterns are well formed")
}

/// Explore the configured targets and recover their output map.
pub fn auto_explore(cfg: &CampaignConfig) -> Result<Exploration, CampaignError> {
    let mut bench = Testbench::from_config(cfg)?;
    let opts = cfg.identify_options()?;
    let mut notes = Report::default();
    let mut blacklist = None;
    if let Some(baseline) = cfg.baseline_log()? {
        let om = run_omission(&mut bench.replayer(), &baseline, &EventMatcher::fault(), None, &opts)?;
        info!("baseline needs ids {:03X?}", om.required);
        bench.background = background_streams(&baseline, &om.blacklist);
        notes.blacklist(&om.blacklist);
        blacklist = Some(om.blacklist);
    }

    let session = bench.session(&[])?;
    let mut ex = Explorer {
        bench: &bench,
        opts,
        session,
        entries: Vec::new(),
        done: BTreeSet::new(),
        spontaneous: BTreeSet::new(),
        causes: Vec::new(),
        map: BTreeMap::new(),
        chains: BTreeMap::new(),
        leads: BTreeMap::new(),
        notes,
    };

    let kind = cfg.kind();
    let base = FuzzConfig {
        delay_ms: cfg.fuzz.delay_ms,
        seed: cfg.seed,
        max_messages: cfg.fuzz.max_messages,
        pattern: None,
        kind,
        blacklist: Blacklist::new(),
    };
    for payload in SWEEP_PAYLOADS {
        let pattern = sweep_pattern(kind, payload);
        let max_messages = match kind {
            IdKind::Standard => pattern.space_size() as u64,
            IdKind::Extended => cfg.fuzz.max_messages,
        };
        let sweep = FuzzConfig {
            pattern: Some(pattern),
            max_messages,
            ..base.clone()
        };
        ex.phase(&sweep, false)?;
    }

    let leads: Vec<CanFrame> = ex.leads.values().copied().collect();
    for frame in leads {
        let mutation = FuzzConfig {
            pattern: Some(Pattern::payload_wildcard(&frame, MAX_PAYLOAD)),
            max_messages: cfg.identify.mutate_messages,
            seed: cfg.seed ^ u64::from(frame.id()),
            ..base.clone()
        };
        ex.phase(&mutation, true)?;
    }

    let end: Micros = ex.session.bus.now();
    let events = bench.observe_session(&ex.session, end, &Watch::All)?;
    let log = TrafficLog::from_entries(std::mem::take(&mut ex.entries));

    let mut report = Report::new("auto", cfg.seed);
    report.summary(&log, &events);
    for l in ex.notes.lines() {
        report.line(l.clone());
    }
    for c in &ex.causes {
        report.cause(c);
    }
    for m in ex.map.values() {
        report.map(m);
    }
    for (ch, frames) in &ex.chains {
        report.chain(*ch, frames);
    }
    for ch in &ex.spontaneous {
        report.spontaneous(*ch);
    }
    Ok(Exploration {
        log,
        events,
        causes: ex.causes,
        map: ex.map.into_values().collect(),
        chains: ex.chains.into_iter().collect(),
        blacklist,
        report,
    })
}
