//! Campaign orchestration: load a config, build the testbench, run one
//! strategy, and write the traffic log, events file and report.

mod auto;
mod bench;
mod config;
mod report;

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use thiserror::Error;

pub use auto::{auto_explore, Exploration};
pub use bench::{BenchError, BenchReplayer, OracleSettings, Session, Testbench, Watch, LIGHT_ORACLE, LIVENESS_ORACLE};
pub use config::{
    BusSection, CampaignConfig, ClusterSource, ConfigError, FuzzSection, HarnessSection, HeartbeatOracleConfig,
    IdentifySection, OracleSection, OutputSection, StrategyKind, TargetsSection,
};
pub use report::{parse_cause_frames, parse_map, MapEntry, Report};

use crate::bus::{Transport, TransportError};
use crate::can_core::{LogEntry, TrafficLog};
use crate::oracles::{EventMatcher, OracleEvent, Transition};
use crate::strategies::{
    run_brute, run_identify, run_mutate, run_omission, run_random, run_replay, Blacklist, CauseReport,
    IdentifyOptions, StrategyError,
};
use crate::Micros;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_TARGET_FAULT: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CampaignError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CampaignError::Config(_) => EXIT_CONFIG,
            _ => EXIT_FAILED,
        }
    }
}

/// Everything a campaign produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub strategy: StrategyKind,
    pub log: TrafficLog,
    /// Events with their attribution flag.
    pub events: Vec<(OracleEvent, bool)>,
    pub causes: Vec<CauseReport>,
    pub map: Vec<MapEntry>,
    pub blacklist: Option<Blacklist>,
    pub report: Report,
}

impl Outcome {
    /// Did any oracle report the target as faulted?
    pub fn faulted(&self) -> bool {
        self.events.iter().any(|(e, _)| e.transition == Transition::Fault)
    }

    pub fn exit_code(&self) -> i32 {
        if self.faulted() {
            EXIT_TARGET_FAULT
        } else {
            EXIT_OK
        }
    }

    pub fn events_text(&self) -> String {
        self.events.iter().map(|(e, a)| e.to_line(*a) + "\n").collect()
    }
}

/// Pair events with whether any sent frame falls in their attribution window.
pub fn attribute(log: &TrafficLog, events: Vec<OracleEvent>) -> Vec<(OracleEvent, bool)> {
    let sent: Vec<Micros> = log.sent().map(|e| e.timestamp).collect();
    events
        .into_iter()
        .map(|e| {
            let from = sent.partition_point(|&t| t < e.window_start);
            let attributed = sent.get(from).is_some_and(|&t| t <= e.timestamp);
            (e, attributed)
        })
        .collect()
}

fn is_liveness_change(e: &OracleEvent) -> bool {
    matches!(e.transition, Transition::Fault | Transition::Recovered)
}

/// Let the rig settle after the strategy's last frame, collect late
/// receptions and observe. With `trail` set, faults after the last frame
/// are dropped: they only show that the replayed trail ended.
fn finish(
    bench: &Testbench,
    session: &mut Session,
    mut log: TrafficLog,
    trail: bool,
) -> Result<(TrafficLog, Vec<OracleEvent>), CampaignError> {
    let Some((_, last)) = log.sent_span() else {
        return Ok((log, Vec::new()));
    };
    let end = last + bench.tail();
    let mut port = session.port();
    port.idle_until(end)?;
    while let Some((t, f)) = port.receive() {
        log.push(LogEntry::received(t, f));
    }
    let mut events = bench.observe_session(session, end, &Watch::All)?;
    if trail {
        events.retain(|e| !(is_liveness_change(e) && e.timestamp > last));
    }
    Ok((log, events))
}

/// Minimize the cause of `target` in `log`; flaky events are reported, not fatal.
pub(crate) fn chase(
    bench: &Testbench,
    log: &TrafficLog,
    target: &EventMatcher,
    opts: &IdentifyOptions,
    report: &mut Report,
) -> Result<Option<CauseReport>, CampaignError> {
    match run_identify(&mut bench.replayer(), log, target, opts) {
        Ok(c) => Ok(Some(c)),
        Err(StrategyError::FlakyEvent { reason, .. }) => {
            warn!("event {target:?} not reproduced: {reason}");
            report.flaky(target, &reason);
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

/// The first activation per channel, in time order.
fn first_activations(events: &[OracleEvent]) -> Vec<EventMatcher> {
    let mut seen = BTreeSet::new();
    events
        .iter()
        .filter(|e| e.oracle == LIGHT_ORACLE && e.transition == Transition::Activated)
        .filter_map(|e| e.channel)
        .filter(|c| seen.insert(*c))
        .map(EventMatcher::activation)
        .collect()
}

fn trail(cfg: &CampaignConfig, kind: StrategyKind) -> Result<TrafficLog, CampaignError> {
    let log = match cfg.input_log()? {
        Some(l) => Some(l),
        None if kind == StrategyKind::Omit => cfg.baseline_log()?,
        None => None,
    };
    log.ok_or_else(|| ConfigError::Invalid(format!("{kind} needs a message trail (-f)")).into())
}

fn replay_trail(
    bench: &Testbench,
    trail: &TrafficLog,
    delay: Option<Micros>,
) -> Result<(TrafficLog, Vec<OracleEvent>), CampaignError> {
    let mut session = bench.session(&[])?;
    let log = run_replay(&mut session.port(), trail, delay)?;
    finish(bench, &mut session, log, true)
}

/// Run the configured strategy against the simulated targets.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<Outcome, CampaignError> {
    let kind = cfg
        .strategy
        .ok_or_else(|| ConfigError::Invalid("no strategy selected".into()))?;
    if kind == StrategyKind::Auto {
        let ex = auto_explore(cfg)?;
        return Ok(Outcome {
            strategy: kind,
            events: attribute(&ex.log, ex.events),
            log: ex.log,
            causes: ex.causes,
            map: ex.map,
            blacklist: ex.blacklist,
            report: ex.report,
        });
    }

    let bench = Testbench::from_config(cfg)?;
    let opts = cfg.identify_options()?;
    let mut notes = Report::default();
    let mut causes = Vec::new();
    let mut blacklist = None;

    let (log, events) = match kind {
        StrategyKind::Random | StrategyKind::Brute | StrategyKind::Mutate => {
            let fuzz = cfg.fuzz_config()?;
            let mut session = bench.session(&[])?;
            let log = {
                let mut port = session.port();
                match kind {
                    StrategyKind::Random => run_random(&mut port, &fuzz)?,
                    StrategyKind::Brute => run_brute(&mut port, &fuzz)?,
                    _ => run_mutate(&mut port, &fuzz)?,
                }
            };
            finish(&bench, &mut session, log, false)?
        }
        StrategyKind::Replay => {
            let input = trail(cfg, kind)?;
            replay_trail(&bench, &input, cfg.fuzz.replay_delay_ms.map(|d| d * 1_000))?
        }
        StrategyKind::Identify => {
            let input = trail(cfg, kind)?;
            let (log, events) = replay_trail(&bench, &input, None)?;
            let target = match cfg.identify.channel {
                Some(c) => Some(EventMatcher::activation(c)),
                None => first_activations(&events).into_iter().next(),
            };
            match target {
                Some(t) => causes.extend(chase(&bench, &input, &t, &opts, &mut notes)?),
                None => {
                    warn!("the trail triggers no activation");
                    notes.line("flaky * - activated full replay");
                }
            }
            (log, events)
        }
        StrategyKind::Omit => {
            let input = trail(cfg, kind)?;
            let (log, events) = replay_trail(&bench, &input, None)?;
            let event = cfg.identify.channel.map(EventMatcher::activation);
            let om = run_omission(&mut bench.replayer(), &input, &EventMatcher::fault(), event.as_ref(), &opts)?;
            info!("omission: {} replays, {} faulted", om.replays, om.fault_replays);
            notes.blacklist(&om.blacklist);
            causes.extend(om.cause);
            blacklist = Some(om.blacklist);
            (log, events)
        }
        StrategyKind::Auto => unreachable!("handled above"),
    };

    if cfg.identify.auto && matches!(kind, StrategyKind::Random | StrategyKind::Brute | StrategyKind::Mutate | StrategyKind::Replay) {
        for target in first_activations(&events) {
            causes.extend(chase(&bench, &log, &target, &opts, &mut notes)?);
        }
    }

    let mut full = Report::new(kind.as_str(), cfg.seed);
    full.summary(&log, &events);
    for l in notes.lines() {
        full.line(l.clone());
    }
    for c in &causes {
        full.cause(c);
    }
    Ok(Outcome {
        strategy: kind,
        events: attribute(&log, events),
        log,
        causes,
        map: Vec::new(),
        blacklist,
        report: full,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), CampaignError> {
    let io = |source| CampaignError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)?;
    f.flush().map_err(io)
}

/// Write log, events and report into the configured output directory.
pub fn write_outputs(cfg: &CampaignConfig, outcome: &Outcome) -> Result<(), CampaignError> {
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir).map_err(|source| CampaignError::Io {
        path: dir.clone(),
        source,
    })?;
    write_file(&dir.join(&cfg.output.log), &outcome.log.to_string())?;
    write_file(&dir.join(&cfg.output.events), &outcome.events_text())?;
    write_file(&dir.join(&cfg.output.report), &outcome.report.to_string())
}

/// Run and persist a campaign; returns the process exit code.
pub fn execute(cfg: &CampaignConfig) -> i32 {
    let result = run_campaign(cfg).and_then(|o| write_outputs(cfg, &o).map(|_| o));
    match result {
        Ok(o) => {
            info!(
                "{}: {} frames sent, {} events, exit {}",
                o.strategy,
                o.log.sent().count(),
                o.events.len(),
                o.exit_code()
            );
            o.exit_code()
        }
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}
