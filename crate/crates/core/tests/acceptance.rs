//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the verdict lines always reach the
//! console. Exits non-zero when any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use canfuzz::bus::{BusConfig, Transport};
use canfuzz::campaign::{
    execute, run_campaign, CampaignConfig, MapEntry, OracleSettings, Testbench, Watch, LIGHT_ORACLE,
};
use canfuzz::can_core::{CanFrame, IdKind, LogEntry, TrafficLog};
use canfuzz::harness::{Harness, HarnessConfig, Precision, SimulatedBackend};
use canfuzz::oracles::{CalibrationPair, EventMatcher, IndicatorState, OracleEvent, Rgb, Transition};
use canfuzz::sim_ecu::{BitRef, ClusterLayout, IndicatorSpec, OutputBoard, TargetSet};
use canfuzz::strategies::{run_identify, run_random, FuzzConfig, IdentifyOptions};
use canfuzz::{ChannelId, Micros};

// 1: 2047 gaps of 10 ms.
const SWEEP_SPAN_US: Micros = 20_470_000;
const SWEEP_WALL_LIMIT: Duration = Duration::from_secs(5);

// 3
const MIN_LAYOUTS: usize = 100;
const MAX_LOG_FRAMES: usize = 20;

// 5
const BYPASS_FRAME_BUDGET: u64 = 100_000;
const NEGATIVE_CONTROL_FRAMES: u64 = 1_000_000;

// 6: sampling lag of two p12 windows, plus one poll gap to see the onset
// and one to run the check (7 ms integration + 0.1 ms mux switch each).
const DISPLAY_PERIOD_US: Micros = 250_000;
const DISPLAY_TOLERANCE: f64 = 2.5;
const DISPLAY_LAG_US: Micros = 2 * 7_000 + 2 * 7_100 + 1;

// 7
const CLASSIFIER_PAIRS: usize = 10_000;
const ORTHOGONAL_SHIFTS: usize = 100;

// 9
const TIMING_CASES: usize = 2_000;

type Verdict = Result<String, String>;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

fn campaign(name: &str) -> CampaignConfig {
    CampaignConfig::load(&fixture(&format!("campaigns/{name}"))).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sent_times(log: &TrafficLog) -> Vec<Micros> {
    log.sent().map(|e| e.timestamp).collect()
}

fn brute_sweep_schedule() -> Verdict {
    let mut cfg = campaign("brute_ff.toml");
    cfg.identify.auto = false;
    let start = Instant::now();
    let out = run_campaign(&cfg).map_err(|e| e.to_string())?;
    let wall = start.elapsed();
    let times = sent_times(&out.log);
    let ids: BTreeSet<u32> = out.log.sent().map(|e| e.frame.id()).collect();
    let span = times.last().copied().unwrap_or(0) - times.first().copied().unwrap_or(0);
    let even = times.windows(2).all(|w| w[1] - w[0] == 10_000);
    check(
        times.len() == 2048 && ids.len() == 2048 && even && span == SWEEP_SPAN_US && wall < SWEEP_WALL_LIMIT,
        format!("{} frames, {} ids, span {span} us, wall {:.2?}", times.len(), ids.len(), wall),
    )
}

fn indicator_discovery() -> Verdict {
    let cfg = campaign("auto.toml");
    let truth = cfg.targets().map_err(|e| e.to_string())?.ground_truth();
    let expected: Vec<MapEntry> = truth
        .iter()
        .filter(|g| g.arm.is_none())
        .map(|g| MapEntry {
            channel: g.channel,
            id: g.trigger.id,
            extended: false,
            byte: g.trigger.byte,
            bit: g.trigger.bit,
            active_high: !g.default_on,
        })
        .collect();
    let out = run_campaign(&cfg).map_err(|e| e.to_string())?;
    let mut got = out.map.clone();
    got.sort();
    let mut want = expected.clone();
    want.sort();
    let defaults_on = truth.iter().filter(|g| g.default_on).count();
    let mut chains_ok = true;
    for g in truth.iter().filter(|g| g.arm.is_some()) {
        let arm = g.arm.expect("filtered");
        let ids: Vec<u32> = out
            .causes
            .iter()
            .find(|c| c.event.channel == Some(g.channel))
            .map(|c| c.causal_frames.iter().map(|e| e.frame.id()).collect())
            .unwrap_or_default();
        chains_ok &= ids == vec![arm.id, g.trigger.id];
    }
    check(
        got == want && chains_ok,
        format!(
            "{}/{} single-stage entries ({} default-on), two-stage chains {}",
            got.iter().filter(|m| want.contains(m)).count(),
            want.len(),
            defaults_on,
            if chains_ok { "ok" } else { "wrong" }
        ),
    )
}

fn random_layout(rng: &mut ChaCha8Rng) -> ClusterLayout {
    let mut pool: Vec<u32> = Vec::new();
    while pool.len() < 4 {
        let id = rng.gen_range(0x100..0x700);
        if !pool.contains(&id) {
            pool.push(id);
        }
    }
    let n = rng.gen_range(3..=6);
    let indicators = (0..n)
        .map(|ch| {
            let id = *pool.choose(rng).expect("non-empty");
            let arm = rng.gen_bool(0.25).then(|| BitRef {
                id: *pool.iter().filter(|&&p| p != id).collect::<Vec<_>>().choose(rng).copied().expect("pool > 1"),
                byte: rng.gen_range(0..3),
                bit: rng.gen_range(0..8),
            });
            IndicatorSpec {
                name: format!("lamp{ch}"),
                channel: ch as ChannelId,
                id,
                byte: rng.gen_range(0..3),
                bit: rng.gen_range(0..8),
                default_on: arm.is_none() && rng.gen_bool(0.2),
                arm,
            }
        })
        .collect();
    ClusterLayout {
        hold_ms: 200,
        lamp_test_ms: 300,
        arm_window_ms: 1_000,
        indicators,
        needles: Vec::new(),
    }
}

fn random_log(rng: &mut ChaCha8Rng, layout: &ClusterLayout) -> TrafficLog {
    let ids: Vec<u32> = layout
        .indicators
        .iter()
        .flat_map(|i| std::iter::once(i.id).chain(i.arm.map(|a| a.id)))
        .chain([0x7F0])
        .collect();
    let n = rng.gen_range(4..=MAX_LOG_FRAMES);
    let entries = (0..n)
        .map(|k| {
            let len = rng.gen_range(1..=4);
            let data: Vec<u8> = (0..len)
                .map(|_| (0..8).fold(0u8, |b, bit| b | (u8::from(rng.gen_bool(0.15)) << bit)))
                .collect();
            let frame = CanFrame::standard(*ids.choose(rng).expect("non-empty"), &data).expect("valid frame");
            LogEntry::sent(k as Micros * 10_000, frame)
        })
        .collect();
    TrafficLog::from_entries(entries)
}

/// Reference semantics: does replaying `frames` in order at `spacing` light `spec`?
fn model_triggers(spec: &IndicatorSpec, frames: &[CanFrame], spacing: Micros, arm_window: Micros) -> bool {
    let bit_of = |r: BitRef, f: &CanFrame| -> Option<bool> {
        (f.kind() == IdKind::Standard && f.id() == r.id)
            .then(|| f.data().get(r.byte).map(|b| b >> r.bit & 1 == 1))
            .flatten()
    };
    let trigger = BitRef {
        id: spec.id,
        byte: spec.byte,
        bit: spec.bit,
    };
    frames.iter().enumerate().any(|(j, f)| {
        let Some(bit) = bit_of(trigger, f) else {
            return false;
        };
        let active = if spec.default_on { !bit } else { bit };
        match spec.arm {
            None => active,
            Some(arm) => {
                active
                    && frames[..=j]
                        .iter()
                        .enumerate()
                        .any(|(i, a)| bit_of(arm, a) == Some(true) && (j - i) as Micros * spacing <= arm_window)
            }
        }
    })
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// All minimum-cardinality subsets of `frames` that light `spec`.
fn minimal_sets(spec: &IndicatorSpec, frames: &[CanFrame], spacing: Micros, arm_window: Micros) -> (usize, Vec<Vec<usize>>) {
    for k in 1..=frames.len() {
        let hits: Vec<Vec<usize>> = combinations(frames.len(), k)
            .into_iter()
            .filter(|s| {
                let sub: Vec<CanFrame> = s.iter().map(|&i| frames[i]).collect();
                model_triggers(spec, &sub, spacing, arm_window)
            })
            .collect();
        if !hits.is_empty() {
            return (k, hits);
        }
    }
    (0, Vec::new())
}

fn minimization_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1D);
    let opts = IdentifyOptions::default();
    let mut cases = 0;
    let mut attempts = 0;
    let mut sizes = [0usize; 4];
    let mut failures = Vec::new();
    while cases < MIN_LAYOUTS && attempts < 10 * MIN_LAYOUTS {
        attempts += 1;
        let layout = random_layout(&mut rng);
        if layout.validate().is_err() {
            continue;
        }
        let targets = TargetSet {
            cluster: Some(layout.clone()),
            ..TargetSet::default()
        };
        let harness = HarnessConfig::for_outputs(&targets.output_channels(), Precision::P12);
        let bench = Testbench::new(targets, harness, BusConfig::default(), attempts as u64, OracleSettings::default())
            .map_err(|e| e.to_string())?;
        let Some((log, channel)) = (0..20).find_map(|_| {
            let log = random_log(&mut rng, &layout);
            let entries: Vec<LogEntry> = log.sent().copied().collect();
            let (session, end) = bench.replayer().run(&entries, &[]).ok()?;
            let events = bench.observe_session(&session, end, &Watch::All).ok()?;
            let ch = events
                .iter()
                .find(|e| e.oracle == LIGHT_ORACLE && e.transition == Transition::Activated)?
                .channel?;
            Some((log, ch))
        }) else {
            continue;
        };
        cases += 1;
        let spec = layout.indicator(channel).expect("lamp of the layout").clone();
        let cause = match run_identify(&mut bench.replayer(), &log, &EventMatcher::activation(channel), &opts) {
            Ok(c) => c,
            Err(e) => {
                failures.push(format!("layout {attempts}: {e}"));
                continue;
            }
        };
        let window: Vec<&LogEntry> = log.sent().filter(|e| e.timestamp <= cause.event.timestamp).collect();
        let frames: Vec<CanFrame> = window.iter().map(|e| e.frame).collect();
        let (k, minimal) = minimal_sets(&spec, &frames, opts.spacing(), layout.arm_window_ms * 1_000);
        let chosen: Vec<usize> = cause
            .causal_frames
            .iter()
            .filter_map(|c| window.iter().position(|e| e.timestamp == c.timestamp))
            .collect();
        sizes[chosen.len().min(3)] += 1;
        if chosen.len() != cause.causal_frames.len() || chosen.len() != k || !minimal.contains(&chosen) {
            failures.push(format!("layout {attempts} ch {channel}: identify {chosen:?}, minimum {k} {minimal:?}"));
        }
    }
    check(
        cases >= MIN_LAYOUTS && failures.is_empty(),
        format!(
            "{cases} layouts, causal sizes 1:{} 2:{} 3+:{}, {} mismatches{}",
            sizes[1],
            sizes[2],
            sizes[3],
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn omission_blacklist() -> Verdict {
    let mut details = Vec::new();
    let mut ok = true;
    for (name, required) in [("heartbeat_omit.toml", vec![0x0C0]), ("heartbeat2_omit.toml", vec![0x0C0, 0x2A1])] {
        let cfg = campaign(name);
        let trail = cfg.baseline_log().map_err(|e| e.to_string())?.expect("fixture has a baseline");
        let (first, last) = trail.sent_span().expect("non-empty trail");
        let out = run_campaign(&cfg).map_err(|e| e.to_string())?;
        let got: Vec<u32> = out.blacklist.as_ref().map(|b| b.ids().collect()).unwrap_or_default();
        let cause = out.causes.first();
        let faults = cause.map(|c| c.fault_replays);
        let causal: Vec<u32> = cause.map(|c| c.causal_frames.iter().map(|e| e.frame.id()).collect()).unwrap_or_default();
        ok &= got == required && faults == Some(0) && causal == vec![0x3D0] && last - first >= 10 * 50_000 && !out.faulted();
        details.push(format!("{name}: blacklist {got:03X?}, identify faults {faults:?}, cause {causal:03X?}"));
    }
    check(ok, details.join("; "))
}

/// Run a generating strategy on a bench and return the board-level view.
fn fuzz_on_bench(cfg: &CampaignConfig) -> Result<(OutputBoard, TrafficLog, Vec<OracleEvent>), String> {
    let bench = Testbench::from_config(cfg).map_err(|e| e.to_string())?;
    let fuzz = cfg.fuzz_config().map_err(|e| e.to_string())?;
    let mut session = bench.session(&[]).map_err(|e| e.to_string())?;
    let log = run_random(&mut session.port(), &fuzz).map_err(|e| e.to_string())?;
    let end = log.sent_span().map_or(0, |(_, l)| l) + bench.tail();
    session.port().idle_until(end).map_err(|e| e.to_string())?;
    let events = bench.observe_session(&session, end, &Watch::All).map_err(|e| e.to_string())?;
    Ok((session.bus.world().clone(), log, events))
}

fn frames_until_display(log: &TrafficLog, events: &[OracleEvent], display: ChannelId) -> Option<usize> {
    let hit = events
        .iter()
        .find(|e| e.channel == Some(display) && e.transition == Transition::Activated)?;
    Some(log.sent().filter(|e| e.timestamp <= hit.timestamp).count())
}

fn extended_bypass() -> Verdict {
    let base = campaign("auth_bypass.toml");
    let display = base.targets.auth.as_ref().expect("auth target").display_channel;
    let mut budget = base.clone();
    budget.fuzz.max_messages = BYPASS_FRAME_BUDGET;
    let mut low_bits = budget.clone();
    low_bits.fuzz.pattern = Some(".....123 ................".into());

    let (_, log, events) = fuzz_on_bench(&budget)?;
    let unrestricted = frames_until_display(&log, &events, display);
    let (_, log, events) = fuzz_on_bench(&low_bits)?;
    let restricted = frames_until_display(&log, &events, display);

    let mut off = low_bits.clone();
    off.fuzz.delay_ms = 1;
    off.fuzz.max_messages = NEGATIVE_CONTROL_FRAMES;
    off.targets.auth.as_mut().expect("auth target").bugs.ext_id_bypass = false;
    let (board, log, events) = fuzz_on_bench(&off)?;
    let pulses = board.activations(display, 0).len();
    let shown = events.iter().filter(|e| e.channel == Some(display)).count();
    let sent = log.sent().count() as u64;

    let mut std_off = off.clone();
    std_off.fuzz.extended = false;
    std_off.fuzz.pattern = None;
    let (std_board, std_log, std_events) = fuzz_on_bench(&std_off)?;
    let std_pulses = std_board.activations(display, 0).len();
    let std_shown = std_events.iter().filter(|e| e.channel == Some(display)).count();
    let std_sent = std_log.sent().count() as u64;

    let within = |n: Option<usize>| n.is_some_and(|n| n as u64 <= BYPASS_FRAME_BUDGET);
    check(
        within(unrestricted)
            && within(restricted)
            && sent == NEGATIVE_CONTROL_FRAMES
            && std_sent == NEGATIVE_CONTROL_FRAMES
            && pulses + shown + std_pulses + std_shown == 0,
        format!(
            "bug on: display after {unrestricted:?} extended / {restricted:?} low-bit frames; \
             bug off: {pulses} pulses, {shown} events over {sent} extended frames, \
             {std_pulses} pulses, {std_shown} events over {std_sent} standard frames"
        ),
    )
}

fn desync_run(flood: u64) -> Result<(OutputBoard, Vec<OracleEvent>, Micros, Micros, usize), String> {
    let cfg = campaign("auth_desync.toml");
    let auth = cfg.targets.auth.clone().expect("auth target");
    let bench = Testbench::from_config(&cfg).map_err(|e| e.to_string())?;
    let mut session = bench.session(&[]).map_err(|e| e.to_string())?;
    let flood_at = 1_100_000;
    session.port().idle_until(flood_at).map_err(|e| e.to_string())?;
    let fuzz = FuzzConfig {
        max_messages: flood,
        ..cfg.fuzz_config().map_err(|e| e.to_string())?
    };
    let log = run_random(&mut session.port(), &fuzz).map_err(|e| e.to_string())?;
    let flood_end = log.sent_span().map_or(flood_at, |(_, l)| l);
    let end = 4_000_000;
    session.port().idle_until(end).map_err(|e| e.to_string())?;
    let events = bench.observe_session(&session, end, &Watch::All).map_err(|e| e.to_string())?;
    let legit_after = session
        .bus
        .trace()
        .iter()
        .filter(|t| t.frame.id() == auth.auth_id && t.delivered > flood_end)
        .count();
    Ok((session.bus.world().clone(), events, flood_at, flood_end, legit_after))
}

fn nonce_desync() -> Verdict {
    let cfg = campaign("auth_desync.toml");
    let auth = cfg.targets.auth.clone().expect("auth target");
    let display = auth.display_channel;
    let (board, events, flood_at, flood_end, legit_after) = desync_run(auth.window)?;
    let (board2, events2, ..) = desync_run(auth.window)?;
    let (short_board, ..) = desync_run(auth.window - 1)?;

    let before = board.activations(display, 0).iter().filter(|&&t| t < flood_at).count();
    let after = board.activations(display, flood_at).len();
    let last_pulse = board.activations(display, 0).last().copied().unwrap_or(0);
    let fault = events
        .iter()
        .find(|e| e.oracle == "display" && e.transition == Transition::Fault && e.timestamp > flood_end)
        .map(|e| e.timestamp);
    let bound = (DISPLAY_PERIOD_US as f64 * DISPLAY_TOLERANCE) as Micros;
    let timely = fault.is_some_and(|f| f > last_pulse + bound && f - last_pulse <= bound + DISPLAY_LAG_US);
    let short_after = short_board.activations(display, flood_end + DISPLAY_PERIOD_US).len();
    let deterministic = events == events2 && board.activations(display, 0) == board2.activations(display, 0);
    check(
        before >= 3 && after == 0 && legit_after >= 8 && timely && deterministic && short_after > 0,
        format!(
            "{before} pulses before the flood, {after} after ({legit_after} legitimate attempts); \
             fault {:?} us after the last pulse (limit {}); {} flood frames leave {short_after} pulses",
            fault.map(|f| f.saturating_sub(last_pulse)),
            bound + DISPLAY_LAG_US,
            auth.window - 1
        ),
    )
}

fn cross(a: Rgb<i64>, b: Rgb<i64>) -> Rgb<i64> {
    Rgb::new(a.g * b.b - a.b * b.g, a.b * b.r - a.r * b.b, a.r * b.g - a.g * b.r)
}

/// Side of the bisector plane between the references: positive towards `on`.
fn bisector_side(x: Rgb<i64>, on: Rgb<i64>, off: Rgb<i64>) -> i128 {
    let d = [on.r - off.r, on.g - off.g, on.b - off.b].map(i128::from);
    let mid2 = [on.r + off.r, on.g + off.g, on.b + off.b].map(i128::from);
    let x2 = [x.r, x.g, x.b].map(|v| 2 * i128::from(v));
    (0..3).map(|i| (x2[i] - mid2[i]) * d[i]).sum()
}

fn expected_state(side: i128, previous: IndicatorState) -> IndicatorState {
    match side.signum() {
        1 => IndicatorState::On,
        -1 => IndicatorState::Off,
        _ => previous,
    }
}

fn classifier_properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1A5);
    let point = |rng: &mut ChaCha8Rng| -> Rgb<i64> {
        Rgb::new(rng.gen_range(0..=65_535), rng.gen_range(0..=65_535), rng.gen_range(0..=65_535))
    };
    let mut violations = [0usize; 3];
    let mut shifts = 0;
    let mut pairs = 0;
    while pairs < CLASSIFIER_PAIRS {
        let on: Rgb<i64> = point(&mut rng);
        let off: Rgb<i64> = point(&mut rng);
        if on == off {
            continue;
        }
        pairs += 1;
        let pair = CalibrationPair {
            channel: 0,
            on_ref: on,
            off_ref: off,
        };
        if pair.classify(on, IndicatorState::Off) != IndicatorState::On
            || pair.classify(off, IndicatorState::On) != IndicatorState::Off
        {
            violations[0] += 1;
        }
        let reading = point(&mut rng);
        let prev = if rng.gen_bool(0.5) { IndicatorState::On } else { IndicatorState::Off };
        let decision = pair.classify(reading, prev);
        let axis = on.sub(off);
        for _ in 0..ORTHOGONAL_SHIFTS {
            let u = Rgb::new(rng.gen_range(-50..=50), rng.gen_range(-50..=50), rng.gen_range(-50..=50));
            let shift = cross(axis, u);
            debug_assert_eq!(shift.dot(axis), 0);
            shifts += 1;
            if pair.classify(reading.add(shift), prev) != decision {
                violations[1] += 1;
            }
        }
        let other = point(&mut rng);
        for x in [reading, other] {
            if pair.classify(x, prev) != expected_state(bisector_side(x, on, off), prev) {
                violations[2] += 1;
            }
        }
        let flipped = pair.classify(reading, prev) != pair.classify(other, prev);
        let crossed = bisector_side(reading, on, off).signum() != bisector_side(other, on, off).signum();
        let on_plane = bisector_side(reading, on, off) == 0 || bisector_side(other, on, off) == 0;
        if !on_plane && flipped != crossed {
            violations[2] += 1;
        }
    }
    check(
        violations.iter().all(|&v| v == 0),
        format!(
            "{pairs} pairs, {shifts} orthogonal shifts; violations refs {} shifts {} bisector {}",
            violations[0], violations[1], violations[2]
        ),
    )
}

fn campaign_determinism() -> Verdict {
    let mut names: Vec<String> = fs::read_dir(fixture("campaigns"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".toml"))
        .collect();
    names.sort();
    let mut differing = Vec::new();
    for name in &names {
        let mut outputs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let mut cfg = campaign(name);
            cfg.output.dir = Some(dir.path().to_path_buf());
            let code = execute(&cfg);
            let files: Vec<Vec<u8>> = [&cfg.output.log, &cfg.output.events, &cfg.output.report]
                .iter()
                .map(|f| fs::read(dir.path().join(f)).unwrap_or_default())
                .collect();
            outputs.push((code, files));
        }
        let same = outputs[0] == outputs[1] && !outputs[0].1[2].is_empty();
        if !same {
            differing.push(name.clone());
        }
    }
    check(
        differing.is_empty(),
        format!("{} fixture campaigns run twice, differing: {differing:?}", names.len()),
    )
}

/// First window boundary strictly after `t`, walking from `init`.
fn next_boundary(init: Micros, period: Micros, t: Micros) -> Micros {
    let mut b = init;
    while b <= t {
        b += period;
    }
    b
}

fn sensor_timing() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7E);
    let mut details = Vec::new();
    let mut ok = true;
    for precision in [Precision::P12, Precision::P16] {
        let period = precision.integration_time();
        let mut worst: Micros = 0;
        let mut early = 0;
        let mut late = 0;
        let mut flicker = 0;
        for _ in 0..TIMING_CASES {
            let n = rng.gen_range(1..=4) as ChannelId;
            let outputs: Vec<ChannelId> = (0..n).collect();
            let mut cfg = HarnessConfig::for_outputs(&outputs, precision);
            cfg.noise = 0.0;
            let init = rng.gen_range(0..3 * period);
            let step = init + rng.gen_range(2 * period..6 * period);
            let mut board = OutputBoard::new();
            for &o in &outputs {
                board.set_indicator(o, 0, false);
            }
            board.set_indicator(0, step, true);
            let on = cfg.channels[0].on_profile();
            let mut schedule = outputs.clone();
            schedule.shuffle(&mut rng);
            let mut harness = Harness::new(&cfg, SimulatedBackend::new(&board, 0, 0.0)).map_err(|e| e.to_string())?;
            harness.init_all(init);
            let from = init + rng.gen_range(0..period);
            let readings = harness
                .poll_all(&schedule, from, step + 10 * period)
                .map_err(|e| e.to_string())?;
            let polls: Vec<(Micros, bool)> = readings
                .iter()
                .filter(|r| r.channel == 0 && !r.stale)
                .map(|r| (r.timestamp, [r.red, r.green, r.blue] == on))
                .collect();
            let gap = polls.windows(2).map(|w| w[1].0 - w[0].0).max().unwrap_or(0);
            let Some(first_on) = polls.iter().position(|p| p.1) else {
                late += 1;
                continue;
            };
            if polls[first_on..].iter().any(|p| !p.1) {
                flicker += 1;
            }
            let t = polls[first_on].0;
            if t < next_boundary(init, period, step) {
                early += 1;
            }
            if t - step > 2 * period + gap {
                late += 1;
            }
            worst = worst.max(t - step);
        }
        ok &= early == 0 && late == 0 && flicker == 0;
        details.push(format!(
            "{precision:?}: {TIMING_CASES} steps, worst lag {worst} us, early {early}, late {late}, flicker {flicker}"
        ));
    }
    check(ok, details.join("; "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("brute-force sweep schedule", brute_sweep_schedule),
        ("indicator discovery", indicator_discovery),
        ("minimization correctness", minimization_correctness),
        ("omission blacklist", omission_blacklist),
        ("extended-id bypass", extended_bypass),
        ("nonce desync", nonce_desync),
        ("classifier properties", classifier_properties),
        ("campaign determinism", campaign_determinism),
        ("sensor timing", sensor_timing),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let (tag, detail) = match verdict {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} {name}: {tag} ({detail}) [{:.1?}]", i + 1, started.elapsed());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
