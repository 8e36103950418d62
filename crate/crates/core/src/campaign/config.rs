//! Campaign configuration file (TOML).
//!
//! ```toml
//! seed = 7
//! strategy = "brute"            # random | brute | mutate | replay | identify | omit | auto
//!
//! [fuzz]
//! delay_ms = 10
//! max_messages = 2048
//! pattern = "... FFFFFFFF"      # id digits, then payload digits; '.' is a wildcard
//! extended = false
//! input = "trail.log"           # message trail for replay / identify / omit
//! blacklist = "blacklist.txt"
//! baseline = "baseline.log"     # normal traffic; enables the omission pre-pass in auto
//!
//! [identify]
//! window = 100                  # candidate frames before the event
//! factor = 5                    # delay stretch for minimization replays
//! attribution_ms = 500
//! auto = false                  # minimize every activation after a run
//! channel = 6                   # event to chase for identify / omit
//! mutate_messages = 1500        # per-id budget of the mutation phase in auto
//!
//! [bus]
//! bitrate = 500000
//!
//! [harness]                     # defaults to one sensor per target output
//! precision = "p12"
//! mux_overhead_us = 100
//! noise = 0.02
//! [[harness.channel]]
//! id = 0
//! mux_address = 0
//! mux_channel = 0
//! indicator = 0
//!
//! [oracles]
//! threshold_level = 1200        # fallback classifier; derived from the off reading if absent
//! threshold_band = 300
//! [[oracles.heartbeat]]
//! name = "display"
//! channel = 40                  # or: frame = 0x7E8
//! period_ms = 250
//!
//! [targets]
//! cluster = "default"           # "default", a layout file, or an inline table
//! [targets.heartbeat]           # see HeartbeatEcuConfig
//! [targets.auth]                # see AuthEcuConfig
//! [targets.auth_sender]
//!
//! [output]
//! dir = "out"
//! log = "traffic.log"
//! events = "events.txt"
//! report = "report.txt"
//! ```
//!
//! Relative paths resolve against the directory of the config file.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

use crate::bus::{BusConfig, DEFAULT_BITRATE};
use crate::can_core::{parse_pattern, IdKind, LogError, PatternError, TrafficLog};
use crate::harness::{HarnessConfig, HarnessError, Precision, DEFAULT_MUX_OVERHEAD, DEFAULT_NOISE};
use crate::oracles::{OracleError, DEFAULT_ATTRIBUTION, DEFAULT_TOLERANCE};
use crate::sim_ecu::{
    AuthEcuConfig, AuthSenderConfig, ClusterLayout, HeartbeatEcuConfig, SimError, TargetSet,
};
use crate::strategies::{Blacklist, FuzzConfig, IdentifyOptions, StrategyError};
use crate::{ChannelId, Micros};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Target(#[from] SimError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{path}: {source}")]
    Log { path: PathBuf, source: LogError },
    #[error(transparent)]
    Strategy(#[from] StrategyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Random,
    Brute,
    Mutate,
    Replay,
    Identify,
    Omit,
    Auto,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::Random,
        StrategyKind::Brute,
        StrategyKind::Mutate,
        StrategyKind::Replay,
        StrategyKind::Identify,
        StrategyKind::Omit,
        StrategyKind::Auto,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::Brute => "brute",
            StrategyKind::Mutate => "mutate",
            StrategyKind::Replay => "replay",
            StrategyKind::Identify => "identify",
            StrategyKind::Omit => "omit",
            StrategyKind::Auto => "auto",
        }
    }

    /// Strategies that work on a recorded message trail.
    pub fn needs_input(self) -> bool {
        matches!(self, StrategyKind::Replay | StrategyKind::Identify | StrategyKind::Omit)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown strategy {s:?}")))
    }
}

fn d_delay() -> u64 {
    crate::strategies::DEFAULT_DELAY_MS
}
fn d_max() -> u64 {
    1_000
}
fn d_window() -> usize {
    100
}
fn d_factor() -> u64 {
    5
}
fn d_attribution() -> u64 {
    DEFAULT_ATTRIBUTION / 1_000
}
fn d_mutate() -> u64 {
    1_500
}
fn d_bitrate() -> u32 {
    DEFAULT_BITRATE
}
fn d_overhead() -> Micros {
    DEFAULT_MUX_OVERHEAD
}
fn d_noise() -> f64 {
    DEFAULT_NOISE
}
fn d_debounce() -> usize {
    1
}
fn d_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuzzSection {
    #[serde(default = "d_delay")]
    pub delay_ms: u64,
    #[serde(default = "d_max")]
    pub max_messages: u64,
    #[serde(default)]
    pub pattern: Option<String>,
    #[serde(default)]
    pub extended: bool,
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub blacklist: Option<PathBuf>,
    #[serde(default)]
    pub baseline: Option<PathBuf>,
    /// Constant gap for `replay`; the recorded gaps are kept when absent.
    #[serde(default)]
    pub replay_delay_ms: Option<u64>,
}

impl Default for FuzzSection {
    fn default() -> Self {
        toml::from_str("").expect("all fields default")
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifySection {
    #[serde(default = "d_window")]
    pub window: usize,
    #[serde(default = "d_factor")]
    pub factor: u64,
    #[serde(default = "d_attribution")]
    pub attribution_ms: u64,
    #[serde(default)]
    pub auto: bool,
    #[serde(default)]
    pub channel: Option<ChannelId>,
    #[serde(default = "d_mutate")]
    pub mutate_messages: u64,
}

impl Default for IdentifySection {
    fn default() -> Self {
        toml::from_str("").expect("all fields default")
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusSection {
    #[serde(default = "d_bitrate")]
    pub bitrate: u32,
}

impl Default for BusSection {
    fn default() -> Self {
        BusSection { bitrate: d_bitrate() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessSection {
    #[serde(default)]
    pub precision: Precision,
    #[serde(default = "d_overhead")]
    pub mux_overhead_us: Micros,
    #[serde(default = "d_noise")]
    pub noise: f64,
    #[serde(default, rename = "channel")]
    pub channels: Vec<crate::harness::SensorChannel>,
}

impl Default for HarnessSection {
    fn default() -> Self {
        toml::from_str("").expect("all fields default")
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeartbeatOracleConfig {
    pub name: String,
    /// Output whose pulses count as beats (each off-to-on change is one).
    #[serde(default)]
    pub channel: Option<ChannelId>,
    /// Or a frame id seen on the bus.
    #[serde(default)]
    pub frame: Option<u32>,
    pub period_ms: u64,
    #[serde(default = "d_tolerance")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    #[serde(default)]
    pub threshold_level: Option<i64>,
    #[serde(default)]
    pub threshold_band: Option<i64>,
    #[serde(default = "d_debounce")]
    pub debounce: usize,
    #[serde(default)]
    pub heartbeat: Vec<HeartbeatOracleConfig>,
}

impl Default for OracleSection {
    fn default() -> Self {
        toml::from_str("").expect("all fields default")
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ClusterSource {
    File(String),
    Inline(ClusterLayout),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsSection {
    #[serde(default)]
    pub cluster: Option<ClusterSource>,
    #[serde(default)]
    pub heartbeat: Option<HeartbeatEcuConfig>,
    #[serde(default)]
    pub auth: Option<AuthEcuConfig>,
    #[serde(default)]
    pub auth_sender: Option<AuthSenderConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "d_log")]
    pub log: PathBuf,
    #[serde(default = "d_events")]
    pub events: PathBuf,
    #[serde(default = "d_report")]
    pub report: PathBuf,
}

fn d_log() -> PathBuf {
    "traffic.log".into()
}
fn d_events() -> PathBuf {
    "events.txt".into()
}
fn d_report() -> PathBuf {
    "report.txt".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        toml::from_str("").expect("all fields default")
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub strategy: Option<StrategyKind>,
    #[serde(default)]
    pub fuzz: FuzzSection,
    #[serde(default)]
    pub identify: IdentifySection,
    #[serde(default)]
    pub bus: BusSection,
    #[serde(default)]
    pub harness: HarnessSection,
    #[serde(default)]
    pub oracles: OracleSection,
    #[serde(default)]
    pub targets: TargetsSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for CampaignConfig {
    /// The bundled cluster with default settings.
    fn default() -> Self {
        let mut c: CampaignConfig = toml::from_str("").expect("all fields default");
        c.targets.cluster = Some(ClusterSource::File("default".into()));
        c.base_dir = PathBuf::from(".");
        c
    }
}

impl CampaignConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut c: CampaignConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        c.base_dir = base_dir.to_path_buf();
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn kind(&self) -> IdKind {
        if self.fuzz.extended {
            IdKind::Extended
        } else {
            IdKind::Standard
        }
    }

    pub fn bus_config(&self) -> Result<BusConfig, ConfigError> {
        if self.bus.bitrate == 0 {
            return Err(ConfigError::Invalid("bus bitrate must be positive".into()));
        }
        Ok(BusConfig {
            bitrate: self.bus.bitrate,
            record_trace: true,
        })
    }

    pub fn targets(&self) -> Result<TargetSet, ConfigError> {
        let cluster = match &self.targets.cluster {
            None => None,
            Some(ClusterSource::Inline(l)) => Some(l.clone()),
            Some(ClusterSource::File(f)) if f == "default" => Some(ClusterLayout::default_layout()),
            Some(ClusterSource::File(f)) => {
                let path = self.resolve_path(Path::new(f));
                let text = fs::read_to_string(&path).map_err(|source| ConfigError::Io { path, source })?;
                Some(ClusterLayout::from_toml(&text)?)
            }
        };
        let set = TargetSet {
            cluster,
            heartbeat: self.targets.heartbeat.clone(),
            auth: self.targets.auth.clone(),
            auth_sender: self.targets.auth_sender.clone(),
        };
        set.validate()?;
        if set.output_channels().is_empty() {
            return Err(ConfigError::Invalid("no targets declared".into()));
        }
        Ok(set)
    }

    /// Declared sensors, or one per target output.
    pub fn harness_config(&self, targets: &TargetSet) -> Result<HarnessConfig, ConfigError> {
        let mut h = if self.harness.channels.is_empty() {
            HarnessConfig::for_outputs(&targets.output_channels(), self.harness.precision)
        } else {
            HarnessConfig {
                channels: self.harness.channels.clone(),
                ..HarnessConfig::default()
            }
        };
        h.mux_overhead_us = self.harness.mux_overhead_us;
        h.noise = self.harness.noise;
        h.validate()?;
        let outputs = targets.output_channels();
        for c in &h.channels {
            if !outputs.contains(&c.indicator) {
                return Err(ConfigError::Invalid(format!(
                    "sensor {} watches output {}, which no target drives",
                    c.id, c.indicator
                )));
            }
        }
        Ok(h)
    }

    pub fn blacklist(&self) -> Result<Blacklist, ConfigError> {
        match &self.fuzz.blacklist {
            None => Ok(Blacklist::new()),
            Some(p) => Ok(Blacklist::load(&self.resolve_path(p))?),
        }
    }

    pub fn fuzz_config(&self) -> Result<FuzzConfig, ConfigError> {
        let pattern = self
            .fuzz
            .pattern
            .as_deref()
            .map(|p| parse_pattern(p, self.kind()))
            .transpose()?;
        let cfg = FuzzConfig {
            delay_ms: self.fuzz.delay_ms,
            seed: self.seed,
            max_messages: self.fuzz.max_messages,
            pattern,
            kind: self.kind(),
            blacklist: self.blacklist()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn identify_options(&self) -> Result<IdentifyOptions, ConfigError> {
        if self.identify.window == 0 || self.identify.factor == 0 {
            return Err(ConfigError::Invalid("identify window and factor must be positive".into()));
        }
        Ok(IdentifyOptions {
            window: self.identify.window,
            delay: self.fuzz.delay_ms * 1_000,
            factor: self.identify.factor,
            blacklist: self.blacklist()?,
        })
    }

    fn load_log(&self, p: &Path) -> Result<TrafficLog, ConfigError> {
        let path = self.resolve_path(p);
        TrafficLog::load(&path).map_err(|source| ConfigError::Log { path, source })
    }

    pub fn input_log(&self) -> Result<Option<TrafficLog>, ConfigError> {
        self.fuzz.input.as_deref().map(|p| self.load_log(p)).transpose()
    }

    pub fn baseline_log(&self) -> Result<Option<TrafficLog>, ConfigError> {
        self.fuzz.baseline.as_deref().map(|p| self.load_log(p)).transpose()
    }

    pub fn output_dir(&self) -> PathBuf {
        match &self.output.dir {
            Some(d) => self.resolve_path(d),
            None => self.base_dir.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = CampaignConfig::default();
        assert_eq!(c.fuzz.delay_ms, 10);
        assert_eq!(c.identify.window, 100);
        assert_eq!(c.identify.factor, 5);
        assert_eq!(c.identify.attribution_ms, 500);
        let t = c.targets().unwrap();
        assert_eq!(t.ground_truth().len(), 12);
        let h = c.harness_config(&t).unwrap();
        assert_eq!(h.channels.len(), 12);
    }

    #[test]
    fn full_file() {
        let text = r#"
            seed = 3
            strategy = "auto"
            [fuzz]
            pattern = "... FFFFFFFF"
            [targets.heartbeat]
            alive_channel = 30
            [[targets.heartbeat.required]]
            id = 0x0C0
            period_ms = 50
            [targets.auth]
            key = "00112233"
            app_id = 0x123
            auth_id = 0x124
            display_channel = 40
            [targets.auth.bugs]
            ext_id_bypass = true
            [[oracles.heartbeat]]
            name = "display"
            channel = 40
            period_ms = 250
        "#;
        let c = CampaignConfig::parse(text, Path::new(".")).unwrap();
        assert_eq!(c.strategy, Some(StrategyKind::Auto));
        let t = c.targets().unwrap();
        assert_eq!(t.output_channels(), [30, 40]);
        assert!(t.auth.unwrap().bugs.ext_id_bypass);
        assert_eq!(c.fuzz_config().unwrap().pattern.unwrap().space_size(), 2048);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            CampaignConfig::parse("bogus = 1", Path::new(".")),
            Err(ConfigError::Syntax(_))
        ));
        let c = CampaignConfig::parse("[fuzz]\npattern = \"1234 00\"", Path::new(".")).unwrap();
        assert!(matches!(c.fuzz_config(), Err(ConfigError::Pattern(_))));
        let c = CampaignConfig::parse("", Path::new(".")).unwrap();
        assert!(matches!(c.targets(), Err(ConfigError::Invalid(_))));
        assert!("fuzzy".parse::<StrategyKind>().is_err());
    }
}
