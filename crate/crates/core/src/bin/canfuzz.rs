use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use log::error;

use canfuzz::campaign::{execute, CampaignConfig, MapEntry, StrategyKind, EXIT_CONFIG};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Verb {
    Random,
    Brute,
    Mutate,
    Replay,
    Identify,
    Omit,
    Auto,
}

impl From<Verb> for StrategyKind {
    fn from(v: Verb) -> Self {
        match v {
            Verb::Random => StrategyKind::Random,
            Verb::Brute => StrategyKind::Brute,
            Verb::Mutate => StrategyKind::Mutate,
            Verb::Replay => StrategyKind::Replay,
            Verb::Identify => StrategyKind::Identify,
            Verb::Omit => StrategyKind::Omit,
            Verb::Auto => StrategyKind::Auto,
        }
    }
}

/// Fuzz simulated CAN control units and watch their outputs.
#[derive(Debug, Parser)]
#[command(name = "canfuzz", version)]
struct Cli {
    /// Strategy to run.
    #[arg(value_enum)]
    verb: Verb,

    /// Frame pattern, e.g. `1A0 ..FF` or `... FFFFFFFF`.
    pattern: Vec<String>,

    /// Message trail for replay, identify and omit.
    #[arg(short = 'f', long = "file")]
    file: Option<PathBuf>,

    /// Campaign config; the bundled cluster is used without one.
    #[arg(short, long)]
    config: Option<PathBuf>,

    #[arg(long)]
    delay_ms: Option<u64>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    blacklist: Option<PathBuf>,

    #[arg(long)]
    max_messages: Option<u64>,

    /// Use 29-bit identifiers.
    #[arg(long)]
    extended: bool,

    /// Normal traffic for the omission pre-pass of `auto`.
    #[arg(long)]
    baseline: Option<PathBuf>,

    /// Output to chase in identify and omit.
    #[arg(long)]
    channel: Option<u16>,

    /// Minimize every activation after a generating run.
    #[arg(long)]
    auto_identify: bool,

    #[arg(long)]
    out_dir: Option<PathBuf>,

    /// Print the seeded output map of the targets and exit.
    #[arg(long)]
    ground_truth: bool,
}

fn absolute(p: &Path) -> PathBuf {
    std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
}

fn configure(cli: &Cli) -> Result<CampaignConfig, String> {
    let mut cfg = match &cli.config {
        Some(p) => CampaignConfig::load(p).map_err(|e| e.to_string())?,
        None => CampaignConfig {
            base_dir: absolute(Path::new(".")),
            ..CampaignConfig::default()
        },
    };
    cfg.strategy = Some(cli.verb.into());
    if !cli.pattern.is_empty() {
        cfg.fuzz.pattern = Some(cli.pattern.join(" "));
    }
    if let Some(f) = &cli.file {
        cfg.fuzz.input = Some(absolute(f));
    }
    if let Some(b) = &cli.blacklist {
        cfg.fuzz.blacklist = Some(absolute(b));
    }
    if let Some(b) = &cli.baseline {
        cfg.fuzz.baseline = Some(absolute(b));
    }
    if let Some(d) = cli.delay_ms {
        cfg.fuzz.delay_ms = d;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = cli.max_messages {
        cfg.fuzz.max_messages = m;
    }
    if cli.extended {
        cfg.fuzz.extended = true;
    }
    if let Some(c) = cli.channel {
        cfg.identify.channel = Some(c);
    }
    if cli.auto_identify {
        cfg.identify.auto = true;
    }
    if let Some(d) = &cli.out_dir {
        cfg.output.dir = Some(absolute(d));
    }
    Ok(cfg)
}

fn print_ground_truth(cfg: &CampaignConfig) -> Result<(), String> {
    let targets = cfg.targets().map_err(|e| e.to_string())?;
    for g in targets.ground_truth() {
        let m = MapEntry {
            channel: g.channel,
            id: g.trigger.id,
            extended: false,
            byte: g.trigger.byte,
            bit: g.trigger.bit,
            active_high: !g.default_on,
        };
        match g.arm {
            Some(a) => println!("{m} arm {:03X} {} {}", a.id, a.byte, a.bit),
            None => println!("{m}"),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match configure(&cli) {
        Ok(c) => c,
        Err(e) => {
            error!("{e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    if cli.ground_truth {
        return match print_ground_truth(&cfg) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                error!("{e}");
                ExitCode::from(EXIT_CONFIG as u8)
            }
        };
    }
    ExitCode::from(execute(&cfg) as u8)
}
