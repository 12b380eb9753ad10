//! Command-line front end. The binary is a thin wrapper around [`run`].
//!
//! Exit codes: 0 success, 1 a check or per-file step failed, 2 usage or I/O error.

mod commands;
mod config;

pub use commands::{evaluate_pair, EvalRow, EVAL_CSV_HEADER};
pub use config::{EnhanceConfig, GradcheckConfig, Method, RunConfig, SimulateConfig, CONFIG_ENV};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::gradcheck::GradBlock;
use crate::scene::synth::NoiseKind;
use crate::scene::Split;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "wtformer-lab", version, about = "Multichannel speech enhancement lab")]
struct Cli {
    /// TOML run configuration. Flags override it; it overrides built-in defaults.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a reverberant multichannel dataset from a speech corpus.
    Simulate(SimulateArgs),
    /// Run an enhancement method over a simulated dataset.
    Enhance(EnhanceArgs),
    /// Score enhanced outputs against the targets.
    Evaluate(EvaluateArgs),
    /// Wideband MUSIC spectrum of a multichannel WAV.
    Music(MusicArgs),
    /// Finite-difference check of the hand-written gradients.
    Gradcheck(GradcheckArgs),
    /// Per-module parameter table of the network.
    Describe(DescribeArgs),
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::ALL
        .into_iter()
        .find(|sp| sp.as_str() == s)
        .ok_or_else(|| format!("unknown split {s:?} (train, val, test)"))
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Directory of 16 kHz WAV/FLAC utterances.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    noise: Option<NoiseArg>,
    #[arg(long)]
    noise_dir: Option<PathBuf>,
    #[arg(long)]
    anechoic: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum NoiseArg {
    White,
    Pink,
    Babble,
}

impl From<NoiseArg> for NoiseKind {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::White => NoiseKind::White,
            NoiseArg::Pink => NoiseKind::Pink,
            NoiseArg::Babble => NoiseKind::Babble,
        }
    }
}

#[derive(Debug, Args)]
struct EnhanceArgs {
    /// Dataset directory written by `simulate`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    #[arg(long, value_parser = parse_split)]
    split: Option<Split>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Use freshly initialised weights even if a checkpoint is configured.
    #[arg(long)]
    random_init: bool,
    #[arg(long)]
    dump_weights: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Directory written by `enhance`.
    #[arg(long)]
    enhanced: Option<PathBuf>,
    /// Dataset directory written by `simulate`.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, value_parser = parse_split)]
    split: Option<Split>,
}

#[derive(Debug, Args)]
struct MusicArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    pgm: Option<PathBuf>,
    /// Scene JSON; the peak is checked against its speech direction.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    tolerance_deg: f64,
    #[arg(long)]
    n_sources: Option<usize>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Blocks to check; all when omitted.
    #[arg(long = "block")]
    blocks: Vec<GradBlock>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct DescribeArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

/// Failure of a whole invocation.
#[derive(Debug)]
pub(crate) enum Failure {
    /// Bad arguments, unreadable inputs, invalid configuration.
    Usage(String),
    /// The run finished but something it checks did not hold.
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T, Failure> {
    v.ok_or_else(|| Failure::Usage(format!("missing required flag --{flag}")))
}

fn effective_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::Simulate(a) => {
            if let Some(s) = a.seed {
                cfg.dataset.seed = s;
            }
            if let Some(n) = a.noise {
                cfg.simulate.noise = n.into();
            }
            if let Some(d) = &a.noise_dir {
                cfg.simulate.noise_dir = Some(d.clone());
            }
            cfg.simulate.anechoic |= a.anechoic;
        }
        Command::Enhance(a) => {
            if let Some(m) = a.method {
                cfg.enhance.method = m;
            }
            if let Some(c) = &a.checkpoint {
                cfg.enhance.checkpoint = Some(c.clone());
            }
            if a.random_init {
                cfg.enhance.checkpoint = None;
            }
            cfg.enhance.dump_weights |= a.dump_weights;
        }
        Command::Music(a) => {
            if let Some(n) = a.n_sources {
                cfg.music.n_sources = n;
            }
        }
        Command::Gradcheck(a) => {
            if let Some(s) = a.seed {
                cfg.gradcheck.seed = s;
            }
        }
        Command::Evaluate(_) | Command::Describe(_) => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let cfg = effective_config(&cli)?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    match cli.command {
        Command::Simulate(a) => commands::simulate(&cfg, &required(a.corpus, "corpus")?, &required(a.out, "out")?),
        Command::Enhance(a) => commands::enhance(&cfg, &required(a.data, "data")?, &required(a.out, "out")?, a.split),
        Command::Evaluate(a) => commands::evaluate(
            &required(a.enhanced, "enhanced")?,
            &required(a.reference, "reference")?,
            &required(a.csv, "csv")?,
            a.split,
        ),
        Command::Music(a) => commands::music(
            &cfg,
            &required(a.input, "input")?,
            a.csv.as_deref(),
            a.pgm.as_deref(),
            a.scene.as_deref(),
            a.tolerance_deg,
        ),
        Command::Gradcheck(a) => commands::gradcheck(&cfg, &a.blocks),
        Command::Describe(a) => commands::describe(&cfg, a.checkpoint.as_deref()),
    }
}

/// Parses `args` (program name first) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            EXIT_CHECK_FAILED
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
    }
}
