//! `xtalk-quant`: rate loss of quantized zero-forcing crosstalk precoders.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical or channel
//! error, 4 bound precondition error.

mod commands;
mod error;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xtalk_core::monte_carlo::Statistic;
use xtalk_core::precoding::E2Model;

use crate::commands::{ToneTarget, WhichBound};
use crate::error::{CliError, EXIT_CONFIG};
use crate::scenario::Scenario;

#[derive(Parser)]
#[command(name = "xtalk-quant", version, about = "Rate loss of quantized crosstalk precoders in DSL binders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a Werner-model channel and write it to a matrix file.
    SynthChannel {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Print the grid, row dominance and fitted parameters of a channel file.
    InspectChannel {
        /// Channel file; defaults to the scenario's.
        path: Option<PathBuf>,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Exact per-tone and band rate loss for one perturbation draw.
    Analyze {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Bound-versus-word-length curves.
    Bound {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_enum, default_value = "all")]
        which: WhichBound,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Smallest word length meeting a loss target.
    DesignBits {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Per-tone loss target in bit/s/Hz.
        #[arg(long, conflicts_with = "target_relative", required_unless_present = "target_relative")]
        target_tone: Option<f64>,
        /// Restrict the per-tone design to the tone at this frequency.
        #[arg(long, requires = "target_tone")]
        freq: Option<f64>,
        /// Relative band-loss target, e.g. 0.01.
        #[arg(long)]
        target_relative: Option<f64>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo rate loss over random perturbations.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// No quantization and no estimation error.
        #[arg(long)]
        zero_errors: bool,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Required word length against loop length.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_delimiter = ',', default_value = "300,600,900,1200")]
        lengths: Vec<f64>,
        #[arg(long, default_value_t = 0.01)]
        tau: f64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum E2Arg {
    Rounding,
    Uniform,
    Zero,
}

impl From<E2Arg> for E2Model {
    fn from(a: E2Arg) -> Self {
        match a {
            E2Arg::Rounding => E2Model::DeterministicRounding,
            E2Arg::Uniform => E2Model::UniformRandom,
            E2Arg::Zero => E2Model::Zero,
        }
    }
}

fn parse_statistic(s: &str) -> Result<Statistic, String> {
    match s {
        "worst" | "worst_case" => Ok(Statistic::WorstCase),
        "mean" => Ok(Statistic::Mean),
        _ => s
            .strip_prefix('q')
            .and_then(|q| q.parse::<f64>().ok())
            .map(Statistic::Quantile)
            .ok_or_else(|| format!("expected worst, mean or q<fraction>, got {s}")),
    }
}

/// Scenario file plus flag overrides.
#[derive(Args, Default)]
struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Channel matrix file instead of synthesis.
    #[arg(long)]
    channel: Option<PathBuf>,
    /// Channel synthesis seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    length: Option<f64>,
    #[arg(long)]
    band: Option<f64>,
    #[arg(long)]
    decimation: Option<usize>,
    #[arg(long)]
    users: Option<usize>,
    /// Transmit PSD, dBm/Hz.
    #[arg(long, allow_negative_numbers = true)]
    psd: Option<f64>,
    /// Noise PSD, dBm/Hz.
    #[arg(long, allow_negative_numbers = true)]
    noise: Option<f64>,
    /// Shannon gap, dB.
    #[arg(long)]
    gap: Option<f64>,
    /// Bits per real or imaginary precoder component.
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long, value_enum)]
    e2: Option<E2Arg>,
    #[arg(long, overrides_with = "no_normalize")]
    normalize: bool,
    #[arg(long)]
    no_normalize: bool,
    /// Seed for quantization and estimation errors.
    #[arg(long)]
    trial_seed: Option<u64>,
    /// Training symbols per channel estimate.
    #[arg(long)]
    csi_samples: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Word lengths simulated on shared draws.
    #[arg(long, value_delimiter = ',')]
    trial_bits: Option<Vec<u32>>,
    /// worst, mean or q<fraction> such as q0.99.
    #[arg(long, value_parser = parse_statistic)]
    statistic: Option<Statistic>,
    #[arg(long)]
    skip_failures: bool,
    #[arg(long)]
    d_min: Option<u32>,
    #[arg(long)]
    d_max: Option<u32>,
    /// Row-dominance intercept at the reference length.
    #[arg(long)]
    gamma1: Option<f64>,
    /// Row-dominance slope per Hz at the reference length.
    #[arg(long)]
    gamma2: Option<f64>,
}

impl ScenarioArgs {
    fn resolve(&self) -> Result<Scenario, CliError> {
        let mut s = match &self.config {
            Some(path) => Scenario::load(path)?,
            None => Scenario::default(),
        };
        let ch = &mut s.channel;
        if let Some(path) = &self.channel {
            ch.file = Some(path.clone());
        }
        set(&mut ch.seed, self.seed);
        set(&mut ch.length_m, self.length);
        set(&mut ch.band_hz, self.band);
        set(&mut ch.decimation, self.decimation);
        set(&mut ch.users, self.users);
        let b = &mut s.budget;
        set(&mut b.psd_dbm_hz, self.psd);
        if self.psd.is_some() {
            b.psd_per_user_dbm_hz = None;
        }
        set(&mut b.noise_dbm_hz, self.noise);
        set(&mut b.gap_db, self.gap);
        let p = &mut s.perturbation;
        set(&mut p.d_bits, self.bits);
        if let Some(model) = self.e2 {
            p.e2_model = Some(model.into());
        }
        if self.normalize {
            p.normalize = Some(true);
        }
        if self.no_normalize {
            p.normalize = Some(false);
        }
        set(&mut p.seed, self.trial_seed);
        if self.csi_samples.is_some() {
            p.csi_samples = self.csi_samples;
        }
        let touches_trials =
            self.trials.is_some() || self.trial_bits.is_some() || self.statistic.is_some() || self.skip_failures;
        if touches_trials {
            let mut t = s.trials();
            set(&mut t.n, self.trials);
            if self.trial_bits.is_some() {
                t.d_bits = self.trial_bits.clone();
            }
            set(&mut t.statistic, self.statistic);
            t.skip_failures |= self.skip_failures;
            s.trials = Some(t);
        }
        set(&mut s.bound.d_min, self.d_min);
        set(&mut s.bound.d_max, self.d_max);
        if self.gamma1.is_some() {
            s.bound.gamma1 = self.gamma1;
        }
        if self.gamma2.is_some() {
            s.bound.gamma2 = self.gamma2;
        }
        Ok(s)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("XTALK_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("XTALK_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot size the thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::SynthChannel { scenario, out } => commands::synth_channel(&scenario.resolve()?, &out),
        Command::InspectChannel { path, scenario } => {
            let s = scenario.resolve()?;
            let path = path
                .or(s.channel.file)
                .ok_or_else(|| CliError::Config("no channel file given".into()))?;
            commands::inspect_channel(&path)
        }
        Command::Analyze { scenario, out } => commands::analyze(&scenario.resolve()?, out.as_deref()),
        Command::Bound { scenario, which, out } => commands::bound(&scenario.resolve()?, which, out.as_deref()),
        Command::DesignBits {
            scenario,
            target_tone,
            freq,
            target_relative,
            out,
        } => {
            let target = match (target_tone, target_relative) {
                (Some(t), None) => ToneTarget::Tone { t, freq },
                (None, Some(tau)) => ToneTarget::Relative { tau },
                _ => unreachable!("clap enforces exactly one target"),
            };
            commands::design_bits(&scenario.resolve()?, target, out.as_deref())
        }
        Command::Simulate {
            scenario,
            zero_errors,
            out,
        } => {
            let mut s = scenario.resolve()?;
            if zero_errors {
                commands::zero_errors(&mut s);
            }
            commands::simulate(&s, out.as_deref())
        }
        Command::Sweep {
            scenario,
            lengths,
            tau,
            out,
        } => commands::sweep(&scenario.resolve()?, &lengths, tau, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
