//! Command-line runner for the rate-distortion, quantization and equalizer
//! experiments.

mod config;
mod error;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Command, Experiment, ExperimentConfig};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "gausspred", version, about = "Gaussian rate-distortion by prediction: experiments and verification")]
struct Cli {
    #[command(subcommand)]
    command: CommandArg,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum CommandArg {
    /// Rate-distortion curve by water-filling.
    RdfCurve,
    /// Predictive test-channel simulation over a distortion ladder.
    Simulate,
    /// Entropy-coded dithered lattice quantization, in a prediction loop or open loop.
    Ecdq,
    /// Noise-prediction decision-feedback equalizer on an ISI channel.
    Dfe,
    /// DPCM and D*PCM prediction gains.
    Gains,
    /// Full acceptance suite.
    VerifyAll,
}

impl From<CommandArg> for Command {
    fn from(c: CommandArg) -> Self {
        match c {
            CommandArg::RdfCurve => Command::RdfCurve,
            CommandArg::Simulate => Command::Simulate,
            CommandArg::Ecdq => Command::Ecdq,
            CommandArg::Dfe => Command::Dfe,
            CommandArg::Gains => Command::Gains,
            CommandArg::VerifyAll => Command::VerifyAll,
        }
    }
}

/// Flags that take precedence over the config file.
#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for the report and CSV tables.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    fir_taps: Option<usize>,
    #[arg(long, global = true)]
    predictor_order: Option<usize>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true)]
    grid_size: Option<usize>,
    /// ECDQ lattice: scalar, zK or d4.
    #[arg(long, global = true)]
    lattice: Option<String>,
    /// ECDQ lattice scale for open-loop quantization.
    #[arg(long, global = true)]
    delta: Option<f64>,
    #[arg(long, global = true)]
    context_order: Option<usize>,
    /// Interleaving depth of a single source across the lattice dimensions.
    #[arg(long, global = true)]
    interleave: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(g) = self.grid_size {
            cfg.grid_size = g;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        let command = config::name(match &cfg.experiment {
            Experiment::RdfCurve(_) => Command::RdfCurve,
            Experiment::Simulate(_) => Command::Simulate,
            Experiment::Ecdq(_) => Command::Ecdq,
            Experiment::Dfe(_) => Command::Dfe,
            Experiment::Gains(_) => Command::Gains,
            Experiment::VerifyAll(_) => Command::VerifyAll,
        });
        let unsupported = |flag: &str| CliError::config(Some(format!("--{flag}")), format!("--{flag} does not apply to {command}"));
        let sim_flags = [("samples", self.samples.is_some()), ("fir-taps", self.fir_taps.is_some()), ("predictor-order", self.predictor_order.is_some())];
        let ecdq_flags = [
            ("lattice", self.lattice.is_some()),
            ("delta", self.delta.is_some()),
            ("context-order", self.context_order.is_some()),
            ("interleave", self.interleave.is_some()),
        ];
        let reject = |flags: &[(&str, bool)]| flags.iter().find(|f| f.1).map(|f| unsupported(f.0));
        let set = |slot: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        match &mut cfg.experiment {
            Experiment::RdfCurve(_) | Experiment::Gains(_) => {
                if let Some(e) = reject(&sim_flags).or_else(|| reject(&ecdq_flags)) {
                    return Err(e);
                }
            }
            Experiment::Simulate(p) => {
                if let Some(e) = reject(&ecdq_flags) {
                    return Err(e);
                }
                set(&mut p.samples, self.samples);
                set(&mut p.fir_taps, self.fir_taps);
                set(&mut p.predictor_order, self.predictor_order);
            }
            Experiment::Ecdq(p) => {
                set(&mut p.samples, self.samples);
                set(&mut p.fir_taps, self.fir_taps);
                set(&mut p.predictor_order, self.predictor_order);
                set(&mut p.context_order, self.context_order);
                set(&mut p.interleave, self.interleave);
                if let Some(l) = &self.lattice {
                    p.lattice = l.clone();
                }
                if self.delta.is_some() {
                    p.delta = self.delta;
                }
            }
            Experiment::Dfe(p) => {
                if let Some(e) = reject(&ecdq_flags) {
                    return Err(e);
                }
                set(&mut p.samples, self.samples);
                set(&mut p.fir_taps, self.fir_taps);
                set(&mut p.predictor_order, self.predictor_order);
            }
            Experiment::VerifyAll(v) => {
                if let Some(e) = reject(&ecdq_flags) {
                    return Err(e);
                }
                set(&mut v.samples, self.samples);
                set(&mut v.fir_taps, self.fir_taps);
                set(&mut v.predictor_order, self.predictor_order);
                v.seed = cfg.seed;
                v.grid_size = cfg.grid_size;
            }
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let err = CliError::config(None, e.to_string().trim_end());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    let command = Command::from(cli.command);
    let result = config::resolve(command, cli.overrides.config.as_deref(), &cli.overrides).and_then(|cfg| run::execute(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
