//! Experiment configuration: file format, defaults and flag overrides.

use std::path::{Path, PathBuf};

use gausspred::spectra::{SpectrumKind, DEFAULT_GRID_SIZE};
use gausspred::verify::VerifyConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;
use crate::Overrides;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    RdfCurve,
    Simulate,
    Ecdq,
    Dfe,
    Gains,
    VerifyAll,
}

/// The on-disk layout: shared fields plus a command-specific `params` block.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: u32,
    seed: u64,
    #[serde(default = "default_grid")]
    grid_size: usize,
    #[serde(default)]
    out: Option<PathBuf>,
    command: Command,
    #[serde(default = "empty_object")]
    params: Value,
}

fn default_grid() -> usize {
    DEFAULT_GRID_SIZE
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

fn ar09() -> SpectrumKind<f64> {
    SpectrumKind::Ar { a: vec![0.9], sigma_w2: 1.0 }
}

fn default_ladder() -> Vec<f64> {
    vec![0.05, 0.1, 0.25, 1.0, 3.0]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RdfCurveParams {
    pub source: SpectrumKind<f64>,
    pub d_min: f64,
    pub d_max: f64,
    pub points: usize,
    /// Geometric instead of linear spacing.
    pub log_spacing: bool,
    /// Distortion of the water-filling overlay; none skips it.
    pub overlay_distortion: Option<f64>,
}

impl Default for RdfCurveParams {
    fn default() -> Self {
        Self { source: ar09(), d_min: 0.01, d_max: 5.0, points: 50, log_spacing: false, overlay_distortion: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub source: SpectrumKind<f64>,
    pub distortions: Vec<f64>,
    pub samples: usize,
    pub predictor_order: usize,
    pub fir_taps: usize,
    pub burn_in: Option<usize>,
    /// Leading samples of the first run written to `traces.csv`; 0 disables.
    pub trace_samples: usize,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            source: ar09(),
            distortions: default_ladder(),
            samples: 1_000_000,
            predictor_order: gausspred::prediction::DEFAULT_PREDICTOR_ORDER,
            fir_taps: gausspred::filters::DEFAULT_FIR_TAPS,
            burn_in: None,
            trace_samples: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EcdqParams {
    pub source: SpectrumKind<f64>,
    /// Target distortion of the prediction loops.
    pub distortions: Vec<f64>,
    /// Lattice scale for direct quantization of the source without
    /// feedback; replaces the loop runs when set.
    pub delta: Option<f64>,
    /// `scalar`, `zK` or `d4`.
    pub lattice: String,
    pub interleave: usize,
    pub context_order: usize,
    pub samples: usize,
    pub predictor_order: usize,
    pub fir_taps: usize,
}

impl Default for EcdqParams {
    fn default() -> Self {
        Self {
            source: ar09(),
            distortions: default_ladder(),
            delta: None,
            lattice: "scalar".into(),
            interleave: 1,
            context_order: 0,
            samples: 1_000_000,
            predictor_order: gausspred::prediction::DEFAULT_PREDICTOR_ORDER,
            fir_taps: gausspred::filters::DEFAULT_FIR_TAPS,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub isi_taps: Vec<f64>,
    pub noise: SpectrumKind<f64>,
    pub power: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DfeParams {
    pub channel: ChannelParams,
    pub samples: usize,
    pub predictor_order: usize,
    pub fir_taps: usize,
    /// Input powers of the analytic SNR curve; empty skips it.
    pub power_sweep: Vec<f64>,
}

impl Default for DfeParams {
    fn default() -> Self {
        Self {
            channel: ChannelParams {
                isi_taps: vec![1.0, 0.5],
                noise: SpectrumKind::White { sigma2: 1.0 },
                power: 4.0,
            },
            samples: 1_000_000,
            predictor_order: gausspred::prediction::DEFAULT_PREDICTOR_ORDER,
            fir_taps: gausspred::filters::DEFAULT_FIR_TAPS,
            power_sweep: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainsParams {
    pub source: SpectrumKind<f64>,
}

impl Default for GainsParams {
    fn default() -> Self {
        Self { source: ar09() }
    }
}

/// Parameters of one command, serialized adjacently as `command` + `params`.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "command", content = "params", rename_all = "kebab-case")]
pub enum Experiment {
    RdfCurve(RdfCurveParams),
    Simulate(SimulateParams),
    Ecdq(EcdqParams),
    Dfe(DfeParams),
    Gains(GainsParams),
    VerifyAll(VerifyConfig),
}

/// Fully resolved configuration, embedded in every report.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub grid_size: usize,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(flatten)]
    pub experiment: Experiment,
}

fn parse_params<P: DeserializeOwned>(value: Value) -> Result<P, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { "params".to_string() } else { format!("params.{path}") };
        CliError::config(Some(path), e.into_inner().to_string())
    })
}

fn experiment_from(command: Command, params: Value) -> Result<Experiment, CliError> {
    Ok(match command {
        Command::RdfCurve => Experiment::RdfCurve(parse_params(params)?),
        Command::Simulate => Experiment::Simulate(parse_params(params)?),
        Command::Ecdq => Experiment::Ecdq(parse_params(params)?),
        Command::Dfe => Experiment::Dfe(parse_params(params)?),
        Command::Gains => Experiment::Gains(parse_params(params)?),
        Command::VerifyAll => Experiment::VerifyAll(parse_params(params)?),
    })
}

/// Reads `path`, or starts from the defaults of `command`, then applies
/// flag overrides.
pub fn resolve(command: Command, path: Option<&Path>, flags: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::io(format!("cannot read config {}: {e}", p.display())))?;
            let mut de = serde_json::Deserializer::from_str(&text);
            let raw: RawConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
                let path = e.path().to_string();
                CliError::config((path != ".").then_some(path), e.into_inner().to_string())
            })?;
            if raw.schema_version != SCHEMA_VERSION {
                return Err(CliError::config(
                    Some("schema_version".into()),
                    format!("unsupported schema version {} (expected {SCHEMA_VERSION})", raw.schema_version),
                ));
            }
            if raw.command != command {
                return Err(CliError::config(
                    Some("command".into()),
                    format!("config is for '{}' but '{}' was invoked", name(raw.command), name(command)),
                ));
            }
            ExperimentConfig {
                schema_version: raw.schema_version,
                seed: raw.seed,
                grid_size: raw.grid_size,
                out: raw.out.unwrap_or_else(|| PathBuf::from("out")),
                experiment: experiment_from(command, raw.params)?,
            }
        }
        None => ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: DEFAULT_SEED,
            grid_size: DEFAULT_GRID_SIZE,
            out: PathBuf::from("out"),
            experiment: experiment_from(command, empty_object())?,
        },
    };
    flags.apply(&mut cfg)?;
    Ok(cfg)
}

pub fn name(command: Command) -> String {
    serde_json::to_value(command).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}
