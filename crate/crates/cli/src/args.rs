use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hdrstack::system::{Topology, WeightMode};
use hdrstack::MergeMode;
use serde::Deserialize;

use crate::CliError;

#[derive(Parser)]
#[command(
    name = "hdrstack",
    version,
    about = "Exposure-ratio estimation and HDR merging for bracketed image stacks"
)]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// JSON file supplying defaults for tuning flags; explicit flags win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Estimate corrective exposure ratios for a stack and write a report
    Estimate(EstimateArgs),
    /// Merge a stack into an HDR radiance map (PFM) plus a saturation mask
    Merge(MergeArgs),
    /// Render a synthetic scene and write a simulated capture stack
    Simulate(SimulateArgs),
    /// Run the synthetic evaluation protocol and write a report
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightsArg {
    Uniform,
    CalibrationFree,
    Calibrated,
}

impl WeightsArg {
    pub fn name(self) -> &'static str {
        match self {
            WeightsArg::Uniform => "uniform",
            WeightsArg::CalibrationFree => "calibration-free",
            WeightsArg::Calibrated => "calibrated",
        }
    }
}

impl From<WeightsArg> for WeightMode {
    fn from(w: WeightsArg) -> WeightMode {
        match w {
            WeightsArg::Uniform => WeightMode::Uniform,
            WeightsArg::CalibrationFree => WeightMode::CalibrationFree,
            WeightsArg::Calibrated => WeightMode::Calibrated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyArg {
    GreedyMst,
    PairwiseChain,
}

impl TopologyArg {
    pub fn name(self) -> &'static str {
        match self {
            TopologyArg::GreedyMst => "greedy-mst",
            TopologyArg::PairwiseChain => "pairwise-chain",
        }
    }
}

impl From<TopologyArg> for Topology {
    fn from(t: TopologyArg) -> Topology {
        match t {
            TopologyArg::GreedyMst => Topology::GreedyMst,
            TopologyArg::PairwiseChain => Topology::PairwiseChain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Mean,
    InverseVariance,
}

impl ModeArg {
    pub fn name(self) -> &'static str {
        match self {
            ModeArg::Mean => "mean",
            ModeArg::InverseVariance => "inverse-variance",
        }
    }
}

impl From<ModeArg> for MergeMode {
    fn from(m: ModeArg) -> MergeMode {
        match m {
            ModeArg::Mean => MergeMode::Mean,
            ModeArg::InverseVariance => MergeMode::InverseVariance,
        }
    }
}

#[derive(Args)]
pub struct EstimateArgs {
    /// Input images (PFM), one per exposure.
    #[arg(long, num_args = 1.., required = true, value_name = "PFM")]
    pub stack: Vec<PathBuf>,

    /// Capture metadata sidecar: JSON array, one entry per image.
    #[arg(long, value_name = "JSON")]
    pub meta: PathBuf,

    /// Pair weighting scheme [default: calibration-free].
    #[arg(long, value_enum)]
    pub weights: Option<WeightsArg>,

    /// Noise profile: a JSON file or the built-in "canon-s100".
    #[arg(long, value_name = "PATH")]
    pub noise_profile: Option<String>,

    /// Gain setting to pick from the noise profile.
    #[arg(long)]
    pub iso: Option<u32>,

    /// Strength of the metadata prior [default: 10].
    #[arg(long)]
    pub lambda: Option<f64>,

    /// Square tile edge in pixels [default: 16].
    #[arg(long)]
    pub tile: Option<usize>,

    /// Equations kept per exposure pair per tile [default: 50].
    #[arg(long)]
    pub k: Option<usize>,

    /// Validity window as fractions of the white level [default: 0.01:0.95].
    #[arg(long, value_name = "LO:HI")]
    pub valid_range: Option<String>,

    /// Log-domain deviation bound for tile rejection; "inf" disables the
    /// motion pass [default: ln 1.5].
    #[arg(long, value_name = "X|inf")]
    pub outlier_threshold: Option<String>,

    /// Spanning structure used for pair selection [default: greedy-mst].
    #[arg(long, value_enum)]
    pub topology: Option<TopologyArg>,

    /// Report destination.
    #[arg(long, value_name = "JSON", default_value = "estimate.json")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct MergeArgs {
    /// Input images (PFM), one per exposure.
    #[arg(long, num_args = 1.., required = true, value_name = "PFM")]
    pub stack: Vec<PathBuf>,

    /// Capture metadata sidecar: JSON array, one entry per image.
    #[arg(long, value_name = "JSON")]
    pub meta: PathBuf,

    /// Estimate report produced by the estimate subcommand.
    #[arg(long, value_name = "JSON", conflicts_with = "use_exif")]
    pub estimate: Option<PathBuf>,

    /// Trust the metadata as-is instead of an estimate report.
    #[arg(long)]
    pub use_exif: bool,

    /// Sample combination rule [default: mean].
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,

    /// Noise profile: a JSON file or the built-in "canon-s100". Needed for
    /// inverse-variance weighting.
    #[arg(long, value_name = "PATH")]
    pub noise_profile: Option<String>,

    /// Gain setting to pick from the noise profile.
    #[arg(long)]
    pub iso: Option<u32>,

    /// Validity window as fractions of the white level [default: 0.01:0.95].
    #[arg(long, value_name = "LO:HI")]
    pub valid_range: Option<String>,

    /// Output radiance map (PFM).
    #[arg(long, value_name = "PFM")]
    pub out: PathBuf,

    /// Saturation mask destination [default: <out stem>_mask.pgm].
    #[arg(long, value_name = "PGM")]
    pub mask: Option<PathBuf>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Scene name; pass an unknown name to list the choices.
    #[arg(long)]
    pub scene: String,

    /// Exposure times in seconds, sorted ascending before use
    /// [default: 0.015625,0.125,1,8].
    #[arg(long, value_name = "T,T,..")]
    pub times: Option<String>,

    /// Gain setting for the sensor noise; omit for a noiseless render.
    #[arg(long)]
    pub iso: Option<u32>,

    /// Noise profile: a JSON file or the built-in "canon-s100".
    #[arg(long, value_name = "PATH")]
    pub noise_profile: Option<String>,

    /// Quantization depth in bits, or "none" [default: 14].
    #[arg(long, value_name = "BITS|none")]
    pub bit_depth: Option<String>,

    /// Relative error of the corrupted metadata copy [default: 0.15].
    #[arg(long)]
    pub corruption: Option<f64>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Side length of the square scenes [default: 512].
    #[arg(long)]
    pub size: Option<usize>,

    /// Height of the gradient scenes [default: 384].
    #[arg(long)]
    pub height: Option<usize>,

    /// Width of the gradient scenes [default: 2048].
    #[arg(long)]
    pub width: Option<usize>,

    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Gain settings to sweep [default: 100,200,400,800].
    #[arg(long, value_name = "ISO,ISO,..")]
    pub isos: Option<String>,

    /// Independent repetitions per scene and ISO cell [default: 20].
    #[arg(long)]
    pub seeds: Option<u32>,

    /// Scene subset by name [default: all].
    #[arg(long, value_name = "NAME,NAME,..")]
    pub scenes: Option<String>,

    /// External radiance maps (PFM) evaluated alongside (or instead of)
    /// the built-in scenes.
    #[arg(long, value_name = "PFM,PFM,..")]
    pub scene_files: Option<String>,

    /// Methods to score [default: all].
    #[arg(long, value_name = "NAME,NAME,..")]
    pub methods: Option<String>,

    /// Scene side length in pixels [default: 512].
    #[arg(long)]
    pub size: Option<usize>,

    /// Exposure times in seconds [default: 0.015625,0.125,1,8].
    #[arg(long, value_name = "T,T,..")]
    pub times: Option<String>,

    /// Quantization depth in bits [default: 14].
    #[arg(long)]
    pub bit_depth: Option<u32>,

    /// Relative metadata corruption level [default: 0.15].
    #[arg(long)]
    pub corruption: Option<f64>,

    /// Strength of the metadata prior [default: 10].
    #[arg(long)]
    pub lambda: Option<f64>,

    /// Square tile edge in pixels [default: 16].
    #[arg(long)]
    pub tile: Option<usize>,

    /// Equations kept per exposure pair per tile [default: 50].
    #[arg(long)]
    pub k: Option<usize>,

    /// Validity window as fractions of the white level [default: 0.01:0.95].
    #[arg(long, value_name = "LO:HI")]
    pub valid_range: Option<String>,

    /// Weighting used by both WLS methods [default: calibrated].
    #[arg(long, value_enum)]
    pub weights: Option<WeightsArg>,

    /// Base seed; every cell derives its own stream from it [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,

    /// Noise profile: a JSON file or the built-in "canon-s100".
    #[arg(long, value_name = "PATH")]
    pub noise_profile: Option<String>,

    /// Report destination (JSON).
    #[arg(long, value_name = "JSON", default_value = "eval_report.json")]
    pub out: PathBuf,

    /// Also write one CSV row per method and ISO.
    #[arg(long, value_name = "CSV")]
    pub csv: Option<PathBuf>,

    /// Also write gnuplot-style per-method blocks.
    #[arg(long, value_name = "DAT")]
    pub plot: Option<PathBuf>,

    /// Also run the gradient banding comparison and attach it to the report.
    #[arg(long)]
    pub banding: bool,

    /// Gain setting for the banding run [default: 800].
    #[arg(long)]
    pub banding_iso: Option<u32>,

    /// Gradient height for the banding run [default: 8192].
    #[arg(long)]
    pub banding_height: Option<usize>,

    /// Gradient width for the banding run [default: 128].
    #[arg(long)]
    pub banding_width: Option<usize>,

    /// Seed for the banding run [default: 13].
    #[arg(long)]
    pub banding_seed: Option<u64>,
}

/// Flag defaults read from --config. Every field is optional; an explicit
/// flag always wins over the file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub weights: Option<WeightsArg>,
    pub noise_profile: Option<String>,
    pub iso: Option<u32>,
    pub lambda: Option<f64>,
    pub tile: Option<usize>,
    pub k: Option<usize>,
    pub valid_range: Option<String>,
    pub outlier_threshold: Option<String>,
    pub topology: Option<TopologyArg>,
    pub mode: Option<ModeArg>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

pub fn load_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
}

pub fn parse_valid_range(s: &str) -> Result<(f64, f64), CliError> {
    let err = || {
        CliError::Usage(format!(
            "bad validity window \"{s}\": expected LO:HI with 0 <= LO < HI <= 1"
        ))
    };
    let (lo, hi) = s.split_once(':').ok_or_else(err)?;
    let lo: f64 = lo.trim().parse().map_err(|_| err())?;
    let hi: f64 = hi.trim().parse().map_err(|_| err())?;
    if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi && hi <= 1.0) {
        return Err(err());
    }
    Ok((lo, hi))
}

/// "inf" (or "none") disables tile rejection; otherwise a positive
/// natural-log deviation bound, e.g. 0.4055 for 50%.
pub fn parse_outlier_threshold(s: &str) -> Result<f64, CliError> {
    if s == "inf" || s == "none" {
        return Ok(f64::INFINITY);
    }
    let v: f64 = s.parse().map_err(|_| {
        CliError::Usage(format!("bad outlier threshold \"{s}\": expected a number or \"inf\""))
    })?;
    if !(v.is_finite() && v > 0.0) {
        return Err(CliError::Usage(format!(
            "bad outlier threshold {v}: must be positive (use \"inf\" to disable)"
        )));
    }
    Ok(v)
}

pub fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad {what} entry \"{}\"", t.trim())))
        })
        .collect()
}

pub fn parse_u32_list(s: &str, what: &str) -> Result<Vec<u32>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| CliError::Usage(format!("bad {what} entry \"{}\"", t.trim())))
        })
        .collect()
}

pub fn parse_bit_depth(s: &str) -> Result<Option<u32>, CliError> {
    if s == "none" {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| CliError::Usage(format!("bad bit depth \"{s}\": expected an integer or \"none\"")))
}
