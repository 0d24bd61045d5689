use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use rawvid::calib::StreamPolicy;
use rawvid::demosaic::DemosaicMethod;
use rawvid::flow::Interpolation;
use rawvid::CfaPattern;

#[derive(Debug, Parser)]
#[command(name = "rawvid", version, about = "Raw video denoising data pipeline")]
pub struct Cli {
    /// Seed of every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// `key = value` file of option defaults; explicit flags win. A run
    /// manifest also works.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Where to write the run manifest.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// sRGB PPM frames to a clean raw dataset.
    Unprocess(UnprocessArgs),
    /// Add synthetic noise to a raw dataset.
    AddNoise(AddNoiseArgs),
    /// Flat-field calibration of a noise model.
    CalibrateFlatfield(FlatfieldArgs),
    /// Estimate a noise level function from a raw dataset.
    EstimateNlf(EstimateNlfArgs),
    /// Fit an affine noise level function to a point cloud CSV.
    FitNlf(FitNlfArgs),
    /// Unprocess, calibrate and add noise in one run.
    MakeSynthetic(MakeSyntheticArgs),
    /// TV-L1 optical flow between two images.
    Flow(FlowArgs),
    /// Warp an image (or a raw mosaic) by a flow field.
    Warp(WarpArgs),
    /// Demosaic a raw PGM.
    Demosaic(DemosaicArgs),
    /// Sample a colour image through a CFA.
    Mosaic(MosaicArgs),
    /// Multi-frame-to-frame loss of a denoiser on a noisy dataset.
    Mf2fLoss(Mf2fArgs),
    /// Blind-spot (noisy-target) loss of a denoiser on a noisy dataset.
    BsLoss(BsLossArgs),
    /// Probe a denoiser's receptive field.
    ProbeRf(ProbeArgs),
    /// PSNR / SSIM of a denoised dataset against a reference.
    Eval(EvalArgs),
    /// Keep one frame in `stride`.
    Subsample(SubsampleArgs),
    /// Average static sequences into constant ground-truth videos.
    AvgGt(AvgGtArgs),
}

#[derive(Debug, Args)]
pub struct LevelArgs {
    #[arg(long, default_value_t = 2048)]
    pub black_level: u32,
    #[arg(long, default_value_t = 63488)]
    pub white_level: u32,
}

#[derive(Debug, Args)]
pub struct TargetArgs {
    /// Raw dataset whose pooled 1% / 99% percentiles are the target.
    #[arg(long, conflicts_with_all = ["target_low", "target_high"])]
    pub surrogate: Option<PathBuf>,
    #[arg(long, requires = "target_high")]
    pub target_low: Option<f64>,
    #[arg(long, requires = "target_low")]
    pub target_high: Option<f64>,
}

#[derive(Debug, Args)]
pub struct UnprocessOpts {
    /// Camera profile JSON (`ccm`, `cfa`); defaults to the built-in one.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long, default_value_t = 30.0)]
    pub frame_rate: f64,
    /// Dither the 8-bit codes.
    #[arg(long, action = ArgAction::Set, default_value_t = true, num_args = 0..=1, default_missing_value = "true")]
    pub dequantize: bool,
    /// Fixed `red,blue,global` gains instead of random draws.
    #[arg(long, value_delimiter = ',')]
    pub gains: Option<Vec<f64>>,
    #[command(flatten)]
    pub levels: LevelArgs,
    #[command(flatten)]
    pub target: TargetArgs,
}

#[derive(Debug, Args)]
pub struct UnprocessArgs {
    /// Directory of sRGB PPM frames (or of sequence subdirectories).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub opts: UnprocessOpts,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    /// Noise model JSON.
    #[arg(long, conflicts_with_all = ["a", "b"])]
    pub model: Option<PathBuf>,
    /// Heteroscedastic Gaussian slope.
    #[arg(long, requires = "b")]
    pub a: Option<f64>,
    /// Heteroscedastic Gaussian intercept.
    #[arg(long, requires = "a")]
    pub b: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AddNoiseArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub noise: NoiseArgs,
    /// Clamp noisy values to [0, 1].
    #[arg(long, action = ArgAction::Set, default_value_t = false, num_args = 0..=1, default_missing_value = "true")]
    pub clamp: bool,
}

#[derive(Debug, Args)]
pub struct FlatfieldArgs {
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long, default_value_t = 64)]
    pub levels: usize,
    #[arg(long, default_value_t = 0.01)]
    pub low: f64,
    #[arg(long, default_value_t = 0.99)]
    pub high: f64,
    #[arg(long, default_value_t = 256)]
    pub patch_size: usize,
    #[arg(long, value_enum, default_value = "common")]
    pub streams: StreamArg,
    #[arg(long, action = ArgAction::Set, default_value_t = false, num_args = 0..=1, default_missing_value = "true")]
    pub weighted: bool,
    /// Point cloud CSV.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Fitted noise model JSON.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum StreamArg {
    Common,
    Independent,
}

impl From<StreamArg> for StreamPolicy {
    fn from(s: StreamArg) -> Self {
        match s {
            StreamArg::Common => StreamPolicy::Common,
            StreamArg::Independent => StreamPolicy::Independent,
        }
    }
}

#[derive(Debug, Args)]
pub struct NlfArgs {
    #[arg(long, default_value_t = 12)]
    pub hf_cutoff: usize,
    #[arg(long, default_value_t = 16)]
    pub bins: usize,
    #[arg(long, default_value_t = 0.005)]
    pub percentile: f64,
    #[arg(long, default_value_t = 5)]
    pub min_blocks: usize,
    #[arg(long, action = ArgAction::Set, default_value_t = false, num_args = 0..=1, default_missing_value = "true")]
    pub weighted: bool,
}

#[derive(Debug, Args)]
pub struct EstimateNlfArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub nlf: NlfArgs,
    /// Point cloud CSV.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitNlfArgs {
    /// Point cloud CSV (`intensity,variance[,weight]`).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, action = ArgAction::Set, default_value_t = false, num_args = 0..=1, default_missing_value = "true")]
    pub weighted: bool,
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MakeSyntheticArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// New directory receiving `clean/` and `noisy/` datasets.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub opts: UnprocessOpts,
    #[command(flatten)]
    pub noise: NoiseArgs,
    /// Fit the noise model to this raw dataset instead.
    #[arg(long, conflicts_with_all = ["model", "a", "b"])]
    pub calibrate_from: Option<PathBuf>,
    #[command(flatten)]
    pub nlf: NlfArgs,
    #[arg(long, action = ArgAction::Set, default_value_t = false, num_args = 0..=1, default_missing_value = "true")]
    pub clamp: bool,
}

#[derive(Debug, Args)]
pub struct TvL1Args {
    #[arg(long, default_value_t = 0.15)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.3)]
    pub theta: f64,
    #[arg(long, default_value_t = 0.25)]
    pub tau: f64,
    /// Pyramid levels (default: as many as fit).
    #[arg(long)]
    pub scales: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub zoom: f64,
    #[arg(long, default_value_t = 5)]
    pub warps: usize,
    /// Inner-loop stopping threshold on the flow update.
    #[arg(long, default_value_t = 0.01)]
    pub flow_epsilon: f64,
    #[arg(long, default_value_t = 300)]
    pub max_iterations: usize,
}

#[derive(Debug, Args)]
pub struct OcclusionArgs {
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub div_thresh: f64,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    /// Image the flow is defined on.
    #[arg(long)]
    pub target: PathBuf,
    /// Image sampled at `x + flow(x)`.
    #[arg(long)]
    pub reference: PathBuf,
    /// `.flo` output.
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub tvl1: TvL1Args,
    /// Also compute the backward flow and write the trusted-pixel mask.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[command(flatten)]
    pub occlusion: OcclusionArgs,
}

#[derive(Debug, Args)]
pub struct CfaArgs {
    #[arg(long, default_value = "rggb", value_parser = parse_cfa)]
    pub cfa: CfaPattern,
}

fn parse_cfa(s: &str) -> Result<CfaPattern, String> {
    s.parse().map_err(|e: rawvid::Error| e.to_string())
}

fn parse_method(s: &str) -> Result<DemosaicMethod, String> {
    s.parse().map_err(|e: rawvid::Error| e.to_string())
}

fn parse_interp(s: &str) -> Result<Interpolation, String> {
    s.parse().map_err(|e: rawvid::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct WarpArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub flow: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "bicubic", value_parser = parse_interp)]
    pub interp: Interpolation,
    /// Treat the input PGM as a mosaic: demosaic, warp, re-mosaic.
    #[arg(long, action = ArgAction::Set, default_value_t = false, num_args = 0..=1, default_missing_value = "true")]
    pub raw: bool,
    #[command(flatten)]
    pub cfa: CfaArgs,
    #[command(flatten)]
    pub levels: LevelArgs,
    #[arg(long, default_value = "hamilton-adams", value_parser = parse_method)]
    pub method: DemosaicMethod,
    /// Write the in-bounds map as an 8-bit PGM.
    #[arg(long)]
    pub valid_mask: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemosaicArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub cfa: CfaArgs,
    #[command(flatten)]
    pub levels: LevelArgs,
    #[arg(long, default_value = "hamilton-adams", value_parser = parse_method)]
    pub method: DemosaicMethod,
    /// Render for display (white balance, gamma) as 8-bit instead of
    /// writing linear 16-bit values.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// `red,green,blue` display gains.
    #[arg(long, value_delimiter = ',', default_value = "1,1,1")]
    pub wb_gains: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct MosaicArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub cfa: CfaArgs,
    #[command(flatten)]
    pub levels: LevelArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DenoiserKind {
    /// Frames of the `--predictions` dataset, matched by sequence and index.
    Predictions,
    Identity,
    TemporalMean,
    GaussianBlur,
    /// Random-weight reference blind-spot network.
    BlindspotNet,
}

#[derive(Debug, Args)]
pub struct DenoiserArgs {
    #[arg(long, value_enum, default_value = "identity")]
    pub denoiser: DenoiserKind,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Blur width of `gaussian-blur`.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Layers of `blindspot-net`.
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    /// Features per layer of `blindspot-net`.
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    /// Cancel the blind-spot shift of `blindspot-net`.
    #[arg(long, action = ArgAction::Set, default_value_t = false, num_args = 0..=1, default_missing_value = "true")]
    pub remove_blindspot: bool,
}

#[derive(Debug, Args)]
pub struct Mf2fArgs {
    #[arg(long)]
    pub noisy: PathBuf,
    #[command(flatten)]
    pub denoiser: DenoiserArgs,
    /// Restrict to these sequences.
    #[arg(long, value_delimiter = ',')]
    pub sequences: Vec<String>,
    /// Stack offsets around t.
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        default_value = "-4,-2,0,2,4"
    )]
    pub offsets: Vec<isize>,
    #[arg(long, default_value = "hamilton-adams", value_parser = parse_method)]
    pub method: DemosaicMethod,
    #[arg(long, default_value = "bicubic", value_parser = parse_interp)]
    pub interp: Interpolation,
    #[command(flatten)]
    pub tvl1: TvL1Args,
    #[command(flatten)]
    pub occlusion: OcclusionArgs,
    /// CSV report (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BsLossArgs {
    #[arg(long)]
    pub noisy: PathBuf,
    #[command(flatten)]
    pub denoiser: DenoiserArgs,
    #[arg(long, value_delimiter = ',')]
    pub sequences: Vec<String>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub denoiser: DenoiserArgs,
    /// Side of the random probe frames.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Probed pixel (default: frame center).
    #[arg(long)]
    pub x: Option<usize>,
    #[arg(long)]
    pub y: Option<usize>,
    /// Probe window radius (default: the network's radius, else 3).
    #[arg(long)]
    pub radius: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
    /// JSON report (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub denoised: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// CSV report (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SubsampleArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub stride: u64,
}

#[derive(Debug, Args)]
pub struct AvgGtArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}
