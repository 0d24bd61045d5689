//! Noise-level calibration: flat-field sweeps, affine NLF fitting and
//! block-DCT noise estimation from single frames.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{pack_planes, CfaPattern, Levels, RawFrame, VideoSequence};
use crate::noise::{FrameNoiser, HeteroGaussianParams, NoiseModel};
use crate::plane::{sample_variance, Plane};
use crate::rng::{derive_stream, stage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlfPoint {
    pub intensity: f64,
    pub variance: f64,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl NlfPoint {
    pub fn new(intensity: f64, variance: f64) -> Self {
        NlfPoint {
            intensity,
            variance,
            weight: 1.0,
        }
    }
}

/// Intensity/variance samples of a noise level function.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NlfPointCloud {
    pub points: Vec<NlfPoint>,
}

impl NlfPointCloud {
    pub fn new(points: Vec<NlfPoint>) -> Self {
        NlfPointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn extend(&mut self, other: NlfPointCloud) {
        self.points.extend(other.points);
    }

    pub fn mean_variance(&self) -> f64 {
        self.points.iter().map(|p| p.variance).sum::<f64>() / self.points.len().max(1) as f64
    }

    /// CSV with header `intensity,variance,weight`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |e: csv::Error| Error::format(path, e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for p in &self.points {
            w.serialize(p).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads `intensity,variance[,weight]` (header required).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let csv_err = |e: csv::Error| Error::format(path, e.to_string());
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_path(path)
            .map_err(csv_err)?;
        let points = r
            .deserialize()
            .collect::<std::result::Result<Vec<NlfPoint>, _>>()
            .map_err(csv_err)?;
        if let Some(p) = points.iter().find(|p| !(p.variance >= 0.0) || !(p.weight >= 0.0)) {
            return Err(Error::format(path, format!("negative variance or weight in {p:?}")));
        }
        Ok(NlfPointCloud { points })
    }
}

/// Fitted `sigma^2(u) = a u + b` with the RMS residual of the fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineNlf {
    pub a: f64,
    pub b: f64,
    pub fit_residual: f64,
}

impl AffineNlf {
    pub fn variance(&self, u: f64) -> f64 {
        self.a * u + self.b
    }

    /// As a synthesis model. Fails when the fit has a negative coefficient.
    pub fn to_noise_model(&self) -> Result<NoiseModel> {
        Ok(NoiseModel::HeteroGaussian(HeteroGaussianParams::new(self.a, self.b)?))
    }
}

/// Least squares of variance on intensity; `weighted` uses the point weights.
pub fn fit_affine_nlf(cloud: &NlfPointCloud, weighted: bool) -> Result<AffineNlf> {
    let pts = &cloud.points;
    let w = |p: &NlfPoint| if weighted { p.weight } else { 1.0 };
    let sw: f64 = pts.iter().map(w).sum();
    if pts.len() < 2 || !(sw > 0.0) {
        return Err(Error::Degenerate(format!("need at least 2 points, got {}", pts.len())));
    }
    let mx = pts.iter().map(|p| w(p) * p.intensity).sum::<f64>() / sw;
    let my = pts.iter().map(|p| w(p) * p.variance).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| w(p) * (p.intensity - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| w(p) * (p.intensity - mx) * (p.variance - my)).sum();
    let scale = pts.iter().map(|p| p.intensity.abs()).fold(0.0, f64::max).max(1e-300);
    if sxx <= (scale * 1e-12).powi(2) * sw {
        return Err(Error::Degenerate("all intensities are identical".into()));
    }
    let a = sxy / sxx;
    let b = my - a * mx;
    let rss: f64 = pts.iter().map(|p| (p.variance - (a * p.intensity + b)).powi(2)).sum();
    Ok(AffineNlf {
        a,
        b,
        fit_residual: (rss / pts.len() as f64).sqrt(),
    })
}

/// How flat-field levels draw their randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamPolicy {
    /// Every level replays the same stream (common random numbers), so
    /// level-to-level sampling error is shared and cancels in the fit.
    #[default]
    Common,
    /// One derived stream per level.
    Independent,
}

pub const MIN_FLATFIELD_PATCH: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatfieldConfig {
    pub levels: Vec<f64>,
    pub patch_size: usize,
    pub streams: StreamPolicy,
}

impl Default for FlatfieldConfig {
    fn default() -> Self {
        FlatfieldConfig {
            levels: uniform_levels(64, 0.01, 0.99),
            patch_size: 256,
            streams: StreamPolicy::Common,
        }
    }
}

/// `n` levels evenly spaced over `[lo, hi]`.
pub fn uniform_levels(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Simulated flat-field acquisitions: one constant patch per level through
/// `noiser`, recording the sample variance of the result.
pub fn flatfield_calibrate(noiser: &dyn FrameNoiser, config: &FlatfieldConfig, seed: u64) -> Result<NlfPointCloud> {
    if config.levels.len() < 2 {
        return Err(Error::InvalidParameter("flat-field needs at least 2 levels".into()));
    }
    let n = config.patch_size;
    if n < MIN_FLATFIELD_PATCH || !n.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "flat-field patch must be even and at least {MIN_FLATFIELD_PATCH}, got {n}"
        )));
    }
    let points = config
        .levels
        .par_iter()
        .enumerate()
        .map(|(i, &level)| {
            let index = match config.streams {
                StreamPolicy::Common => 0,
                StreamPolicy::Independent => i as u64,
            };
            let mut rng = derive_stream(seed, "flatfield", stage::FLATFIELD, index);
            let patch = RawFrame::new(Plane::filled(n, n, level), CfaPattern::Rggb, Levels::default())?;
            let noisy = noiser.noisify(&patch, &mut rng)?;
            Ok(NlfPoint::new(level, sample_variance(noisy.data.data())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NlfPointCloud { points })
}

/// Block-DCT noise estimator parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlfEstimatorConfig {
    /// DCT coefficients `(i, j)` with `i + j >= hf_cutoff` measure noise.
    pub hf_cutoff: usize,
    pub bins: usize,
    /// Fraction of the flattest blocks kept per bin.
    pub percentile: f64,
    pub min_blocks: usize,
}

impl Default for NlfEstimatorConfig {
    fn default() -> Self {
        NlfEstimatorConfig {
            hf_cutoff: 12,
            bins: 16,
            percentile: 0.005,
            min_blocks: 5,
        }
    }
}

pub const NLF_BLOCK: usize = 8;
pub const MIN_NLF_FRAME: usize = 64;

/// Orthonormal DCT-II basis, `basis[k][n]`.
fn dct_basis() -> [[f64; NLF_BLOCK]; NLF_BLOCK] {
    let mut m = [[0.0; NLF_BLOCK]; NLF_BLOCK];
    let nf = NLF_BLOCK as f64;
    for (k, row) in m.iter_mut().enumerate() {
        let c = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for (n, v) in row.iter_mut().enumerate() {
            *v = c * (std::f64::consts::PI * (2.0 * n as f64 + 1.0) * k as f64 / (2.0 * nf)).cos();
        }
    }
    m
}

struct BlockStat {
    mean: f64,
    /// Energy in the non-DC coefficients below the cutoff (texture).
    low: f64,
    /// Mean square of the coefficients at or above the cutoff (noise).
    high: f64,
}

/// Statistics of every overlapping 8x8 block of `p`. The high-frequency
/// coefficients are computed separably; the remaining AC energy follows
/// from Parseval.
fn block_stats(p: &Plane, cutoff: usize) -> Vec<BlockStat> {
    let basis = dct_basis();
    let pairs: Vec<(usize, usize)> = (0..NLF_BLOCK)
        .flat_map(|i| (0..NLF_BLOCK).map(move |j| (i, j)))
        .filter(|&(i, j)| i + j >= cutoff)
        .collect();
    let hcols: Vec<usize> = {
        let mut c: Vec<usize> = pairs.iter().map(|&(_, j)| j).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    let (w, h) = p.dims();
    let bw = w + 1 - NLF_BLOCK;
    let bh = h + 1 - NLF_BLOCK;
    // horizontal transforms: hrow[c][y * bw + x] = sum_n basis[hcols[c]][n] p(x + n, y)
    let hrow: Vec<Vec<f64>> = hcols
        .iter()
        .map(|&k| {
            let mut out = vec![0.0; bw * h];
            for y in 0..h {
                let row = p.row(y);
                for x in 0..bw {
                    out[y * bw + x] = (0..NLF_BLOCK).map(|n| basis[k][n] * row[x + n]).sum();
                }
            }
            out
        })
        .collect();
    let col_of = |j: usize| hcols.iter().position(|&c| c == j).unwrap();
    let nb = (NLF_BLOCK * NLF_BLOCK) as f64;
    let mut stats = Vec::with_capacity(bw * bh);
    for y in 0..bh {
        for x in 0..bw {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for r in 0..NLF_BLOCK {
                for &v in &p.row(y + r)[x..x + NLF_BLOCK] {
                    sum += v;
                    sq += v * v;
                }
            }
            let mut hf = 0.0;
            for &(i, j) in &pairs {
                let src = &hrow[col_of(j)];
                let c: f64 = (0..NLF_BLOCK).map(|r| basis[i][r] * src[(y + r) * bw + x]).sum();
                hf += c * c;
            }
            let dc2 = sum * sum / nb;
            stats.push(BlockStat {
                mean: sum / nb,
                low: (sq - dc2 - hf).max(0.0),
                high: hf / pairs.len() as f64,
            });
        }
    }
    stats
}

fn plane_cloud(p: &Plane, cfg: &NlfEstimatorConfig) -> Result<Vec<NlfPoint>> {
    let mut stats = block_stats(p, cfg.hf_cutoff);
    if stats.len() < cfg.bins * cfg.min_blocks {
        return Err(Error::Dimensions(format!(
            "{}x{} plane has {} blocks, too few for {} bins",
            p.width(),
            p.height(),
            stats.len(),
            cfg.bins
        )));
    }
    stats.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    let n = stats.len();
    let mut out = Vec::with_capacity(cfg.bins);
    for bin in 0..cfg.bins {
        let slice = &mut stats[bin * n / cfg.bins..(bin + 1) * n / cfg.bins];
        let count = slice.len();
        let keep = ((cfg.percentile * count as f64).ceil() as usize)
            .max(cfg.min_blocks)
            .min(count);
        slice.select_nth_unstable_by(keep - 1, |a, b| a.low.total_cmp(&b.low));
        let kept = &slice[..keep];
        let keep = keep as f64;
        let variance = kept.iter().map(|s| s.high).sum::<f64>() / keep;
        // Flat blocks lean towards the quiet end of a bin under
        // signal-dependent noise, so report the intensity they actually have.
        let intensity = kept.iter().map(|s| s.mean).sum::<f64>() / keep;
        out.push(NlfPoint {
            intensity,
            variance,
            weight: count as f64,
        });
    }
    Ok(out)
}

/// Per CFA plane: every overlapping 8x8 block gets its mean and DCT energy
/// split; blocks are binned by mean into equal-count bins and each bin
/// reports the average high-frequency energy of its flattest blocks at the
/// mean intensity of those blocks. Bins from the four planes are pooled.
pub fn estimate_nlf_frame(frame: &RawFrame, cfg: &NlfEstimatorConfig) -> Result<NlfPointCloud> {
    if frame.width() < MIN_NLF_FRAME || frame.height() < MIN_NLF_FRAME {
        return Err(Error::Dimensions(format!(
            "noise estimation needs at least {MIN_NLF_FRAME}x{MIN_NLF_FRAME}, got {}x{}",
            frame.width(),
            frame.height()
        )));
    }
    if cfg.bins == 0 || cfg.min_blocks == 0 || cfg.hf_cutoff >= 2 * NLF_BLOCK - 1 {
        return Err(Error::InvalidParameter(format!("{cfg:?}")));
    }
    let planes = pack_planes(&frame.data)?;
    let per_plane = planes
        .par_iter()
        .map(|p| plane_cloud(p, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(NlfPointCloud {
        points: per_plane.into_iter().flatten().collect(),
    })
}

/// Pools the per-frame clouds of every frame (in sequence order) and fits.
pub fn estimate_camera_nlf(
    dataset: &[VideoSequence<RawFrame>],
    cfg: &NlfEstimatorConfig,
    weighted: bool,
) -> Result<(AffineNlf, NlfPointCloud)> {
    let frames: Vec<&RawFrame> = dataset.iter().flat_map(|s| s.frames.iter()).collect();
    if frames.is_empty() {
        return Err(Error::InvalidParameter("empty dataset".into()));
    }
    let clouds = frames
        .par_iter()
        .map(|f| estimate_nlf_frame(f, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut cloud = NlfPointCloud::default();
    for c in clouds {
        cloud.extend(c);
    }
    Ok((fit_affine_nlf(&cloud, weighted)?, cloud))
}
