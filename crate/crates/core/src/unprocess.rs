//! Inverse camera pipeline: turns clean 8-bit sRGB video into clean raw
//! video.
//!
//! Stage order: dequantization dither on the 8-bit codes, sRGB gamma
//! inversion, inverse color correction, inverse white balance, mosaicing,
//! then an affine tone map matching the 1% / 99% percentiles of the whole
//! synthetic dataset to those of a surrogate dataset.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{mosaic, CfaPattern, Levels, RawFrame, RgbFrame, VideoSequence};
use crate::plane::Plane;
use crate::rng::{derive_stream, stage};
use crate::tonemap::{AffineMap, PercentileStats};

pub type Matrix3 = [[f64; 3]; 3];

/// Forward color correction matrix (camera RGB to linear sRGB) and CFA
/// layout of the simulated camera. Unprocessing applies the inverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraProfile {
    pub ccm: Matrix3,
    pub cfa: CfaPattern,
}

impl CameraProfile {
    /// Default camera matrix. Rows sum to one, so gray stays gray, and its
    /// inverse has non-negative entries, so inputs in `[0, 1]` stay there.
    pub const DEFAULT_CCM: Matrix3 = [[1.72, -0.62, -0.10], [-0.18, 1.49, -0.31], [0.02, -0.51, 1.49]];

    pub fn new(ccm: Matrix3, cfa: CfaPattern) -> Result<Self> {
        let p = CameraProfile { ccm, cfa };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let det = determinant(&self.ccm);
        if !(det.abs() > 1e-8) {
            return Err(Error::InvalidParameter(format!(
                "color matrix is singular (det = {det:e})"
            )));
        }
        for (i, row) in self.ccm.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidParameter(format!(
                    "color matrix row {i} sums to {s}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn inverse_ccm(&self) -> Result<Matrix3> {
        invert(&self.ccm)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: CameraProfile = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}

impl Default for CameraProfile {
    fn default() -> Self {
        CameraProfile {
            ccm: Self::DEFAULT_CCM,
            cfa: CfaPattern::Rggb,
        }
    }
}

pub fn determinant(m: &Matrix3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Inverse by the adjugate.
pub fn invert(m: &Matrix3) -> Result<Matrix3> {
    let det = determinant(m);
    if !(det.abs() > 1e-8) {
        return Err(Error::InvalidParameter("singular color matrix".into()));
    }
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [c(1, 1, 2, 2), -c(0, 1, 2, 2), c(0, 1, 1, 2)],
        [-c(1, 0, 2, 2), c(0, 0, 2, 2), -c(0, 0, 1, 2)],
        [c(1, 0, 2, 1), -c(0, 0, 2, 1), c(0, 0, 1, 1)],
    ];
    Ok(adj.map(|row| row.map(|v| v / det)))
}

/// White balance gains of one sequence. Green gain is fixed at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSample {
    pub red: f64,
    pub blue: f64,
    pub global: f64,
}

impl GainSample {
    pub const RED_RANGE: (f64, f64) = (1.9, 2.4);
    pub const BLUE_RANGE: (f64, f64) = (1.5, 1.9);
    pub const GLOBAL_MEAN: f64 = 0.8;
    pub const GLOBAL_STD: f64 = 0.1;

    pub const UNIT: GainSample = GainSample {
        red: 1.0,
        blue: 1.0,
        global: 1.0,
    };

    /// Per-channel multiplier `global / g_c` applied when unprocessing.
    pub fn inverse_factors(&self) -> [f64; 3] {
        [self.global / self.red, self.global, self.global / self.blue]
    }
}

/// Red gain ~ U[1.9, 2.4], blue ~ U[1.5, 1.9], global ~ N(0.8, 0.1)
/// truncated at 1 (values above 1 are clipped to exactly 1).
pub fn sample_gains<R: Rng + ?Sized>(rng: &mut R) -> GainSample {
    let red = Uniform::new_inclusive(GainSample::RED_RANGE.0, GainSample::RED_RANGE.1)
        .expect("static range")
        .sample(rng);
    let blue = Uniform::new_inclusive(GainSample::BLUE_RANGE.0, GainSample::BLUE_RANGE.1)
        .expect("static range")
        .sample(rng);
    let normal = Normal::new(GainSample::GLOBAL_MEAN, GainSample::GLOBAL_STD).expect("static params");
    let global = loop {
        let g: f64 = normal.sample(rng);
        if g > 0.0 {
            break g.min(1.0);
        }
    };
    GainSample { red, blue, global }
}

/// `(code + d) / 255` with `d ~ U[-1/2, 1/2)` drawn per sample.
pub fn dequantize<R: Rng + ?Sized>(codes: &Plane<u8>, rng: &mut R) -> Plane {
    let dither = Uniform::new(-0.5, 0.5).expect("static range");
    codes.map(|c| (f64::from(c) + dither.sample(rng)) / 255.0)
}

/// sRGB electro-optical transfer; input clamped to `[0, 1]`.
#[inline]
pub fn srgb_to_linear(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x <= 0.04045 {
        x / 12.92
    } else {
        ((x + 0.055) / 1.055).powf(2.4)
    }
}

/// Inverse of [`srgb_to_linear`]; input clamped to `[0, 1]`.
#[inline]
pub fn linear_to_srgb(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x <= 0.0031308 {
        x * 12.92
    } else {
        1.055 * x.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_to_linear_rgb(rgb: &RgbFrame) -> RgbFrame {
    rgb.map_channels(|_, p| p.map(srgb_to_linear))
}

pub fn linear_to_srgb_rgb(rgb: &RgbFrame) -> RgbFrame {
    rgb.map_channels(|_, p| p.map(linear_to_srgb))
}

/// Map linear sRGB to camera RGB with the inverse of the profile's matrix.
pub fn apply_inverse_ccm(rgb: &RgbFrame, profile: &CameraProfile) -> Result<RgbFrame> {
    Ok(rgb.transform(&profile.inverse_ccm()?))
}

/// Forward color correction (camera RGB to linear sRGB).
pub fn apply_ccm(rgb: &RgbFrame, profile: &CameraProfile) -> RgbFrame {
    rgb.transform(&profile.ccm)
}

/// Multiply channel `c` by `global / g_c`.
pub fn apply_inverse_whitebalance(rgb: &RgbFrame, gains: &GainSample) -> RgbFrame {
    let f = gains.inverse_factors();
    rgb.map_channels(|c, p| p.map(|v| v * f[c]))
}

/// An 8-bit sRGB frame as three code planes.
pub type SrgbFrame = [Plane<u8>; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnprocessOptions {
    /// Add the uniform dither to the 8-bit codes.
    pub dequantize: bool,
    /// Use these gains for every sequence instead of drawing them.
    pub gains: Option<GainSample>,
    /// Code range recorded on the produced raw frames.
    pub levels: Levels,
}

impl Default for UnprocessOptions {
    fn default() -> Self {
        UnprocessOptions {
            dequantize: true,
            gains: None,
            levels: Levels {
                black: 2048,
                white: 63488,
            },
        }
    }
}

/// A sequence unprocessed up to (and including) mosaicing.
#[derive(Debug, Clone)]
pub struct LinearRawSequence {
    pub sequence: VideoSequence<RawFrame>,
    pub gains: GainSample,
}

/// Run every stage except the tone map on one sequence. Gains are drawn
/// once per sequence from the `(seed, id, "gains")` stream; the dither of
/// frame `i` uses the `(seed, id, "dequantize", i)` stream.
pub fn unprocess_linear(
    srgb: &VideoSequence<SrgbFrame>,
    profile: &CameraProfile,
    seed: u64,
    options: &UnprocessOptions,
) -> Result<LinearRawSequence> {
    profile.validate()?;
    let gains = match options.gains {
        Some(g) => g,
        None => sample_gains(&mut derive_stream(seed, &srgb.id, stage::GAINS, 0)),
    };
    let inv_ccm = profile.inverse_ccm()?;
    let frames = srgb
        .frames
        .iter()
        .enumerate()
        .map(|(i, codes)| {
            let mut rng = derive_stream(seed, &srgb.id, stage::DEQUANTIZE, i as u64);
            let [r, g, b] = codes.each_ref().map(|c| {
                if options.dequantize {
                    dequantize(c, &mut rng)
                } else {
                    c.map(|v| f64::from(v) / 255.0)
                }
            });
            let rgb = RgbFrame::new(r, g, b)?;
            let linear = srgb_to_linear_rgb(&rgb);
            let camera = linear.transform(&inv_ccm);
            let balanced = apply_inverse_whitebalance(&camera, &gains);
            mosaic(&balanced, profile.cfa, options.levels)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LinearRawSequence {
        sequence: VideoSequence::new(srgb.id.clone(), srgb.frame_rate, frames)?,
        gains,
    })
}

/// Result of unprocessing a set of sequences.
#[derive(Debug, Clone)]
pub struct UnprocessedDataset {
    pub sequences: Vec<VideoSequence<RawFrame>>,
    pub gains: Vec<GainSample>,
    /// Percentiles of the mosaiced data before tone mapping.
    pub source_stats: PercentileStats,
    pub tone_map: AffineMap,
}

/// Pooled 1% / 99% percentiles over every pixel of every frame.
pub fn pooled_stats<'a>(frames: impl IntoIterator<Item = &'a RawFrame>) -> Result<PercentileStats> {
    let mut all = Vec::new();
    for f in frames {
        all.extend_from_slice(f.data.data());
    }
    PercentileStats::of(&all)
}

/// Unprocess sequences and tone map the pooled dataset toward `target`.
/// Sequences run in parallel on the current rayon pool; the result does
/// not depend on scheduling.
pub fn unprocess_dataset(
    sequences: &[VideoSequence<SrgbFrame>],
    profile: &CameraProfile,
    seed: u64,
    target: PercentileStats,
    options: &UnprocessOptions,
) -> Result<UnprocessedDataset> {
    if sequences.is_empty() || sequences.iter().all(|s| s.is_empty()) {
        return Err(Error::Degenerate("no frames to unprocess".into()));
    }
    let linear = sequences
        .par_iter()
        .map(|s| unprocess_linear(s, profile, seed, options))
        .collect::<Result<Vec<_>>>()?;
    let source_stats = pooled_stats(linear.iter().flat_map(|s| s.sequence.frames.iter()))?;
    let tone_map = AffineMap::matching(source_stats, target)?;
    let gains = linear.iter().map(|s| s.gains).collect();
    let sequences = linear
        .into_iter()
        .map(|mut s| {
            for f in &mut s.sequence.frames {
                tone_map.apply_slice(f.data.data_mut());
            }
            s.sequence
        })
        .collect();
    Ok(UnprocessedDataset {
        sequences,
        gains,
        source_stats,
        tone_map,
    })
}

/// Single-sequence form of [`unprocess_dataset`].
pub fn unprocess_sequence(
    srgb: &VideoSequence<SrgbFrame>,
    profile: &CameraProfile,
    seed: u64,
    target: PercentileStats,
    options: &UnprocessOptions,
) -> Result<(VideoSequence<RawFrame>, GainSample, AffineMap)> {
    let mut out = unprocess_dataset(std::slice::from_ref(srgb), profile, seed, target, options)?;
    Ok((out.sequences.remove(0), out.gains[0], out.tone_map))
}
