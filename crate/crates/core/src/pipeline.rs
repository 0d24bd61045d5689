//! Dataset-level orchestration: synthetic pair construction, evaluation,
//! temporal subsampling and static-scene ground truth.

use rayon::prelude::*;

use crate::calib::{estimate_camera_nlf, AffineNlf, NlfEstimatorConfig};
use crate::dataset::RawDataset;
use crate::error::{Error, Result};
use crate::frame::{RawFrame, VideoSequence};
use crate::metrics::{psnr_raw, ssim_raw};
use crate::noise::{synthesize_noisy_dataset, NoiseModel};
use crate::plane::Plane;
use crate::tonemap::{AffineMap, PercentileStats};
use crate::unprocess::{pooled_stats, unprocess_dataset, CameraProfile, GainSample, SrgbFrame, UnprocessOptions};

/// Where the tone-mapping percentiles come from.
#[derive(Debug, Clone)]
pub enum TargetSource {
    Stats(PercentileStats),
    Surrogate(RawDataset),
}

impl TargetSource {
    pub fn resolve(&self) -> Result<PercentileStats> {
        match self {
            TargetSource::Stats(s) => Ok(*s),
            TargetSource::Surrogate(ds) => pooled_stats(ds.sequences.iter().flat_map(|s| s.frames.iter())),
        }
    }
}

/// Where the noise model comes from.
#[derive(Debug, Clone)]
pub enum NoiseSource {
    Model(NoiseModel),
    /// Fit a heteroscedastic Gaussian to a reference dataset.
    CalibrateFrom {
        reference: RawDataset,
        estimator: NlfEstimatorConfig,
        weighted: bool,
    },
}

impl NoiseSource {
    pub fn resolve(&self) -> Result<(NoiseModel, Option<AffineNlf>)> {
        match self {
            NoiseSource::Model(m) => {
                m.validate()?;
                Ok((*m, None))
            }
            NoiseSource::CalibrateFrom {
                reference,
                estimator,
                weighted,
            } => {
                let (fit, _) = estimate_camera_nlf(&reference.sequences, estimator, *weighted)?;
                Ok((fit.to_noise_model()?, Some(fit)))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub profile: CameraProfile,
    pub target: TargetSource,
    pub noise: NoiseSource,
    pub options: UnprocessOptions,
    /// Clamp noisy values to [0, 1].
    pub clamp: bool,
}

/// A paired clean / noisy dataset and what produced it.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub clean: RawDataset,
    pub noisy: RawDataset,
    pub gains: Vec<GainSample>,
    pub target: PercentileStats,
    pub source_stats: PercentileStats,
    pub tone_map: AffineMap,
    pub noise: NoiseModel,
    pub fit: Option<AffineNlf>,
}

/// Unprocess to raw with the target percentiles, quantize as stored, then
/// add noise. Identical to running the stages separately through files.
pub fn unprocess_to_dataset(
    srgb: &[VideoSequence<SrgbFrame>],
    profile: &CameraProfile,
    target: PercentileStats,
    options: &UnprocessOptions,
    seed: u64,
) -> Result<(RawDataset, Vec<GainSample>, PercentileStats, AffineMap)> {
    let out = unprocess_dataset(srgb, profile, seed, target, options)?;
    let clean = RawDataset::new(out.sequences)?.quantized();
    Ok((clean, out.gains, out.source_stats, out.tone_map))
}

/// Add noise to a dataset; output is quantized as stored.
pub fn add_noise(clean: &RawDataset, model: &NoiseModel, seed: u64, clamp: bool) -> Result<RawDataset> {
    let noisy = synthesize_noisy_dataset(&clean.sequences, model, seed, clamp)?;
    Ok(RawDataset::new(noisy)?.quantized())
}

pub fn make_synthetic(srgb: &[VideoSequence<SrgbFrame>], cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticDataset> {
    let target = cfg.target.resolve()?;
    let (noise, fit) = cfg.noise.resolve()?;
    let (clean, gains, source_stats, tone_map) = unprocess_to_dataset(srgb, &cfg.profile, target, &cfg.options, seed)?;
    let noisy = add_noise(&clean, &noise, seed, cfg.clamp)?;
    Ok(SyntheticDataset {
        clean,
        noisy,
        gains,
        target,
        source_stats,
        tone_map,
        noise,
        fit,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameScore {
    pub sequence: String,
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceScore {
    pub sequence: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-frame scores, per-sequence means and the dataset mean of those.
/// Sequences are reported in id order. Identical frames score `inf` dB,
/// which propagates through the means.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub frames: Vec<FrameScore>,
    pub sequences: Vec<SequenceScore>,
    pub psnr: f64,
    pub ssim: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

pub fn format_psnr(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

impl EvalReport {
    /// CSV: one row per frame, then one per sequence (frame column
    /// `mean`), then the aggregate row with sequence `all`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sequence,frame,psnr,ssim\n");
        for f in &self.frames {
            out += &format!("{},{},{},{:.6}\n", f.sequence, f.frame, format_psnr(f.psnr), f.ssim);
        }
        for s in &self.sequences {
            out += &format!("{},mean,{},{:.6}\n", s.sequence, format_psnr(s.psnr), s.ssim);
        }
        out += &format!("all,mean,{},{:.6}\n", format_psnr(self.psnr), self.ssim);
        out
    }
}

/// Compare matching sequences (by id) frame by frame.
pub fn evaluate(denoised: &RawDataset, reference: &RawDataset) -> Result<EvalReport> {
    if denoised.sequences.len() != reference.sequences.len() {
        return Err(Error::Mismatch(format!(
            "{} denoised sequences against {} reference sequences",
            denoised.sequences.len(),
            reference.sequences.len()
        )));
    }
    let mut pairs = Vec::new();
    for r in &reference.sequences {
        let d = denoised
            .sequence(&r.id)
            .ok_or_else(|| Error::Mismatch(format!("sequence {:?} missing from the denoised dataset", r.id)))?;
        if d.len() != r.len() {
            return Err(Error::Mismatch(format!(
                "sequence {:?}: {} denoised frames against {} reference frames",
                r.id,
                d.len(),
                r.len()
            )));
        }
        pairs.push((d, r));
    }
    pairs.sort_by(|a, b| a.1.id.cmp(&b.1.id));
    let per_sequence = pairs
        .par_iter()
        .map(|(d, r)| {
            d.frames
                .par_iter()
                .zip(&r.frames)
                .enumerate()
                .map(|(i, (a, b))| {
                    Ok(FrameScore {
                        sequence: r.id.clone(),
                        frame: i,
                        psnr: psnr_raw(a, b)?,
                        ssim: ssim_raw(a, b)?,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let sequences: Vec<SequenceScore> = per_sequence
        .iter()
        .zip(&pairs)
        .map(|(scores, (_, r))| SequenceScore {
            sequence: r.id.clone(),
            psnr: mean(scores.iter().map(|s| s.psnr)),
            ssim: mean(scores.iter().map(|s| s.ssim)),
        })
        .collect();
    Ok(EvalReport {
        psnr: mean(sequences.iter().map(|s| s.psnr)),
        ssim: mean(sequences.iter().map(|s| s.ssim)),
        frames: per_sequence.into_iter().flatten().collect(),
        sequences,
    })
}

/// Keep frames whose index is a multiple of `stride`.
pub fn temporal_subsample<F: Clone>(seq: &VideoSequence<F>, stride: usize) -> Result<VideoSequence<F>> {
    if stride == 0 {
        return Err(Error::InvalidParameter("stride must be at least 1".into()));
    }
    Ok(VideoSequence {
        id: seq.id.clone(),
        frame_rate: seq.frame_rate / stride as f64,
        frames: seq.frames.iter().step_by(stride).cloned().collect(),
    })
}

pub fn subsample_dataset(ds: &RawDataset, stride: usize) -> Result<RawDataset> {
    let sequences = ds
        .sequences
        .iter()
        .map(|s| temporal_subsample(s, stride))
        .collect::<Result<Vec<_>>>()?;
    RawDataset::new(sequences)
}

/// Pixelwise mean of a static sequence and the constant video built from it.
pub fn frame_average_gt(seq: &VideoSequence<RawFrame>) -> Result<(RawFrame, VideoSequence<RawFrame>)> {
    let first = seq
        .frames
        .first()
        .ok_or_else(|| Error::Degenerate(format!("sequence {:?} is empty", seq.id)))?;
    if seq.len() < 2 {
        return Err(Error::Degenerate(format!(
            "sequence {:?} has a single frame; averaging needs at least 2",
            seq.id
        )));
    }
    let n = seq.len() as f64;
    let mut sum = Plane::zeros(first.width(), first.height());
    for f in &seq.frames {
        first.same_layout(f)?;
        for (s, v) in sum.data_mut().iter_mut().zip(f.data.data()) {
            *s += v;
        }
    }
    let avg = first.with_data(sum.map(|s| s / n))?;
    let video = VideoSequence {
        id: seq.id.clone(),
        frame_rate: seq.frame_rate,
        frames: vec![avg.clone(); seq.len()],
    };
    Ok((avg, video))
}

pub fn average_gt_dataset(ds: &RawDataset) -> Result<RawDataset> {
    let sequences = ds
        .sequences
        .iter()
        .map(|s| frame_average_gt(s).map(|(_, v)| v))
        .collect::<Result<Vec<_>>>()?;
    RawDataset::new(sequences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{CfaPattern, Levels};
    use crate::noise::HeteroGaussianParams;
    use crate::rng::derive_stream;
    use rand_distr::{Distribution, Normal};

    fn raw(w: usize, h: usize, f: impl FnMut(usize, usize) -> f64) -> RawFrame {
        RawFrame::new(Plane::from_fn(w, h, f), CfaPattern::Rggb, Levels::default()).unwrap()
    }

    fn seq(id: &str, frames: Vec<RawFrame>) -> VideoSequence<RawFrame> {
        VideoSequence::new(id, 30.0, frames).unwrap()
    }

    fn srgb(id: &str, n: usize) -> VideoSequence<SrgbFrame> {
        let frames = (0..n)
            .map(|i| {
                [0usize, 1, 2]
                    .map(|c| Plane::from_fn(32, 24, |x, y| ((x * 5 + y * 3 + 17 * c + 9 * i) % 200 + 20) as u8))
            })
            .collect();
        VideoSequence {
            id: id.into(),
            frame_rate: 30.0,
            frames,
        }
    }

    #[test]
    fn subsample_cases() {
        let s = seq("s", (0..498).map(|i| raw(4, 4, |_, _| i as f64 / 498.0)).collect());
        let mut s = s;
        s.frame_rate = 120.0;
        let out = temporal_subsample(&s, 3).unwrap();
        assert_eq!(out.len(), 166);
        assert_eq!(out.frame_rate, 40.0);
        assert_eq!(out.frames[1], s.frames[3]);
        assert_eq!(temporal_subsample(&s, 1).unwrap(), s);
        assert_eq!(temporal_subsample(&s, 1000).unwrap().len(), 1);
        assert!(temporal_subsample(&s, 0).is_err());
    }

    #[test]
    fn average_gt_cases() {
        let f = raw(8, 8, |x, y| (x + 2 * y) as f64 / 30.0);
        let (avg, video) = frame_average_gt(&seq("s", vec![f.clone(); 4])).unwrap();
        assert_eq!(avg, f);
        assert!(video.frames.iter().all(|v| *v == f));
        assert_eq!(video.len(), 4);

        let sigma = 0.05;
        let n = 16;
        let normal = Normal::new(0.0, sigma).unwrap();
        let frames = (0..n)
            .map(|i| {
                let mut rng = derive_stream(3, "avg", "test", i);
                raw(128, 128, |_, _| 0.5 + normal.sample(&mut rng))
            })
            .collect();
        let (avg, _) = frame_average_gt(&seq("s", frames)).unwrap();
        let std = avg.data.map(|v| v - 0.5).data().iter().map(|v| v * v).sum::<f64>() / avg.data.len() as f64;
        let expected = sigma / (n as f64).sqrt();
        assert!((std.sqrt() / expected - 1.0).abs() < 0.1, "{}", std.sqrt());

        assert!(frame_average_gt(&seq("e", vec![])).is_err());
        assert!(frame_average_gt(&seq("one", vec![f])).is_err());
    }

    #[test]
    fn eval_cases() {
        let a = seq("a", vec![raw(32, 32, |x, y| ((x * y) % 7) as f64 / 10.0); 2]);
        let b = seq("b", vec![raw(32, 32, |x, _| x as f64 / 64.0); 3]);
        let ds = RawDataset::new(vec![a.clone(), b.clone()]).unwrap();
        let self_report = evaluate(&ds, &ds).unwrap();
        assert_eq!(self_report.psnr, f64::INFINITY);
        assert_eq!(self_report.ssim, 1.0);
        assert!(self_report.to_csv().ends_with("all,mean,inf,1.000000\n"));

        let shift = |s: &VideoSequence<RawFrame>| {
            let frames = s
                .frames
                .iter()
                .map(|f| f.with_data(f.data.map(|v| v + 0.1)).unwrap())
                .collect();
            seq(&s.id, frames)
        };
        let offset = RawDataset::new(vec![shift(&a), shift(&b)]).unwrap();
        let r = evaluate(&offset, &ds).unwrap();
        assert!(r.frames.iter().all(|f| (f.psnr - 20.0).abs() < 1e-9));

        let shuffled = RawDataset::new(vec![shift(&b), shift(&a)]).unwrap();
        let r2 = evaluate(&shuffled, &RawDataset::new(vec![b.clone(), a.clone()]).unwrap()).unwrap();
        assert_eq!(r2.psnr, r.psnr);
        assert_eq!(r2.ssim, r.ssim);
        assert_eq!(r2, r);

        let short = RawDataset::new(vec![a.clone(), seq("b", b.frames[..2].to_vec())]).unwrap();
        assert!(matches!(evaluate(&short, &ds), Err(Error::Mismatch(_))));
    }

    #[test]
    fn make_synthetic_contract() {
        let input = vec![srgb("x", 2), srgb("y", 3)];
        let target = PercentileStats { low: 0.02, high: 0.7 };
        let zero = SyntheticConfig {
            profile: CameraProfile::default(),
            target: TargetSource::Stats(target),
            noise: NoiseSource::Model(NoiseModel::HeteroGaussian(HeteroGaussianParams::new(0.0, 0.0).unwrap())),
            options: UnprocessOptions::default(),
            clamp: false,
        };
        let out = make_synthetic(&input, &zero, 5).unwrap();
        assert_eq!(out.noisy, out.clean);
        let got = pooled_stats(out.clean.sequences.iter().flat_map(|s| s.frames.iter())).unwrap();
        // quantization to 16-bit codes bounds the match
        let step = 1.0 / out.clean.sequences[0].frames[0].levels.range();
        assert!((got.low - target.low).abs() <= step && (got.high - target.high).abs() <= step);

        let noisy_cfg = SyntheticConfig {
            noise: NoiseSource::Model(NoiseModel::HeteroGaussian(
                HeteroGaussianParams::new(0.01, 1e-4).unwrap(),
            )),
            ..zero.clone()
        };
        let a = make_synthetic(&input, &noisy_cfg, 5).unwrap();
        let b = make_synthetic(&input, &noisy_cfg, 5).unwrap();
        assert_eq!(a.noisy, b.noisy);
        assert_ne!(a.noisy, a.clean);
        // staged form
        let (clean, ..) = unprocess_to_dataset(&input, &noisy_cfg.profile, target, &noisy_cfg.options, 5).unwrap();
        let noisy = add_noise(&clean, &a.noise, 5, false).unwrap();
        assert_eq!(clean, a.clean);
        assert_eq!(noisy, a.noisy);
    }
}
