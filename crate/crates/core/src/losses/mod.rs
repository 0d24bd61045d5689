//! Self-supervised losses (multi-frame-to-frame L1 and blind-spot L2),
//! frame stacks, reference denoisers and a receptive-field probe.

mod blindspot;
mod probe;

pub use blindspot::BlindSpotNet;
pub use probe::{probe_receptive_field, RfProbeReport, MIN_PROBE_EPSILON, PROBE_THRESHOLD};

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::demosaic::{demosaic_ha, demosaic_warp_remosaic, ha_directions, ha_warp_remosaic_with, DemosaicMethod};
use crate::error::{Error, Result};
use crate::flow::{gaussian_blur, occlusion_mask, tvl1_flow, FlowField, Interpolation, OcclusionParams, TvL1Params};
use crate::frame::{pack_planes, unpack_planes, RawFrame, VideoSequence};
use crate::plane::{mirror_index, Plane};

pub const MF2F_OFFSETS: [isize; 5] = [-4, -2, 0, 2, 4];
pub const BLINDSPOT_OFFSETS: [isize; 5] = [-2, -1, 0, 1, 2];
pub const STACK_LEN: usize = 5;

/// Five frames around a center time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub frames: Vec<RawFrame>,
    pub t: usize,
    pub offsets: Vec<isize>,
    /// Sequence index of each frame after mirroring.
    pub indices: Vec<usize>,
}

impl FrameStack {
    /// The frame at offset 0.
    pub fn center(&self) -> &RawFrame {
        let i = self.offsets.iter().position(|&o| o == 0).unwrap_or(STACK_LEN / 2);
        &self.frames[i]
    }

    pub fn center_slot(&self) -> usize {
        self.offsets.iter().position(|&o| o == 0).unwrap_or(STACK_LEN / 2)
    }
}

/// Mirror a frame index into `0..len` (period `2(len - 1)`), which keeps
/// parity.
pub fn mirror_frame_index(i: isize, len: usize) -> usize {
    mirror_index(i, len)
}

fn check_offsets(offsets: &[isize]) -> Result<()> {
    if offsets.len() != STACK_LEN {
        return Err(Error::InvalidParameter(format!(
            "a stack needs {STACK_LEN} offsets, got {}",
            offsets.len()
        )));
    }
    let mut a: Vec<isize> = offsets.to_vec();
    let mut b: Vec<isize> = offsets.iter().map(|o| -o).collect();
    a.sort_unstable();
    b.sort_unstable();
    if a != b || !offsets.contains(&0) {
        return Err(Error::InvalidParameter(format!(
            "stack offsets must be symmetric around 0 and contain 0: {offsets:?}"
        )));
    }
    Ok(())
}

/// Frames `t + offset`, mirrored at the sequence ends.
pub fn build_stack(seq: &VideoSequence<RawFrame>, t: usize, offsets: &[isize]) -> Result<FrameStack> {
    check_offsets(offsets)?;
    if seq.is_empty() {
        return Err(Error::InvalidParameter(format!("sequence {} is empty", seq.id)));
    }
    if t >= seq.len() {
        return Err(Error::InvalidParameter(format!(
            "t={t} outside a {}-frame sequence",
            seq.len()
        )));
    }
    let indices: Vec<usize> = offsets
        .iter()
        .map(|&o| mirror_frame_index(t as isize + o, seq.len()))
        .collect();
    Ok(FrameStack {
        frames: indices.iter().map(|&i| seq.frames[i].clone()).collect(),
        t,
        offsets: offsets.to_vec(),
        indices,
    })
}

/// Index of the MF2F target frame `t - 1` after mirroring.
pub fn mf2f_target_index(t: usize, len: usize) -> usize {
    mirror_frame_index(t as isize - 1, len)
}

/// Stack for the multi-frame-to-frame loss; fails if the target frame
/// `t - 1` would be part of the stack.
pub fn build_mf2f_stack(seq: &VideoSequence<RawFrame>, t: usize, offsets: &[isize]) -> Result<FrameStack> {
    if seq.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "sequence {} needs at least 2 frames for the MF2F loss",
            seq.id
        )));
    }
    let stack = build_stack(seq, t, offsets)?;
    let target = mf2f_target_index(t, seq.len());
    if stack.indices.contains(&target) {
        return Err(Error::InvalidParameter(format!(
            "offsets {offsets:?} put the target frame {target} inside the stack at t={t}"
        )));
    }
    Ok(stack)
}

/// A video denoiser: frame stack in, estimate of the center frame out.
pub trait Denoiser: Send + Sync {
    fn denoise(&self, stack: &FrameStack) -> Result<RawFrame>;

    /// One output pixel; implementations may compute it locally.
    fn denoise_pixel(&self, stack: &FrameStack, x: usize, y: usize) -> Result<f64> {
        Ok(self.denoise(stack)?.data.get(x, y))
    }

    /// Whether concurrent calls are allowed; serial denoisers are run one
    /// frame at a time.
    fn concurrent(&self) -> bool {
        true
    }

    fn name(&self) -> String;
}

/// A closure as a denoiser.
pub struct FnDenoiser<F> {
    name: String,
    f: F,
}

impl<F> FnDenoiser<F>
where
    F: Fn(&FrameStack) -> Result<RawFrame> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnDenoiser { name: name.into(), f }
    }
}

impl<F> Denoiser for FnDenoiser<F>
where
    F: Fn(&FrameStack) -> Result<RawFrame> + Send + Sync,
{
    fn denoise(&self, stack: &FrameStack) -> Result<RawFrame> {
        (self.f)(stack)
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

/// Returns the center frame unchanged.
pub struct Identity;

impl Denoiser for Identity {
    fn denoise(&self, stack: &FrameStack) -> Result<RawFrame> {
        Ok(stack.center().clone())
    }

    fn denoise_pixel(&self, stack: &FrameStack, x: usize, y: usize) -> Result<f64> {
        Ok(stack.center().data.get(x, y))
    }

    fn name(&self) -> String {
        "identity".into()
    }
}

/// Pixelwise mean of the stack.
pub struct TemporalMean;

impl Denoiser for TemporalMean {
    fn denoise(&self, stack: &FrameStack) -> Result<RawFrame> {
        let c = stack.center();
        let n = stack.frames.len() as f64;
        let mut acc = Plane::zeros(c.width(), c.height());
        for f in &stack.frames {
            c.same_layout(f)?;
            acc.data_mut().iter_mut().zip(f.data.data()).for_each(|(a, v)| *a += v);
        }
        c.with_data(acc.map(|v| v / n))
    }

    fn name(&self) -> String {
        "temporal_mean".into()
    }
}

/// Gaussian blur of each CFA plane of the center frame.
pub struct GaussianBlur {
    pub sigma: f64,
}

impl Denoiser for GaussianBlur {
    fn denoise(&self, stack: &FrameStack) -> Result<RawFrame> {
        let c = stack.center();
        let planes = pack_planes(&c.data)?.map(|p| gaussian_blur(&p, self.sigma));
        c.with_data(unpack_planes(&planes)?)
    }

    fn name(&self) -> String {
        format!("gaussian_blur({})", self.sigma)
    }
}

/// Mean squared error between the denoised center frame and the noisy
/// center frame itself, with the contiguous stack `t-2..t+2`.
pub fn blindspot_loss(denoiser: &dyn Denoiser, seq: &VideoSequence<RawFrame>, t: usize) -> Result<f64> {
    let stack = build_stack(seq, t, &BLINDSPOT_OFFSETS)?;
    let pred = denoiser.denoise(&stack)?;
    let target = &seq.frames[t];
    target.same_layout(&pred)?;
    let n = pred.data.len() as f64;
    Ok(pred
        .data
        .data()
        .iter()
        .zip(target.data.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mf2fConfig {
    pub offsets: Vec<isize>,
    pub tvl1: TvL1Params,
    pub occlusion: OcclusionParams,
    pub demosaic: DemosaicMethod,
    pub interpolation: Interpolation,
}

impl Default for Mf2fConfig {
    fn default() -> Self {
        Mf2fConfig {
            offsets: MF2F_OFFSETS.to_vec(),
            tvl1: TvL1Params::default(),
            occlusion: OcclusionParams::default(),
            demosaic: DemosaicMethod::HamiltonAdams,
            interpolation: Interpolation::Bicubic,
        }
    }
}

/// Flow from frame `t` to frame `t - 1` and the pixels it can be trusted on.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub t: usize,
    pub target_index: usize,
    /// `f_t(x + flow(x)) ≈ f_{t-1}(x)`.
    pub flow: FlowField,
    /// Occlusion mask and in-bounds warp combined.
    pub trusted: Plane<bool>,
}

/// Luminance of the Hamilton-Adams demosaic, the input to optical flow.
pub fn flow_luminance(raw: &RawFrame) -> Result<Plane> {
    Ok(demosaic_ha(raw)?.luminance())
}

/// Computes the alignment of `t` onto `t - 1` from the noisy frames.
pub fn align(seq: &VideoSequence<RawFrame>, t: usize, config: &Mf2fConfig) -> Result<Alignment> {
    if t >= seq.len() || seq.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "t={t} in a {}-frame sequence has no previous frame",
            seq.len()
        )));
    }
    let target_index = mf2f_target_index(t, seq.len());
    let cur = flow_luminance(&seq.frames[t])?;
    let prev = flow_luminance(&seq.frames[target_index])?;
    let fwd = tvl1_flow(&prev, &cur, &config.tvl1)?;
    let bwd = tvl1_flow(&cur, &prev, &config.tvl1)?;
    let kappa = occlusion_mask(&fwd, &bwd, &config.occlusion)?;
    let (w, h) = fwd.dims();
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    let trusted = Plane::from_fn(w, h, |x, y| {
        let sx = x as f64 + fwd.u.get(x, y);
        let sy = y as f64 + fwd.v.get(x, y);
        kappa.get(x, y) && (0.0..=xmax).contains(&sx) && (0.0..=ymax).contains(&sy)
    });
    Ok(Alignment {
        t,
        target_index,
        flow: fwd,
        trusted,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mf2fResult {
    pub loss: f64,
    /// Fraction of trusted pixels.
    pub coverage: f64,
    /// Warped prediction minus target on trusted pixels, zero elsewhere.
    pub residual: Plane,
}

/// Masked mean absolute deviation between the warped prediction and the
/// target frame.
pub fn mf2f_loss_aligned(
    prediction: &RawFrame,
    target: &RawFrame,
    alignment: &Alignment,
    config: &Mf2fConfig,
) -> Result<Mf2fResult> {
    prediction.same_layout(target)?;
    let (warped, _) = demosaic_warp_remosaic(prediction, &alignment.flow, config.demosaic, config.interpolation)?;
    masked_l1(&warped.data, &target.data, &alignment.trusted)
}

fn masked_l1(warped: &Plane, target: &Plane, trusted: &Plane<bool>) -> Result<Mf2fResult> {
    let count = trusted.data().iter().filter(|&&t| t).count();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let residual = Plane::from_fn(warped.width(), warped.height(), |x, y| {
        if trusted.get(x, y) {
            warped.get(x, y) - target.get(x, y)
        } else {
            0.0
        }
    });
    let loss = residual.data().iter().map(|r| r.abs()).sum::<f64>() / count as f64;
    Ok(Mf2fResult {
        loss,
        coverage: count as f64 / trusted.len() as f64,
        residual,
    })
}

/// Subgradient of [`mf2f_loss_aligned`] with respect to every predicted
/// pixel: `Aᵀ sign(r) / n` with `A` the warp chain linearized at the
/// prediction (Hamilton-Adams directions frozen). Costs one chain
/// evaluation per pixel; meant for small checks.
pub fn mf2f_gradient(
    prediction: &RawFrame,
    target: &RawFrame,
    alignment: &Alignment,
    config: &Mf2fConfig,
) -> Result<Plane> {
    let result = mf2f_loss_aligned(prediction, target, alignment, config)?;
    let count = alignment.trusted.data().iter().filter(|&&t| t).count() as f64;
    let (w, h) = (prediction.width(), prediction.height());
    let dirs = match config.demosaic {
        DemosaicMethod::HamiltonAdams => Some(ha_directions(prediction)?),
        DemosaicMethod::Bilinear => None,
    };
    let mut grad = Plane::zeros(w, h);
    for j in 0..w * h {
        let mut impulse = Plane::zeros(w, h);
        impulse.data_mut()[j] = 1.0;
        let e = prediction.with_data(impulse)?;
        let column = match &dirs {
            Some(d) => ha_warp_remosaic_with(&e, d, &alignment.flow, config.interpolation)?.0,
            None => demosaic_warp_remosaic(&e, &alignment.flow, config.demosaic, config.interpolation)?.0,
        };
        let g: f64 = column
            .data
            .data()
            .iter()
            .zip(result.residual.data())
            .zip(alignment.trusted.data())
            .filter(|(_, &t)| t)
            .map(|((a, r), _)| if *r == 0.0 { 0.0 } else { a * r.signum() })
            .sum();
        grad.data_mut()[j] = g / count;
    }
    Ok(grad)
}

/// MF2F loss evaluator for one sequence; alignments are computed once per
/// `t` and reused.
pub struct Mf2fEvaluator<'a> {
    seq: &'a VideoSequence<RawFrame>,
    config: Mf2fConfig,
    cache: Mutex<HashMap<usize, Arc<Alignment>>>,
}

impl<'a> Mf2fEvaluator<'a> {
    pub fn new(seq: &'a VideoSequence<RawFrame>, config: Mf2fConfig) -> Result<Self> {
        check_offsets(&config.offsets)?;
        config.tvl1.validate()?;
        Ok(Mf2fEvaluator {
            seq,
            config,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &Mf2fConfig {
        &self.config
    }

    pub fn alignment(&self, t: usize) -> Result<Arc<Alignment>> {
        if let Some(a) = self.cache.lock().expect("poisoned").get(&t) {
            return Ok(a.clone());
        }
        let a = Arc::new(align(self.seq, t, &self.config)?);
        Ok(self.cache.lock().expect("poisoned").entry(t).or_insert(a).clone())
    }

    pub fn stack(&self, t: usize) -> Result<FrameStack> {
        build_mf2f_stack(self.seq, t, &self.config.offsets)
    }

    pub fn loss(&self, denoiser: &dyn Denoiser, t: usize) -> Result<Mf2fResult> {
        let stack = self.stack(t)?;
        let pred = denoiser.denoise(&stack)?;
        self.loss_of(&pred, t)
    }

    /// Loss of an already computed prediction for time `t`.
    pub fn loss_of(&self, prediction: &RawFrame, t: usize) -> Result<Mf2fResult> {
        let alignment = self.alignment(t)?;
        mf2f_loss_aligned(
            prediction,
            &self.seq.frames[alignment.target_index],
            &alignment,
            &self.config,
        )
    }
}

/// One-shot MF2F loss at time `t`.
pub fn mf2f_loss(
    denoiser: &dyn Denoiser,
    seq: &VideoSequence<RawFrame>,
    t: usize,
    config: &Mf2fConfig,
) -> Result<Mf2fResult> {
    Mf2fEvaluator::new(seq, config.clone())?.loss(denoiser, t)
}
