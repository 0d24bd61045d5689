//! Finite-perturbation receptive field probe.

use rayon::prelude::*;
use serde::Serialize;

use super::{Denoiser, FrameStack};
use crate::error::{Error, Result};

/// Absolute output change above which an input counts as influential.
pub const PROBE_THRESHOLD: f64 = 1e-9;
/// Smaller perturbations drown in rounding noise.
pub const MIN_PROBE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RfProbeReport {
    pub pixel: (usize, usize),
    pub radius: usize,
    pub epsilon: f64,
    /// `(stack slot, dx, dy)` of every influential input.
    pub influential: Vec<(usize, isize, isize)>,
    /// The center frame's own pixel has no influence.
    pub has_blind_spot: bool,
    /// Output change from perturbing the center frame's own pixel.
    pub center_delta: f64,
}

impl RfProbeReport {
    pub fn is_influential(&self, slot: usize, dx: isize, dy: isize) -> bool {
        self.influential.contains(&(slot, dx, dy))
    }
}

/// Perturb every input pixel within `radius` of `pixel`, in every stack
/// frame, by `epsilon` and record which ones move the output at `pixel`.
pub fn probe_receptive_field(
    denoiser: &dyn Denoiser,
    stack: &FrameStack,
    pixel: (usize, usize),
    radius: usize,
    epsilon: f64,
) -> Result<RfProbeReport> {
    if !(epsilon.abs() >= MIN_PROBE_EPSILON) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "probe perturbation {epsilon} is below the numerical floor {MIN_PROBE_EPSILON}"
        )));
    }
    let (x, y) = pixel;
    let c = stack.center();
    if x < radius || y < radius || x + radius >= c.width() || y + radius >= c.height() {
        return Err(Error::InvalidParameter(format!(
            "probe window of radius {radius} around ({x}, {y}) leaves the {}x{} frame",
            c.width(),
            c.height()
        )));
    }
    let base = denoiser.denoise_pixel(stack, x, y)?;
    let r = radius as isize;
    let probes: Vec<(usize, isize, isize)> = (0..stack.frames.len())
        .flat_map(|s| (-r..=r).flat_map(move |dy| (-r..=r).map(move |dx| (s, dx, dy))))
        .collect();
    let delta = |&(slot, dx, dy): &(usize, isize, isize)| -> Result<f64> {
        let mut perturbed = stack.clone();
        let (px, py) = ((x as isize + dx) as usize, (y as isize + dy) as usize);
        let frame = &mut perturbed.frames[slot].data;
        frame.set(px, py, frame.get(px, py) + epsilon);
        Ok(denoiser.denoise_pixel(&perturbed, x, y)? - base)
    };
    let deltas: Vec<f64> = if denoiser.concurrent() {
        probes.par_iter().map(delta).collect::<Result<_>>()?
    } else {
        probes.iter().map(delta).collect::<Result<_>>()?
    };
    let center_slot = stack.center_slot();
    let mut center_delta = 0.0;
    let mut influential = Vec::new();
    for (p, d) in probes.iter().zip(&deltas) {
        if *p == (center_slot, 0, 0) {
            center_delta = d.abs();
        }
        if d.abs() > PROBE_THRESHOLD {
            influential.push(*p);
        }
    }
    Ok(RfProbeReport {
        pixel,
        radius,
        epsilon,
        has_blind_spot: center_delta <= PROBE_THRESHOLD,
        influential,
        center_delta,
    })
}
