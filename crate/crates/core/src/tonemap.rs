//! Percentile-matching affine tone map and the gamma display transform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::RgbFrame;

/// Percentile of `values` with linear interpolation between order
/// statistics at rank `p * (n - 1)`. `p` is a fraction in `[0, 1]`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    Ok(percentiles(values, &[p])?[0])
}

/// Several percentiles from one sort-free pass per rank.
pub fn percentiles(values: &[f64], ps: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Degenerate("percentile of an empty sample".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidParameter("NaN in percentile sample".into()));
    }
    let mut buf = values.to_vec();
    let n = buf.len();
    ps.iter()
        .map(|&p| {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("percentile fraction {p}")));
            }
            let rank = p * (n - 1) as f64;
            let lo = rank.floor() as usize;
            let frac = rank - lo as f64;
            let (_, &mut a, rest) = buf.select_nth_unstable_by(lo, f64::total_cmp);
            let b = if frac > 0.0 {
                rest.iter().copied().fold(f64::INFINITY, f64::min)
            } else {
                a
            };
            Ok(a + frac * (b - a))
        })
        .collect()
}

/// Low / high percentile pair of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileStats {
    pub low: f64,
    pub high: f64,
}

impl PercentileStats {
    pub const LOW_FRACTION: f64 = 0.01;
    pub const HIGH_FRACTION: f64 = 0.99;

    /// 1% / 99% percentiles of a sample.
    pub fn of(values: &[f64]) -> Result<Self> {
        Self::with_fractions(values, Self::LOW_FRACTION, Self::HIGH_FRACTION)
    }

    pub fn with_fractions(values: &[f64], p_low: f64, p_high: f64) -> Result<Self> {
        let v = percentiles(values, &[p_low, p_high])?;
        Ok(PercentileStats { low: v[0], high: v[1] })
    }
}

/// `y = scale * x + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub scale: f64,
    pub offset: f64,
}

impl AffineMap {
    pub const IDENTITY: AffineMap = AffineMap {
        scale: 1.0,
        offset: 0.0,
    };

    /// The map sending `source.low -> target.low` and `source.high -> target.high`.
    pub fn matching(source: PercentileStats, target: PercentileStats) -> Result<Self> {
        let span = source.high - source.low;
        if !(span.abs() > 0.0) {
            return Err(Error::Degenerate(format!(
                "source percentiles coincide at {}",
                source.low
            )));
        }
        let scale = (target.high - target.low) / span;
        Ok(AffineMap {
            scale,
            offset: target.low - scale * source.low,
        })
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        self.scale * x + self.offset
    }

    pub fn apply_slice(&self, values: &mut [f64]) {
        for v in values {
            *v = self.apply(*v);
        }
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &AffineMap) -> AffineMap {
        AffineMap {
            scale: self.scale * first.scale,
            offset: self.scale * first.offset + self.offset,
        }
    }
}

/// Fit the affine map that matches the `p_low` / `p_high` percentiles of
/// `source` to those of `target`.
pub fn percentile_tonemap_fit(source: &[f64], target: &[f64], p_low: f64, p_high: f64) -> Result<AffineMap> {
    let s = PercentileStats::with_fractions(source, p_low, p_high)?;
    let t = PercentileStats::with_fractions(target, p_low, p_high)?;
    AffineMap::matching(s, t)
}

/// Display rendering: per-channel gains, then `x^(1/gamma)`, clamped to `[0, 1]`.
pub fn gamma_display(rgb: &RgbFrame, gamma: f64, gains: [f64; 3]) -> Result<RgbFrame> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
    }
    let inv = 1.0 / gamma;
    Ok(rgb.map_channels(|c, p| p.map(|v| (v * gains[c]).clamp(0.0, 1.0).powf(inv))))
}
