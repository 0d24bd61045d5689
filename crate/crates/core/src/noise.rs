//! Synthetic noise: heteroscedastic Gaussian and Poisson + Tukey-lambda
//! (with row banding and quantization).

use rand::distr::Open01;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{RawFrame, VideoSequence};
use crate::plane::Plane;
use crate::rng::{child_stream, derive_stream, stage, Stream};

/// Variance `sigma^2(u) = a u + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeteroGaussianParams {
    pub a: f64,
    pub b: f64,
}

impl HeteroGaussianParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let p = HeteroGaussianParams { a, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.b >= 0.0) || !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "heteroscedastic parameters must be finite and non-negative (a={}, b={})",
                self.a, self.b
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn variance(&self, u: f64) -> f64 {
        self.a * u + self.b
    }
}

/// Low-light sensor model: shot noise `k Poisson(u / k)`, Tukey-lambda read
/// noise, one Gaussian offset per row, then uniform quantization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonTukeyParams {
    pub k_gain: f64,
    pub tl_lambda: f64,
    pub tl_scale: f64,
    pub sigma_row: f64,
    pub quant_step: f64,
}

impl PoissonTukeyParams {
    /// Example parameter set shipped with the tool. These are user-editable
    /// inputs describing an illustrative low-light sensor, not measured values.
    pub const EXAMPLE: PoissonTukeyParams = PoissonTukeyParams {
        k_gain: 0.002,
        tl_lambda: -0.1,
        tl_scale: 0.004,
        sigma_row: 0.0005,
        quant_step: 1.0 / 4095.0,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = self.k_gain > 0.0
            && self.tl_scale > 0.0
            && self.sigma_row >= 0.0
            && self.quant_step >= 0.0
            && self.tl_lambda.is_finite()
            && [self.k_gain, self.tl_scale, self.sigma_row, self.quant_step]
                .iter()
                .all(|v| v.is_finite());
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "invalid Poisson-Tukey parameters {self:?}"
            )));
        }
        Ok(())
    }
}

/// Noise model file format, tagged by `"type"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseModel {
    HeteroGaussian(HeteroGaussianParams),
    PoissonTukey(PoissonTukeyParams),
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::HeteroGaussian(p) => p.validate(),
            NoiseModel::PoissonTukey(p) => p.validate(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: NoiseModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }
}

/// Anything that turns a clean frame into a noisy one given a stream.
pub trait FrameNoiser: Sync {
    fn noisify(&self, clean: &RawFrame, rng: &mut Stream) -> Result<RawFrame>;
}

impl FrameNoiser for NoiseModel {
    fn noisify(&self, clean: &RawFrame, rng: &mut Stream) -> Result<RawFrame> {
        let data = match self {
            NoiseModel::HeteroGaussian(p) => sample_hetero_gaussian(&clean.data, p, rng)?,
            NoiseModel::PoissonTukey(p) => sample_poisson_tukey(&clean.data, p, rng)?,
        };
        clean.with_data(data)
    }
}

/// `v = u + z sqrt(a u + b)` with iid standard normal `z`. No clipping.
pub fn sample_hetero_gaussian<R: Rng + ?Sized>(u: &Plane, params: &HeteroGaussianParams, rng: &mut R) -> Result<Plane> {
    params.validate()?;
    let mut out = u.clone();
    for v in out.data_mut() {
        let var = params.variance(*v);
        if var < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "negative variance {var} at intensity {v}"
            )));
        }
        let z: f64 = StandardNormal.sample(rng);
        *v += z * var.sqrt();
    }
    Ok(out)
}

/// Tukey-lambda quantile `(p^l - (1-p)^l) / l`, with the logistic limit
/// `ln(p / (1-p))` for `|l| < 1e-6`.
#[inline]
pub fn tukey_lambda_quantile(p: f64, lambda: f64) -> f64 {
    if lambda.abs() < 1e-6 {
        (p / (1.0 - p)).ln()
    } else {
        (p.powf(lambda) - (1.0 - p).powf(lambda)) / lambda
    }
}

/// Inverse-transform draws `scale * Q(U; shape)`, `U` uniform on `(0, 1)`.
pub fn sample_tukey_lambda<R: Rng + ?Sized>(shape: f64, scale: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(scale > 0.0) {
        return Err(Error::InvalidParameter(format!("Tukey-lambda scale {scale}")));
    }
    Ok((0..n)
        .map(|_| {
            let p: f64 = Open01.sample(rng);
            scale * tukey_lambda_quantile(p, shape)
        })
        .collect())
}

/// Rate above which Poisson draws use the normal approximation.
pub const POISSON_INVERSION_LIMIT: f64 = 30.0;

/// One Poisson draw: CDF inversion below [`POISSON_INVERSION_LIMIT`],
/// otherwise `floor(rate + sqrt(rate) z + 1/2)` clipped at zero.
pub fn poisson_draw<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    if rate < POISSON_INVERSION_LIMIT {
        let u: f64 = rng.random();
        let mut k = 0u64;
        let mut p = (-rate).exp();
        let mut cdf = p;
        while u > cdf {
            k += 1;
            p *= rate / k as f64;
            cdf += p;
            if p == 0.0 && cdf < u {
                // CDF saturated below u from rounding; u is within ~1e-16 of 1
                break;
            }
        }
        k
    } else {
        let z: f64 = StandardNormal.sample(rng);
        (rate + rate.sqrt() * z + 0.5).floor().max(0.0) as u64
    }
}

/// Independent Poisson draws per pixel.
pub fn sample_poisson<R: Rng + ?Sized>(rates: &Plane, rng: &mut R) -> Result<Plane<u64>> {
    if let Some(r) = rates.data().iter().find(|r| !(**r >= 0.0) || !r.is_finite()) {
        return Err(Error::InvalidParameter(format!("invalid Poisson rate {r}")));
    }
    Ok(rates.map(|r| poisson_draw(r, rng)))
}

/// `v = k Poisson(u / k) + TL(lambda, scale) + row offset`, then
/// `round(v / q) q` when `q > 0`. Shot, read and row components draw from
/// three child streams split off `rng`, so each component's draws line up
/// across calls that share a stream state.
pub fn sample_poisson_tukey(u: &Plane, params: &PoissonTukeyParams, rng: &mut Stream) -> Result<Plane> {
    params.validate()?;
    if let Some(v) = u.data().iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "Poisson-Tukey model needs non-negative intensities, got {v}"
        )));
    }
    let mut shot_rng = child_stream(rng);
    let mut read_rng = child_stream(rng);
    let mut row_rng = child_stream(rng);
    let k = params.k_gain;
    let read = sample_tukey_lambda(params.tl_lambda, params.tl_scale, u.len(), &mut read_rng)?;
    let rows: Vec<f64> = if params.sigma_row > 0.0 {
        let normal = Normal::new(0.0, params.sigma_row).expect("validated");
        (0..u.height()).map(|_| normal.sample(&mut row_rng)).collect()
    } else {
        vec![0.0; u.height()]
    };
    let w = u.width();
    let mut out = u.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let shot = k * poisson_draw(*v / k, &mut shot_rng) as f64;
        let mut s = shot + read[i] + rows[i / w];
        if params.quant_step > 0.0 {
            s = (s / params.quant_step).round() * params.quant_step;
        }
        *v = s;
    }
    Ok(out)
}

/// Add noise to every frame of every sequence. Frame `i` of sequence `id`
/// uses the `(seed, id, "noise", i)` stream, so the output is independent
/// of the number of worker threads.
pub fn synthesize_noisy_dataset(
    clean: &[VideoSequence<RawFrame>],
    model: &NoiseModel,
    seed: u64,
    clamp: bool,
) -> Result<Vec<VideoSequence<RawFrame>>> {
    model.validate()?;
    clean
        .par_iter()
        .map(|seq| {
            let frames = seq
                .frames
                .par_iter()
                .enumerate()
                .map(|(i, f)| {
                    let mut rng = derive_stream(seed, &seq.id, stage::NOISE, i as u64);
                    let mut noisy = model.noisify(f, &mut rng)?;
                    if clamp {
                        noisy.data.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
                    }
                    Ok(noisy)
                })
                .collect::<Result<Vec<_>>>()?;
            VideoSequence::new(seq.id.clone(), seq.frame_rate, frames)
        })
        .collect()
}
