//! PSNR and SSIM.
//!
//! Raw-domain scores are computed on the four packed CFA planes; SSIM is
//! averaged over the planes. PSNR uses peak 1 on normalized data.

use crate::error::{Error, Result};
use crate::frame::{pack_planes, RawFrame};
use crate::plane::Plane;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// `10 log10(peak^2 / MSE)`; `+inf` when the inputs are identical.
pub fn psnr(a: &Plane, b: &Plane, peak: f64) -> Result<f64> {
    a.ensure_same_dims(b)?;
    if !(peak > 0.0) {
        return Err(Error::InvalidParameter(format!("peak must be positive, got {peak}")));
    }
    if a.is_empty() {
        return Err(Error::Dimensions("empty planes".into()));
    }
    let mse = mse(a, b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub fn mse(a: &Plane, b: &Plane) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable valid-mode filtering with the SSIM window.
fn filter_valid(p: &Plane, w: &[f64; SSIM_WINDOW]) -> Plane {
    let (width, height) = p.dims();
    let ow = width - SSIM_WINDOW + 1;
    let oh = height - SSIM_WINDOW + 1;
    let horiz = Plane::from_fn(ow, height, |x, y| {
        let row = p.row(y);
        w.iter().enumerate().map(|(k, wk)| wk * row[x + k]).sum::<f64>()
    });
    Plane::from_fn(ow, oh, |x, y| {
        w.iter()
            .enumerate()
            .map(|(k, wk)| wk * horiz.get(x, y + k))
            .sum::<f64>()
    })
}

/// Mean SSIM over all valid 11x11 Gaussian windows (sigma 1.5),
/// `C1 = (0.01 L)^2`, `C2 = (0.03 L)^2`.
pub fn ssim(a: &Plane, b: &Plane, dynamic_range: f64) -> Result<f64> {
    a.ensure_same_dims(b)?;
    if !(dynamic_range > 0.0) {
        return Err(Error::InvalidParameter("dynamic range must be positive".into()));
    }
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Dimensions(format!(
            "{w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    let win = gaussian_window();
    let mu_a = filter_valid(a, &win);
    let mu_b = filter_valid(b, &win);
    let aa = filter_valid(&a.map(|v| v * v), &win);
    let bb = filter_valid(&b.map(|v| v * v), &win);
    let ab = filter_valid(&a.zip_map(b, |x, y| x * y)?, &win);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a.data()[i], mu_b.data()[i]);
        let va = aa.data()[i] - ma * ma;
        let vb = bb.data()[i] - mb * mb;
        let cov = ab.data()[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / n as f64)
}

/// PSNR between two raw frames with peak 1.
pub fn psnr_raw(a: &RawFrame, b: &RawFrame) -> Result<f64> {
    a.same_layout(b)?;
    psnr(&a.data, &b.data, 1.0)
}

/// SSIM between two raw frames, averaged over the four packed planes.
pub fn ssim_raw(a: &RawFrame, b: &RawFrame) -> Result<f64> {
    a.same_layout(b)?;
    let pa = pack_planes(&a.data)?;
    let pb = pack_planes(&b.data)?;
    let mut total = 0.0;
    for (x, y) in pa.iter().zip(&pb) {
        total += ssim(x, y, 1.0)?;
    }
    Ok(total / 4.0)
}
