//! TV-L1 optical flow, warping and occlusion masks.
//!
//! Flow convention: `reference(x + flow(x)) ≈ target(x)`, so warping the
//! reference by the flow aligns it with the target.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demosaic::{demosaic_warp_remosaic, DemosaicMethod};
use crate::error::{Error, Result};
use crate::frame::{RawFrame, RgbFrame};
use crate::plane::{mirror_index, Plane};

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Plane,
    pub v: Plane,
}

impl FlowField {
    pub fn new(u: Plane, v: Plane) -> Result<Self> {
        u.ensure_same_dims(&v)?;
        let f = FlowField { u, v };
        if !f.u.all_finite() || !f.v.all_finite() {
            return Err(Error::InvalidParameter("flow has non-finite values".into()));
        }
        Ok(f)
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        FlowField {
            u: Plane::filled(width, height, u),
            v: Plane::filled(width, height, v),
        }
    }

    pub fn width(&self) -> usize {
        self.u.width()
    }

    pub fn height(&self) -> usize {
        self.u.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.u.dims()
    }

    pub fn magnitude(&self) -> Plane {
        self.u.zip_map(&self.v, f64::hypot).expect("same dims")
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.magnitude().mean()
    }

    /// Mean endpoint error against `truth` over the central `fraction` of
    /// each dimension.
    pub fn mean_endpoint_error(&self, truth: &FlowField, fraction: f64) -> Result<f64> {
        self.u.ensure_same_dims(&truth.u)?;
        let (w, h) = self.dims();
        let mx = ((1.0 - fraction) / 2.0 * w as f64).round() as usize;
        let my = ((1.0 - fraction) / 2.0 * h as f64).round() as usize;
        let (mut sum, mut n) = (0.0, 0usize);
        for y in my..h - my {
            for x in mx..w - mx {
                sum += (self.u.get(x, y) - truth.u.get(x, y)).hypot(self.v.get(x, y) - truth.v.get(x, y));
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Dimensions("empty evaluation region".into()));
        }
        Ok(sum / n as f64)
    }

    fn check_finite(&self) -> Result<()> {
        if !self.u.all_finite() || !self.v.all_finite() {
            return Err(Error::InvalidParameter("flow has non-finite values".into()));
        }
        Ok(())
    }
}

const FLO_MAGIC: &[u8; 4] = b"PIEH";

/// Middlebury `.flo`: magic, width and height as little-endian i32, then
/// interleaved little-endian f32 `(u, v)` row-major.
pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(FLO_MAGIC).map_err(io)?;
    w.write_all(&(flow.width() as i32).to_le_bytes()).map_err(io)?;
    w.write_all(&(flow.height() as i32).to_le_bytes()).map_err(io)?;
    for (u, v) in flow.u.data().iter().zip(flow.v.data()) {
        w.write_all(&(*u as f32).to_le_bytes()).map_err(io)?;
        w.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let io = |e| Error::io(path, e);
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io)?)
        .read_to_end(&mut bytes)
        .map_err(io)?;
    if bytes.len() < 12 || &bytes[..4] != FLO_MAGIC {
        return Err(Error::format(path, "missing PIEH header"));
    }
    let dim = |i: usize| i32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let (w, h) = (dim(4), dim(8));
    if w <= 0 || h <= 0 {
        return Err(Error::format(path, format!("bad dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    if bytes.len() != 12 + 8 * w * h {
        return Err(Error::format(
            path,
            format!("expected {} bytes of flow data", 8 * w * h),
        ));
    }
    let val = |i: usize| f32::from_le_bytes(bytes[12 + 4 * i..16 + 4 * i].try_into().unwrap()) as f64;
    let u = Plane::from_fn(w, h, |x, y| val(2 * (y * w + x)));
    let v = Plane::from_fn(w, h, |x, y| val(2 * (y * w + x) + 1));
    FlowField::new(u, v).map_err(|e| Error::format(path, e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Bicubic,
    Bilinear,
}

impl std::str::FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bicubic" => Ok(Interpolation::Bicubic),
            "bilinear" => Ok(Interpolation::Bilinear),
            other => Err(Error::InvalidParameter(format!("unknown interpolation {other:?}"))),
        }
    }
}

/// Keys cubic convolution kernel with `a = -0.5` at offsets -1, 0, 1, 2
/// from the sample's integer part.
#[inline]
fn keys_weights(t: f64) -> [f64; 4] {
    const A: f64 = -0.5;
    let far = |s: f64| A * s * s * s - 5.0 * A * s * s + 8.0 * A * s - 4.0 * A;
    let near = |s: f64| (A + 2.0) * s * s * s - (A + 3.0) * s * s + 1.0;
    [far(1.0 + t), near(t), near(1.0 - t), far(2.0 - t)]
}

/// Sample `p` at real coordinates with mirror padding.
#[inline]
pub fn sample(p: &Plane, x: f64, y: f64, interp: Interpolation) -> f64 {
    let (w, h) = p.dims();
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let (ix, iy) = (fx as isize, fy as isize);
    let px = |i: isize| mirror_index(i, w);
    let py = |i: isize| mirror_index(i, h);
    match interp {
        Interpolation::Bicubic => {
            let wx = keys_weights(tx);
            let wy = keys_weights(ty);
            let mut acc = 0.0;
            for (j, wyj) in wy.iter().enumerate() {
                let row = p.row(py(iy + j as isize - 1));
                let mut r = 0.0;
                for (i, wxi) in wx.iter().enumerate() {
                    r += wxi * row[px(ix + i as isize - 1)];
                }
                acc += wyj * r;
            }
            acc
        }
        Interpolation::Bilinear => {
            let (x0, x1, y0, y1) = (px(ix), px(ix + 1), py(iy), py(iy + 1));
            let top = (1.0 - tx) * p.get(x0, y0) + tx * p.get(x1, y0);
            let bottom = (1.0 - tx) * p.get(x0, y1) + tx * p.get(x1, y1);
            (1.0 - ty) * top + ty * bottom
        }
    }
}

/// `out(x) = input(x + flow(x))`, plus a map of samples that stayed inside
/// the frame (outside samples are mirror-padded).
pub fn warp_plane(input: &Plane, flow: &FlowField, interp: Interpolation) -> Result<(Plane, Plane<bool>)> {
    input.ensure_same_dims(&flow.u)?;
    flow.check_finite()?;
    let (w, h) = input.dims();
    let mut out = Plane::zeros(w, h);
    let mut valid = Plane::filled(w, h, false);
    out.data_mut()
        .par_chunks_mut(w)
        .zip(valid.data_mut().par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (row, vrow))| {
            for x in 0..w {
                let sx = x as f64 + flow.u.get(x, y);
                let sy = y as f64 + flow.v.get(x, y);
                row[x] = sample(input, sx, sy, interp);
                vrow[x] = sx >= 0.0 && sx <= (w - 1) as f64 && sy >= 0.0 && sy <= (h - 1) as f64;
            }
        });
    Ok((out, valid))
}

pub fn warp_rgb(frame: &RgbFrame, flow: &FlowField, interp: Interpolation) -> Result<(RgbFrame, Plane<bool>)> {
    let (r, valid) = warp_plane(&frame.r, flow, interp)?;
    let (g, _) = warp_plane(&frame.g, flow, interp)?;
    let (b, _) = warp_plane(&frame.b, flow, interp)?;
    Ok((RgbFrame::new(r, g, b)?, valid))
}

/// Raw-domain warp: demosaic, warp in RGB, re-mosaic.
pub fn warp_raw(
    raw: &RawFrame,
    flow: &FlowField,
    method: DemosaicMethod,
    interp: Interpolation,
) -> Result<(RawFrame, Plane<bool>)> {
    demosaic_warp_remosaic(raw, flow, method, interp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionParams {
    pub alpha: f64,
    pub beta: f64,
    pub div_thresh: f64,
}

impl Default for OcclusionParams {
    fn default() -> Self {
        OcclusionParams {
            alpha: 0.01,
            beta: 0.5,
            div_thresh: 0.5,
        }
    }
}

/// Trusted pixels: forward-backward consistent
/// (`|f + b(x + f)|² < α(|f|² + |b(x + f)|²) + β`, with `b` sampled
/// bilinearly at clamped positions) and not contracting
/// (central-difference divergence of `f` above `-div_thresh`).
pub fn occlusion_mask(fwd: &FlowField, bwd: &FlowField, params: &OcclusionParams) -> Result<Plane<bool>> {
    fwd.u.ensure_same_dims(&bwd.u)?;
    let (w, h) = fwd.dims();
    let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
    Ok(Plane::from_fn(w, h, |x, y| {
        let (fu, fv) = (fwd.u.get(x, y), fwd.v.get(x, y));
        let sx = (x as f64 + fu).clamp(0.0, xmax);
        let sy = (y as f64 + fv).clamp(0.0, ymax);
        let bu = sample(&bwd.u, sx, sy, Interpolation::Bilinear);
        let bv = sample(&bwd.v, sx, sy, Interpolation::Bilinear);
        let lhs = (fu + bu).powi(2) + (fv + bv).powi(2);
        let rhs = params.alpha * (fu * fu + fv * fv + bu * bu + bv * bv) + params.beta;
        let (xi, yi) = (x as isize, y as isize);
        let div = 0.5 * (fwd.u.get_mirrored(xi + 1, yi) - fwd.u.get_mirrored(xi - 1, yi))
            + 0.5 * (fwd.v.get_mirrored(xi, yi + 1) - fwd.v.get_mirrored(xi, yi - 1));
        lhs < rhs && div > -params.div_thresh
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvL1Params {
    /// Data term weight.
    pub lambda: f64,
    /// Coupling between the flow and its auxiliary variable.
    pub theta: f64,
    /// Dual step; at most 0.25.
    pub tau: f64,
    /// Maximum pyramid levels; `None` picks as many as keep the coarsest
    /// level at least [`MIN_PYRAMID_SIZE`] pixels.
    pub scales: Option<usize>,
    pub zoom: f64,
    pub warps: usize,
    /// Inner loop stops when the mean squared flow update drops below `epsilon²`.
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Default for TvL1Params {
    fn default() -> Self {
        TvL1Params {
            lambda: 0.15,
            theta: 0.3,
            tau: 0.25,
            scales: None,
            zoom: 0.5,
            warps: 5,
            epsilon: 0.01,
            max_iterations: 300,
        }
    }
}

impl TvL1Params {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tau > 0.0
            && self.tau <= 0.25
            && self.zoom > 0.0
            && self.zoom < 1.0
            && self.lambda > 0.0
            && self.theta > 0.0
            && self.warps >= 1
            && self.max_iterations >= 1
            && self.epsilon >= 0.0
            && self.scales != Some(0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid TV-L1 parameters {self:?}")))
        }
    }
}

pub const MIN_PYRAMID_SIZE: usize = 16;
const PRESMOOTHING_SIGMA: f64 = 0.8;
const ZOOM_SIGMA_ZERO: f64 = 0.6;
const GRAD_IS_ZERO: f64 = 1e-10;

/// Separable Gaussian blur with mirror borders (kernel radius ⌈4σ⌉).
pub fn gaussian_blur(p: &Plane, sigma: f64) -> Plane {
    if sigma <= 0.0 {
        return p.clone();
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (w, h) = p.dims();
    let horiz = Plane::from_fn(w, h, |x, y| {
        let row = p.row(y);
        k.iter()
            .enumerate()
            .map(|(i, kv)| kv * row[mirror_index(x as isize + i as isize - radius, w)])
            .sum::<f64>()
    });
    Plane::from_fn(w, h, |x, y| {
        k.iter()
            .enumerate()
            .map(|(i, kv)| kv * horiz.get(x, mirror_index(y as isize + i as isize - radius, h)))
            .sum()
    })
}

/// Bicubic resampling onto a `w x h` grid, pixel `i` reading source
/// coordinate `i * src / dst`.
fn resample(p: &Plane, w: usize, h: usize) -> Plane {
    let fx = p.width() as f64 / w as f64;
    let fy = p.height() as f64 / h as f64;
    Plane::from_fn(w, h, |x, y| {
        sample(p, x as f64 * fx, y as f64 * fy, Interpolation::Bicubic)
    })
}

fn zoom_size(n: usize, zoom: f64) -> usize {
    ((n as f64 * zoom + 0.5) as usize).max(1)
}

fn zoom_out(p: &Plane, zoom: f64) -> Plane {
    let sigma = ZOOM_SIGMA_ZERO * (1.0 / (zoom * zoom) - 1.0).sqrt();
    let blurred = gaussian_blur(p, sigma);
    resample(&blurred, zoom_size(p.width(), zoom), zoom_size(p.height(), zoom))
}

/// Centered differences, one-sided... zero at the border rows/columns.
fn centered_gradient(p: &Plane) -> (Plane, Plane) {
    let (w, h) = p.dims();
    let gx = Plane::from_fn(w, h, |x, y| {
        if x == 0 || x + 1 == w {
            0.0
        } else {
            0.5 * (p.get(x + 1, y) - p.get(x - 1, y))
        }
    });
    let gy = Plane::from_fn(w, h, |x, y| {
        if y == 0 || y + 1 == h {
            0.0
        } else {
            0.5 * (p.get(x, y + 1) - p.get(x, y - 1))
        }
    });
    (gx, gy)
}

/// Forward differences, zero on the last column/row.
#[inline]
fn forward_gradient_at(p: &[f64], w: usize, h: usize, x: usize, y: usize) -> (f64, f64) {
    let i = y * w + x;
    let gx = if x + 1 < w { p[i + 1] - p[i] } else { 0.0 };
    let gy = if y + 1 < h { p[i + w] - p[i] } else { 0.0 };
    (gx, gy)
}

/// Divergence adjoint to [`forward_gradient_at`].
#[inline]
fn divergence_at(p1: &[f64], p2: &[f64], w: usize, h: usize, x: usize, y: usize) -> f64 {
    let i = y * w + x;
    let dx = if x == 0 {
        p1[i]
    } else if x + 1 == w {
        -p1[i - 1]
    } else {
        p1[i] - p1[i - 1]
    };
    let dy = if y == 0 {
        p2[i]
    } else if y + 1 == h {
        -p2[i - w]
    } else {
        p2[i] - p2[i - w]
    };
    dx + dy
}

/// Per-iteration record of the inner solver, kept when requested.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TvL1Trace {
    /// `(scale, warp, energies)`; energy after each inner iteration.
    pub energies: Vec<(usize, usize, Vec<f64>)>,
}

/// Relaxed TV-L1 energy at fixed linearization:
/// `Σ |∇u1| + |∇u2| + |u - v|² / 2θ + λ |ρ(v)|`.
struct Linearization<'a> {
    rho_c: &'a [f64],
    ix: &'a [f64],
    iy: &'a [f64],
}

impl Linearization<'_> {
    #[allow(clippy::too_many_arguments)]
    fn energy(&self, u1: &[f64], u2: &[f64], v1: &[f64], v2: &[f64], w: usize, h: usize, p: &TvL1Params) -> f64 {
        let mut e = 0.0;
        for y in 0..h {
            for x in 0..w {
                let (a, b) = forward_gradient_at(u1, w, h, x, y);
                let (c, d) = forward_gradient_at(u2, w, h, x, y);
                let i = y * w + x;
                let rho = self.rho_c[i] + self.ix[i] * v1[i] + self.iy[i] * v2[i];
                e += a.hypot(b)
                    + c.hypot(d)
                    + ((u1[i] - v1[i]).powi(2) + (u2[i] - v2[i]).powi(2)) / (2.0 * p.theta)
                    + p.lambda * rho.abs();
            }
        }
        e
    }
}

pub fn tvl1_flow(target: &Plane, reference: &Plane, params: &TvL1Params) -> Result<FlowField> {
    tvl1_flow_traced(target, reference, params, None)
}

/// [`tvl1_flow`] that optionally records the energy after every inner
/// iteration.
pub fn tvl1_flow_traced(
    target: &Plane,
    reference: &Plane,
    params: &TvL1Params,
    mut trace: Option<&mut TvL1Trace>,
) -> Result<FlowField> {
    params.validate()?;
    target.ensure_same_dims(reference)?;
    let (w, h) = target.dims();
    if w < 2 || h < 2 {
        return Err(Error::Dimensions(format!("{w}x{h} is too small for optical flow")));
    }
    if !target.all_finite() || !reference.all_finite() {
        return Err(Error::InvalidParameter("non-finite image".into()));
    }

    // joint normalization to [0, 255]
    let (lo0, hi0) = target.min_max();
    let (lo1, hi1) = reference.min_max();
    let (lo, hi) = (lo0.min(lo1), hi0.max(hi1));
    let norm = |p: &Plane| {
        if hi > lo {
            p.map(|v| 255.0 * (v - lo) / (hi - lo))
        } else {
            p.map(|_| 0.0)
        }
    };

    // pyramid
    let auto = {
        let m = w.min(h) as f64;
        if m <= MIN_PYRAMID_SIZE as f64 {
            1
        } else {
            1 + ((m / MIN_PYRAMID_SIZE as f64).ln() / (1.0 / params.zoom).ln()).floor() as usize
        }
    };
    let nscales = params.scales.map_or(auto, |s| s.min(auto)).max(1);
    let mut i0s = vec![gaussian_blur(&norm(target), PRESMOOTHING_SIGMA)];
    let mut i1s = vec![gaussian_blur(&norm(reference), PRESMOOTHING_SIGMA)];
    for s in 1..nscales {
        i0s.push(zoom_out(&i0s[s - 1], params.zoom));
        i1s.push(zoom_out(&i1s[s - 1], params.zoom));
    }

    let (cw, ch) = i0s[nscales - 1].dims();
    let mut u1 = Plane::zeros(cw, ch);
    let mut u2 = Plane::zeros(cw, ch);
    for s in (0..nscales).rev() {
        if s + 1 < nscales {
            let (sw, sh) = i0s[s].dims();
            u1 = resample(&u1, sw, sh).scaled(1.0 / params.zoom);
            u2 = resample(&u2, sw, sh).scaled(1.0 / params.zoom);
        }
        solve_scale(&i0s[s], &i1s[s], &mut u1, &mut u2, params, s, trace.as_deref_mut());
    }
    FlowField::new(u1, u2)
}

#[allow(clippy::too_many_arguments)]
fn solve_scale(
    i0: &Plane,
    i1: &Plane,
    u1: &mut Plane,
    u2: &mut Plane,
    params: &TvL1Params,
    scale: usize,
    mut trace: Option<&mut TvL1Trace>,
) {
    let (w, h) = i0.dims();
    let n = w * h;
    let l_t = params.lambda * params.theta;
    let taut = params.tau / params.theta;
    let (i1x, i1y) = centered_gradient(i1);
    let mut p11 = vec![0.0; n];
    let mut p12 = vec![0.0; n];
    let mut p21 = vec![0.0; n];
    let mut p22 = vec![0.0; n];
    let mut v1 = vec![0.0; n];
    let mut v2 = vec![0.0; n];

    for warp in 0..params.warps {
        let flow = FlowField {
            u: u1.clone(),
            v: u2.clone(),
        };
        let (i1w, _) = warp_plane(i1, &flow, Interpolation::Bicubic).expect("same dims");
        let (ix, _) = warp_plane(&i1x, &flow, Interpolation::Bicubic).expect("same dims");
        let (iy, _) = warp_plane(&i1y, &flow, Interpolation::Bicubic).expect("same dims");
        let (ix, iy) = (ix.into_vec(), iy.into_vec());
        let grad: Vec<f64> = ix.iter().zip(&iy).map(|(a, b)| a * a + b * b).collect();
        let rho_c: Vec<f64> = (0..n)
            .map(|i| i1w.data()[i] - ix[i] * u1.data()[i] - iy[i] * u2.data()[i] - i0.data()[i])
            .collect();
        let mut energies = Vec::new();

        let mut iter = 0;
        let mut error = f64::INFINITY;
        while error > params.epsilon * params.epsilon && iter < params.max_iterations {
            iter += 1;
            // pointwise thresholding of the linearized data term
            {
                let (u1d, u2d) = (u1.data(), u2.data());
                v1.par_iter_mut()
                    .zip(v2.par_iter_mut())
                    .enumerate()
                    .for_each(|(i, (a, b))| {
                        let rho = rho_c[i] + ix[i] * u1d[i] + iy[i] * u2d[i];
                        let (d1, d2) = if rho < -l_t * grad[i] {
                            (l_t * ix[i], l_t * iy[i])
                        } else if rho > l_t * grad[i] {
                            (-l_t * ix[i], -l_t * iy[i])
                        } else if grad[i] < GRAD_IS_ZERO {
                            (0.0, 0.0)
                        } else {
                            let fi = -rho / grad[i];
                            (fi * ix[i], fi * iy[i])
                        };
                        *a = u1d[i] + d1;
                        *b = u2d[i] + d2;
                    });
            }
            // primal update from the dual variables
            let theta = params.theta;
            let err: f64 = u1
                .data_mut()
                .par_iter_mut()
                .zip(u2.data_mut().par_iter_mut())
                .enumerate()
                .map(|(i, (a, b))| {
                    let (x, y) = (i % w, i / w);
                    let na = v1[i] + theta * divergence_at(&p11, &p12, w, h, x, y);
                    let nb = v2[i] + theta * divergence_at(&p21, &p22, w, h, x, y);
                    let e = (na - *a).powi(2) + (nb - *b).powi(2);
                    *a = na;
                    *b = nb;
                    e
                })
                .sum();
            error = err / n as f64;
            // dual ascent with projection
            {
                let (u1d, u2d) = (u1.data(), u2.data());
                p11.par_iter_mut()
                    .zip(p12.par_iter_mut())
                    .zip(p21.par_iter_mut().zip(p22.par_iter_mut()))
                    .enumerate()
                    .for_each(|(i, ((a, b), (c, d)))| {
                        let (x, y) = (i % w, i / w);
                        let (u1x, u1y) = forward_gradient_at(u1d, w, h, x, y);
                        let (u2x, u2y) = forward_gradient_at(u2d, w, h, x, y);
                        let ng1 = 1.0 + taut * u1x.hypot(u1y);
                        let ng2 = 1.0 + taut * u2x.hypot(u2y);
                        *a = (*a + taut * u1x) / ng1;
                        *b = (*b + taut * u1y) / ng1;
                        *c = (*c + taut * u2x) / ng2;
                        *d = (*d + taut * u2y) / ng2;
                    });
            }
            if trace.is_some() {
                let lin = Linearization {
                    rho_c: &rho_c,
                    ix: &ix,
                    iy: &iy,
                };
                energies.push(lin.energy(u1.data(), u2.data(), &v1, &v2, w, h, params));
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.energies.push((scale, warp, energies));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use rand::{Rng, SeedableRng};

    fn texture(w: usize, h: usize, seed: u64) -> Plane {
        let mut rng = Stream::seed_from_u64(seed);
        let noise = Plane::from_fn(w, h, |_, _| rng.random::<f64>());
        gaussian_blur(&noise, 2.0)
    }

    /// `p` moved by (dx, dy) with periodic wrap: out(x) = p(x - d).
    fn shifted(p: &Plane, dx: isize, dy: isize) -> Plane {
        let (w, h) = p.dims();
        Plane::from_fn(w, h, |x, y| {
            p.get(
                (x as isize - dx).rem_euclid(w as isize) as usize,
                (y as isize - dy).rem_euclid(h as isize) as usize,
            )
        })
    }

    #[test]
    fn zero_flow_warp_is_identity() {
        let p = texture(33, 20, 1);
        for interp in [Interpolation::Bicubic, Interpolation::Bilinear] {
            let (out, valid) = warp_plane(&p, &FlowField::zeros(33, 20), interp).unwrap();
            assert_eq!(out, p);
            assert!(valid.data().iter().all(|&v| v));
        }
    }

    #[test]
    fn integer_flow_shifts() {
        let p = texture(20, 12, 2);
        let (out, valid) = warp_plane(&p, &FlowField::constant(20, 12, 1.0, 0.0), Interpolation::Bicubic).unwrap();
        for y in 0..12 {
            for x in 0..19 {
                assert_eq!(out.get(x, y), p.get(x + 1, y));
                assert!(valid.get(x, y));
            }
            assert!(!valid.get(19, y));
        }
    }

    #[test]
    fn half_step_on_ramp_is_exact() {
        let ramp = Plane::from_fn(16, 16, |x, y| 0.3 * x as f64 - 0.1 * y as f64 + 2.0);
        let (out, _) = warp_plane(&ramp, &FlowField::constant(16, 16, 0.5, 0.0), Interpolation::Bicubic).unwrap();
        for y in 0..16 {
            for x in 1..13 {
                assert!((out.get(x, y) - (ramp.get(x, y) + 0.15)).abs() < 1e-12);
            }
        }
        // quadratics are reproduced too
        let quad = Plane::from_fn(16, 16, |x, _| (x as f64).powi(2));
        let (out, _) = warp_plane(&quad, &FlowField::constant(16, 16, 0.25, 0.0), Interpolation::Bicubic).unwrap();
        assert!((out.get(7, 3) - 7.25f64.powi(2)).abs() < 1e-9);
    }

    #[test]
    fn warp_is_linear() {
        let a = texture(24, 24, 3);
        let b = texture(24, 24, 4);
        let mut rng = Stream::seed_from_u64(5);
        let flow = FlowField::new(
            Plane::from_fn(24, 24, |_, _| rng.random_range(-3.0..3.0)),
            Plane::from_fn(24, 24, |_, _| rng.random_range(-3.0..3.0)),
        )
        .unwrap();
        for interp in [Interpolation::Bicubic, Interpolation::Bilinear] {
            let combo = a.zip_map(&b, |x, y| 1.5 * x - 0.25 * y).unwrap();
            let (lhs, _) = warp_plane(&combo, &flow, interp).unwrap();
            let (wa, _) = warp_plane(&a, &flow, interp).unwrap();
            let (wb, _) = warp_plane(&b, &flow, interp).unwrap();
            for i in 0..lhs.len() {
                assert!((lhs.data()[i] - (1.5 * wa.data()[i] - 0.25 * wb.data()[i])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn warp_rejects_bad_flow() {
        let p = texture(8, 8, 1);
        let mut f = FlowField::zeros(8, 8);
        f.u.set(3, 3, f64::NAN);
        assert!(warp_plane(&p, &f, Interpolation::Bicubic).is_err());
        assert!(warp_plane(&p, &FlowField::zeros(8, 9), Interpolation::Bicubic).is_err());
    }

    #[test]
    fn mask_consistency_cases() {
        let (w, h) = (32, 16);
        let mut rng = Stream::seed_from_u64(6);
        let smooth = gaussian_blur(&Plane::from_fn(w, h, |_, _| rng.random_range(-2.0..2.0)), 4.0);
        let f = FlowField::new(smooth.clone(), smooth.scaled(0.5)).unwrap();
        let neg = FlowField::new(f.u.scaled(-1.0), f.v.scaled(-1.0)).unwrap();
        // for constant flows the check is exact; smooth flows stay within β
        let c = FlowField::constant(w, h, 1.5, -0.5);
        let cn = FlowField::constant(w, h, -1.5, 0.5);
        let p = OcclusionParams::default();
        assert!(occlusion_mask(&c, &cn, &p).unwrap().data().iter().all(|&v| v));
        assert!(
            occlusion_mask(&f, &neg, &p)
                .unwrap()
                .data()
                .iter()
                .filter(|&&v| v)
                .count()
                > w * h * 9 / 10
        );
        let big = FlowField::constant(w, h, 5.0, 3.0);
        assert!(occlusion_mask(&big, &big, &p).unwrap().data().iter().all(|&v| !v));
    }

    #[test]
    fn mask_flags_contraction_band() {
        let (w, h) = (32, 8);
        let fwd = FlowField::new(
            Plane::from_fn(w, h, |x, _| if x >= 16 { -1.2 } else { 0.0 }),
            Plane::zeros(w, h),
        )
        .unwrap();
        let bwd = FlowField::new(
            Plane::from_fn(w, h, |x, _| if x >= 15 { 1.2 } else { 0.0 }),
            Plane::zeros(w, h),
        )
        .unwrap();
        let mask = occlusion_mask(&fwd, &bwd, &OcclusionParams::default()).unwrap();
        for y in 0..h {
            for x in 0..w {
                assert_eq!(mask.get(x, y), !(x == 15 || x == 16), "({x},{y})");
            }
        }
    }

    #[test]
    fn mask_is_monotone_in_beta() {
        let mut rng = Stream::seed_from_u64(7);
        let mut rand_flow = || {
            FlowField::new(
                gaussian_blur(&Plane::from_fn(24, 24, |_, _| rng.random_range(-3.0..3.0)), 1.0),
                gaussian_blur(&Plane::from_fn(24, 24, |_, _| rng.random_range(-3.0..3.0)), 1.0),
            )
            .unwrap()
        };
        let (f, b) = (rand_flow(), rand_flow());
        let mut prev = occlusion_mask(
            &f,
            &b,
            &OcclusionParams {
                beta: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        for beta in [0.1, 0.5, 1.0, 3.0, 10.0] {
            let m = occlusion_mask(
                &f,
                &b,
                &OcclusionParams {
                    beta,
                    ..Default::default()
                },
            )
            .unwrap();
            for i in 0..m.len() {
                assert!(!prev.data()[i] || m.data()[i]);
            }
            prev = m;
        }
    }

    #[test]
    fn flo_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo");
        let f = FlowField::new(texture(7, 5, 1), texture(7, 5, 2).scaled(-3.0)).unwrap();
        write_flo(&path, &f).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"PIEH");
        assert_eq!(i32::from_le_bytes(bytes[4..8].try_into().unwrap()), 7);
        assert_eq!(bytes.len(), 12 + 8 * 35);
        let g = read_flo(&path).unwrap();
        for i in 0..35 {
            assert_eq!(g.u.data()[i], f.u.data()[i] as f32 as f64);
            assert_eq!(g.v.data()[i], f.v.data()[i] as f32 as f64);
        }
        std::fs::write(&path, b"PIEX\x01\0\0\0\x01\0\0\0\0\0\0\0\0\0\0\0").unwrap();
        assert!(read_flo(&path).is_err());
    }

    #[test]
    fn identical_frames_give_small_flow() {
        let p = texture(96, 80, 8);
        let f = tvl1_flow(&p, &p, &TvL1Params::default()).unwrap();
        assert!(f.mean_magnitude() < 0.05);
    }

    #[test]
    fn constant_frames_give_bounded_flow() {
        let p = Plane::filled(64, 64, 0.3);
        let f = tvl1_flow(&p, &p, &TvL1Params::default()).unwrap();
        assert!(f.magnitude().data().iter().all(|&m| m < 0.5));
    }

    #[test]
    fn recovers_shift() {
        let target = texture(128, 128, 9);
        let reference = shifted(&target, 3, 0);
        let f = tvl1_flow(&target, &reference, &TvL1Params::default()).unwrap();
        let epe = f
            .mean_endpoint_error(&FlowField::constant(128, 128, 3.0, 0.0), 0.8)
            .unwrap();
        assert!(epe < 0.25, "{epe}");
    }

    #[test]
    fn raw_warp_beats_plane_wise_warp_on_aliased_chart() {
        use crate::demosaic::DemosaicMethod;
        use crate::frame::{mosaic, pack_planes, unpack_planes, CfaPattern, Levels};
        let (w, h) = (64, 64);
        let chart = |x: f64, y: f64| 0.5 + 0.4 * (0.9 * x + 0.3 * y).sin();
        let (du, dv) = (0.5, 0.3);
        let gray = |dx: f64, dy: f64| {
            let p = Plane::from_fn(w, h, |x, y| chart(x as f64 + dx, y as f64 + dy));
            RgbFrame::new(p.clone(), p.clone(), p).unwrap()
        };
        let raw = mosaic(&gray(0.0, 0.0), CfaPattern::Rggb, Levels::default()).unwrap();
        let truth = mosaic(&gray(du, dv), CfaPattern::Rggb, Levels::default()).unwrap();
        let flow = FlowField::constant(w, h, du, dv);
        let (chain, _) = warp_raw(&raw, &flow, DemosaicMethod::HamiltonAdams, Interpolation::Bicubic).unwrap();
        let half = FlowField::constant(w / 2, h / 2, du / 2.0, dv / 2.0);
        let planes = pack_planes(&raw.data).unwrap();
        let warped = planes.map(|p| warp_plane(&p, &half, Interpolation::Bicubic).unwrap().0);
        let naive = unpack_planes(&warped).unwrap();
        let err = |p: &Plane| {
            let mut e = 0.0;
            for y in 8..h - 8 {
                for x in 8..w - 8 {
                    e += (p.get(x, y) - truth.data.get(x, y)).abs();
                }
            }
            e
        };
        let (e_chain, e_naive) = (err(&chain.data), err(&naive));
        assert!(e_chain < e_naive, "{e_chain} vs {e_naive}");
    }

    #[test]
    fn inner_energy_ends_below_start() {
        let target = texture(64, 64, 10);
        let reference = shifted(&target, 2, -1);
        let mut trace = TvL1Trace::default();
        tvl1_flow_traced(&target, &reference, &TvL1Params::default(), Some(&mut trace)).unwrap();
        assert_eq!(trace.energies.len(), 5 * 3);
        for (scale, warp, e) in &trace.energies {
            assert!(!e.is_empty());
            assert!(e.last().unwrap() <= e.first().unwrap(), "scale {scale} warp {warp}");
        }
    }

    #[test]
    fn tvl1_rejects_bad_params() {
        let p = texture(32, 32, 1);
        let bad = TvL1Params {
            tau: 0.3,
            ..Default::default()
        };
        assert!(tvl1_flow(&p, &p, &bad).is_err());
        assert!(tvl1_flow(&p, &texture(32, 30, 1), &TvL1Params::default()).is_err());
    }
}
