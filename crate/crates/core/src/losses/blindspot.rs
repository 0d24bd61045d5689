//! Reference blind-spot network with fixed random weights.
//!
//! Each of the four rotations of the input stack is shifted one pixel down
//! and passed through `depth` 3x3 convolutions that never look below their
//! own row (the first layer uses only its middle row, later ones zero their
//! bottom row), so every output depends only on input rows strictly above
//! it. Un-rotating and merging the four branches with a 1x1 combination
//! covers every direction except the pixel itself.

use std::ops::Range;

use rand_distr::{Distribution, Normal};

use super::{Denoiser, FrameStack};
use crate::error::{Error, Result};
use crate::frame::RawFrame;
use crate::plane::Plane;
use crate::rng::Stream;

const LEAK: f64 = 0.1;

#[derive(Debug, Clone)]
struct Conv3 {
    cin: usize,
    cout: usize,
    /// `[out][in][ky][kx]`, `ky = 0` is the row above.
    weights: Vec<f64>,
}

impl Conv3 {
    fn random(cin: usize, cout: usize, rows: &[usize], rng: &mut Stream) -> Self {
        let fan_in = (cin * rows.len() * 3) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let mut weights = vec![0.0; cout * cin * 9];
        for o in 0..cout {
            for i in 0..cin {
                for &ky in rows {
                    for kx in 0..3 {
                        weights[((o * cin + i) * 3 + ky) * 3 + kx] = normal.sample(rng);
                    }
                }
            }
        }
        Conv3 { cin, cout, weights }
    }

    /// Zero-padded convolution followed by a leaky ReLU.
    fn apply(&self, input: &[Plane]) -> Vec<Plane> {
        let (w, h) = input[0].dims();
        self.apply_region(input, 0..w, 0..h)
    }

    /// [`Conv3::apply`] evaluated only on `xs × ys`; other outputs are 0.
    /// Each computed value is bit-identical to the full evaluation.
    fn apply_region(&self, input: &[Plane], xs: Range<usize>, ys: Range<usize>) -> Vec<Plane> {
        let (w, h) = input[0].dims();
        (0..self.cout)
            .map(|o| {
                let mut out = Plane::zeros(w, h);
                for (i, plane) in input.iter().enumerate().take(self.cin) {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let k = self.weights[((o * self.cin + i) * 3 + ky) * 3 + kx];
                            if k == 0.0 {
                                continue;
                            }
                            let (dx, dy) = (kx as isize - 1, ky as isize - 1);
                            for y in ys.clone() {
                                let sy = y as isize + dy;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                let src = plane.row(sy as usize);
                                let dst = &mut out.data_mut()[y * w..(y + 1) * w];
                                for x in xs.clone() {
                                    let sx = x as isize + dx;
                                    if sx >= 0 && sx < w as isize {
                                        dst[x] += k * src[sx as usize];
                                    }
                                }
                            }
                        }
                    }
                }
                for y in ys.clone() {
                    for v in &mut out.data_mut()[y * w + xs.start..y * w + xs.end] {
                        if *v < 0.0 {
                            *v *= LEAK
                        }
                    }
                }
                out
            })
            .collect()
    }
}

/// Fixed-weight blind-spot denoiser used to verify the receptive field
/// construction. Not trainable.
#[derive(Debug, Clone)]
pub struct BlindSpotNet {
    layers: Vec<Conv3>,
    /// `4 * channels` weights of the final 1x1 merge.
    merge: Vec<f64>,
    channels: usize,
    remove_blindspot: bool,
}

impl BlindSpotNet {
    /// Random weights for `depth` layers of `channels` features over a
    /// five-frame input.
    pub fn random(depth: usize, channels: usize, rng: &mut Stream) -> Result<Self> {
        if depth == 0 || channels == 0 {
            return Err(Error::InvalidParameter(format!(
                "blind-spot net needs depth and channels >= 1 (got {depth}, {channels})"
            )));
        }
        let mut layers = vec![Conv3::random(super::STACK_LEN, channels, &[1], rng)];
        for _ in 1..depth {
            layers.push(Conv3::random(channels, channels, &[0, 1], rng));
        }
        let normal = Normal::new(0.0, (1.0 / (4 * channels) as f64).sqrt()).expect("positive std");
        let merge = (0..4 * channels).map(|_| normal.sample(rng)).collect();
        Ok(BlindSpotNet {
            layers,
            merge,
            channels,
            remove_blindspot: false,
        })
    }

    /// Cancel the one-pixel shift so the center pixel is seen again.
    pub fn with_blindspot_removed(mut self, removed: bool) -> Self {
        self.remove_blindspot = removed;
        self
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Radius of the receptive field.
    pub fn radius(&self) -> usize {
        self.depth() + 1
    }

    fn forward(&self, inputs: &[Plane]) -> Plane {
        let (w, h) = inputs[0].dims();
        let mut out = Plane::zeros(w, h);
        for r in 0..4u32 {
            let mut x: Vec<Plane> = inputs.iter().map(|p| p.rotate(r)).collect();
            if !self.remove_blindspot {
                x = x.iter().map(shift_down).collect();
            }
            for layer in &self.layers {
                x = layer.apply(&x);
            }
            for (c, feature) in x.iter().enumerate() {
                let back = feature.rotate((4 - r) % 4);
                let k = self.merge[r as usize * self.channels + c];
                out.data_mut()
                    .iter_mut()
                    .zip(back.data())
                    .for_each(|(o, v)| *o += k * v);
            }
        }
        out
    }

    /// Output at the center of odd-sized square inputs. Each layer is only
    /// evaluated on the cone the remaining layers read: `k` layers before
    /// the end that is columns `c ± k` and rows `c - k ..= c`.
    fn forward_center(&self, inputs: &[Plane]) -> f64 {
        let c = inputs[0].width() / 2;
        let depth = self.layers.len();
        let mut out = 0.0;
        for r in 0..4u32 {
            let mut x: Vec<Plane> = inputs.iter().map(|p| p.rotate(r)).collect();
            if !self.remove_blindspot {
                x = x.iter().map(shift_down).collect();
            }
            for (j, layer) in self.layers.iter().enumerate() {
                let k = depth - 1 - j;
                x = layer.apply_region(&x, c - k..c + k + 1, c - k..c + 1);
            }
            for (ch, feature) in x.iter().enumerate() {
                out += self.merge[r as usize * self.channels + ch] * feature.get(c, c);
            }
        }
        out
    }

    fn inputs(stack: &FrameStack) -> Result<Vec<Plane>> {
        let c = stack.center();
        for f in &stack.frames {
            c.same_layout(f)?;
        }
        Ok(stack.frames.iter().map(|f| f.data.clone()).collect())
    }
}

/// `out(x, y) = in(x, y - 1)`, zero on the first row.
fn shift_down(p: &Plane) -> Plane {
    let (w, h) = p.dims();
    Plane::from_fn(w, h, |x, y| if y == 0 { 0.0 } else { p.get(x, y - 1) })
}

impl Denoiser for BlindSpotNet {
    fn denoise(&self, stack: &FrameStack) -> Result<RawFrame> {
        let inputs = Self::inputs(stack)?;
        stack.center().with_data(self.forward(&inputs))
    }

    /// Evaluates the receptive-field cone on a crop when one fits inside
    /// the frame; the arithmetic is the same as on the full frame.
    fn denoise_pixel(&self, stack: &FrameStack, x: usize, y: usize) -> Result<f64> {
        let c = stack.center();
        let r = self.radius() + 1;
        for f in &stack.frames {
            c.same_layout(f)?;
        }
        if x >= c.width() || y >= c.height() {
            return Err(Error::InvalidParameter(format!(
                "pixel ({x}, {y}) is outside the {}x{} frame",
                c.width(),
                c.height()
            )));
        }
        if x < r || y < r || x + r >= c.width() || y + r >= c.height() {
            // Near the border: full forward on a crop clipped to the frame,
            // so the frame edges stay where they are.
            let (x0, y0) = (x.saturating_sub(r), y.saturating_sub(r));
            let (x1, y1) = ((x + r + 1).min(c.width()), (y + r + 1).min(c.height()));
            let crops: Vec<Plane> = stack
                .frames
                .iter()
                .map(|f| Plane::from_fn(x1 - x0, y1 - y0, |cx, cy| f.data.get(x0 + cx, y0 + cy)))
                .collect();
            return Ok(self.forward(&crops).get(x - x0, y - y0));
        }
        let n = 2 * r + 1;
        let crops: Vec<Plane> = stack
            .frames
            .iter()
            .map(|f| Plane::from_fn(n, n, |cx, cy| f.data.get(x + cx - r, y + cy - r)))
            .collect();
        Ok(self.forward_center(&crops))
    }

    fn name(&self) -> String {
        format!(
            "blindspot_net(depth={}, channels={}{})",
            self.depth(),
            self.channels,
            if self.remove_blindspot { ", no blind spot" } else { "" }
        )
    }
}
