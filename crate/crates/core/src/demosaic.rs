//! Hamilton-Adams and bilinear demosaicing.
//!
//! Green at red/blue sites (C the site's own color):
//!
//! ```text
//! dh = |G(x-1) - G(x+1)| + |2C(x) - C(x-2) - C(x+2)|
//! gh = (G(x-1) + G(x+1)) / 2 + (2C(x) - C(x-2) - C(x+2)) / 4
//! ```
//!
//! and the vertical analogues; the direction with the smaller gradient wins
//! and ties average both. Red and blue are then interpolated bilinearly on
//! the color difference planes R-G and B-G. Borders use whole-sample mirror
//! reflection, which keeps CFA parity. Nothing is clipped.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{warp_rgb, FlowField, Interpolation};
use crate::frame::{mosaic, Channel, RawFrame, RgbFrame};
use crate::plane::Plane;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemosaicMethod {
    #[default]
    HamiltonAdams,
    Bilinear,
}

impl FromStr for DemosaicMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ha" | "hamilton_adams" | "hamilton-adams" => Ok(DemosaicMethod::HamiltonAdams),
            "bilinear" => Ok(DemosaicMethod::Bilinear),
            other => Err(Error::InvalidParameter(format!("unknown demosaic method {other:?}"))),
        }
    }
}

pub fn demosaic(raw: &RawFrame, method: DemosaicMethod) -> Result<RgbFrame> {
    match method {
        DemosaicMethod::HamiltonAdams => demosaic_ha(raw),
        DemosaicMethod::Bilinear => demosaic_bilinear(raw),
    }
}

/// Interpolation direction chosen for green at each pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Green is measured here.
    Native,
    Horizontal,
    Vertical,
    Both,
}

pub const MIN_HA_SIZE: usize = 6;

fn check_size(raw: &RawFrame) -> Result<()> {
    if raw.width() < MIN_HA_SIZE || raw.height() < MIN_HA_SIZE {
        return Err(Error::Dimensions(format!(
            "Hamilton-Adams needs at least {MIN_HA_SIZE}x{MIN_HA_SIZE}, got {}x{}",
            raw.width(),
            raw.height()
        )));
    }
    Ok(())
}

struct Stencil<'a>(&'a Plane);

impl Stencil<'_> {
    #[inline]
    fn at(&self, x: isize, y: isize) -> f64 {
        self.0.get_mirrored(x, y)
    }

    /// (horizontal, vertical) gradients at (x, y).
    fn gradients(&self, x: isize, y: isize) -> (f64, f64) {
        let c2 = 2.0 * self.at(x, y);
        let dh = (self.at(x - 1, y) - self.at(x + 1, y)).abs() + (c2 - self.at(x - 2, y) - self.at(x + 2, y)).abs();
        let dv = (self.at(x, y - 1) - self.at(x, y + 1)).abs() + (c2 - self.at(x, y - 2) - self.at(x, y + 2)).abs();
        (dh, dv)
    }

    /// (horizontal, vertical) green estimates at (x, y).
    fn estimates(&self, x: isize, y: isize) -> (f64, f64) {
        let c2 = 2.0 * self.at(x, y);
        let gh = 0.5 * (self.at(x - 1, y) + self.at(x + 1, y)) + 0.25 * (c2 - self.at(x - 2, y) - self.at(x + 2, y));
        let gv = 0.5 * (self.at(x, y - 1) + self.at(x, y + 1)) + 0.25 * (c2 - self.at(x, y - 2) - self.at(x, y + 2));
        (gh, gv)
    }
}

/// Gradient classifier for every non-green site.
pub fn ha_directions(raw: &RawFrame) -> Result<Plane<Direction>> {
    check_size(raw)?;
    let s = Stencil(&raw.data);
    Ok(Plane::from_fn(raw.width(), raw.height(), |x, y| {
        if raw.cfa.color_at(x, y) == Channel::Green {
            return Direction::Native;
        }
        let (dh, dv) = s.gradients(x as isize, y as isize);
        if dh < dv {
            Direction::Horizontal
        } else if dv < dh {
            Direction::Vertical
        } else {
            Direction::Both
        }
    }))
}

pub fn demosaic_ha(raw: &RawFrame) -> Result<RgbFrame> {
    let dirs = ha_directions(raw)?;
    demosaic_ha_with(raw, &dirs)
}

/// Hamilton-Adams with the green directions fixed in advance. For a fixed
/// map the result is linear in the raw samples.
pub fn demosaic_ha_with(raw: &RawFrame, dirs: &Plane<Direction>) -> Result<RgbFrame> {
    check_size(raw)?;
    raw.data.ensure_same_dims(dirs)?;
    let s = Stencil(&raw.data);
    let mut bad = None;
    let g = Plane::from_fn(raw.width(), raw.height(), |x, y| {
        let native = raw.cfa.color_at(x, y) == Channel::Green;
        let d = dirs.get(x, y);
        if native != (d == Direction::Native) {
            bad = Some((x, y));
        }
        if native {
            return raw.data.get(x, y);
        }
        let (gh, gv) = s.estimates(x as isize, y as isize);
        match d {
            Direction::Horizontal => gh,
            Direction::Vertical => gv,
            _ => 0.5 * (gh + gv),
        }
    });
    if let Some((x, y)) = bad {
        return Err(Error::Mismatch(format!(
            "direction map disagrees with the {} layout at ({x}, {y})",
            raw.cfa
        )));
    }
    let r = fill_chroma(raw, Channel::Red, Some(&g));
    let b = fill_chroma(raw, Channel::Blue, Some(&g));
    RgbFrame::new(r, g, b)
}

/// Red or blue everywhere from the native sites: the missing values average
/// the nearest native neighbors (horizontal pair, vertical pair or the four
/// diagonals) of `channel - guide`, then add the guide back.
fn fill_chroma(raw: &RawFrame, channel: Channel, guide: Option<&Plane>) -> Plane {
    let cfa = raw.cfa;
    let (w, h) = (raw.width(), raw.height());
    let guide_at = |x: usize, y: usize| guide.map_or(0.0, |g| g.get(x, y));
    let diff = Plane::from_fn(w, h, |x, y| {
        if cfa.color_at(x, y) == channel {
            raw.data.get(x, y) - guide_at(x, y)
        } else {
            0.0
        }
    });
    Plane::from_fn(w, h, |x, y| {
        if cfa.color_at(x, y) == channel {
            return raw.data.get(x, y);
        }
        let (xi, yi) = (x as isize, y as isize);
        let d = |dx: isize, dy: isize| diff.get_mirrored(xi + dx, yi + dy);
        // mirroring preserves parity, so x+1 stands for both horizontal neighbors
        let delta = if cfa.color_at(x + 1, y) == channel {
            0.5 * (d(-1, 0) + d(1, 0))
        } else if cfa.color_at(x, y + 1) == channel {
            0.5 * (d(0, -1) + d(0, 1))
        } else {
            0.25 * (d(-1, -1) + d(1, -1) + d(-1, 1) + d(1, 1))
        };
        guide_at(x, y) + delta
    })
}

/// Each missing channel is the mean of its nearest same-channel neighbors.
pub fn demosaic_bilinear(raw: &RawFrame) -> Result<RgbFrame> {
    let (w, h) = (raw.width(), raw.height());
    if w < 2 || h < 2 {
        return Err(Error::Dimensions(format!("{w}x{h} is too small to demosaic")));
    }
    let g = Plane::from_fn(w, h, |x, y| {
        if raw.cfa.color_at(x, y) == Channel::Green {
            return raw.data.get(x, y);
        }
        let (xi, yi) = (x as isize, y as isize);
        let m = |dx: isize, dy: isize| raw.data.get_mirrored(xi + dx, yi + dy);
        0.25 * (m(-1, 0) + m(1, 0) + m(0, -1) + m(0, 1))
    });
    let r = fill_chroma(raw, Channel::Red, None);
    let b = fill_chroma(raw, Channel::Blue, None);
    RgbFrame::new(r, g, b)
}

/// Raw-domain warp `M ∘ W ∘ D`: demosaic, warp every channel by `flow`,
/// sample the CFA back. Returns the warp's in-bounds map alongside.
pub fn demosaic_warp_remosaic(
    raw: &RawFrame,
    flow: &FlowField,
    method: DemosaicMethod,
    interp: Interpolation,
) -> Result<(RawFrame, Plane<bool>)> {
    remosaic_warped(raw, &demosaic(raw, method)?, flow, interp)
}

/// [`demosaic_warp_remosaic`] through Hamilton-Adams with frozen directions;
/// linear in `raw`.
pub fn ha_warp_remosaic_with(
    raw: &RawFrame,
    dirs: &Plane<Direction>,
    flow: &FlowField,
    interp: Interpolation,
) -> Result<(RawFrame, Plane<bool>)> {
    remosaic_warped(raw, &demosaic_ha_with(raw, dirs)?, flow, interp)
}

fn remosaic_warped(
    raw: &RawFrame,
    rgb: &RgbFrame,
    flow: &FlowField,
    interp: Interpolation,
) -> Result<(RawFrame, Plane<bool>)> {
    raw.data.ensure_same_dims(&flow.u)?;
    let (warped, valid) = warp_rgb(rgb, flow, interp)?;
    Ok((mosaic(&warped, raw.cfa, raw.levels)?, valid))
}
