//! Single-image PGM / PPM helpers for the image-level subcommands.

use std::path::Path;

use anyhow::{bail, Context, Result};
use rawvid::frame::{normalize_unclamped, to_codes, CfaPattern, Levels};
use rawvid::pnm;
use rawvid::{Plane, RawFrame, RgbFrame};

/// A normalized image and the maxval it was stored with.
pub enum Image {
    Gray(Plane, u32),
    Rgb(RgbFrame, u32),
}

fn is_ppm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
}

pub fn read_image(path: &Path) -> Result<Image> {
    let ctx = || format!("reading {}", path.display());
    if is_ppm(path) {
        let (planes, maxval) = pnm::read_ppm(path).with_context(ctx)?;
        let [r, g, b] = planes.map(|p| p.map(|v| f64::from(v) / f64::from(maxval)));
        Ok(Image::Rgb(RgbFrame::new(r, g, b)?, maxval))
    } else {
        let (plane, maxval) = pnm::read_pgm(path).with_context(ctx)?;
        Ok(Image::Gray(plane.map(|v| f64::from(v) / f64::from(maxval)), maxval))
    }
}

/// Gray level of an image (Rec. 601 luma for colour).
pub fn read_gray(path: &Path) -> Result<Plane> {
    Ok(match read_image(path)? {
        Image::Gray(p, _) => p,
        Image::Rgb(rgb, _) => rgb.luminance(),
    })
}

fn codes(p: &Plane, maxval: u32) -> Plane<u16> {
    let m = f64::from(maxval);
    p.map(|v| (v * m).round().clamp(0.0, m) as u16)
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    match image {
        Image::Gray(p, maxval) if *maxval <= 255 => {
            pnm::write_pgm8(path, &codes(p, 255).map(|v| v as u8)).with_context(ctx)
        }
        Image::Gray(p, _) => pnm::write_pgm16(path, &codes(p, 65535)).with_context(ctx),
        Image::Rgb(rgb, maxval) if *maxval <= 255 => {
            let [r, g, b] = rgb.channels().map(|c| codes(c, 255).map(|v| v as u8));
            pnm::write_ppm8(path, [&r, &g, &b]).with_context(ctx)
        }
        Image::Rgb(rgb, _) => {
            let [r, g, b] = rgb.channels().map(|c| codes(c, 65535));
            pnm::write_ppm16(path, [&r, &g, &b]).with_context(ctx)
        }
    }
}

pub fn write_mask(path: &Path, mask: &Plane<bool>) -> Result<()> {
    pnm::write_pgm8(path, &mask.map(|m| if m { 255u8 } else { 0 }))
        .with_context(|| format!("writing {}", path.display()))
}

/// A mosaicked PGM with the given pattern and levels.
pub fn read_raw(path: &Path, cfa: CfaPattern, levels: Levels) -> Result<RawFrame> {
    let (codes, _) = pnm::read_pgm(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(RawFrame::new(normalize_unclamped(&codes, levels), cfa, levels)?)
}

pub fn write_raw(path: &Path, raw: &RawFrame) -> Result<()> {
    pnm::write_pgm16(path, &to_codes(&raw.data, raw.levels)).with_context(|| format!("writing {}", path.display()))
}

pub fn require_rgb(image: Image, path: &Path) -> Result<(RgbFrame, u32)> {
    match image {
        Image::Rgb(rgb, m) => Ok((rgb, m)),
        Image::Gray(..) => bail!("{} is not a colour (PPM) image", path.display()),
    }
}
