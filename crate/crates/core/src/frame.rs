//! Raw (mosaicked) and RGB frames, CFA layouts, and the mosaic / plane
//! packing operators.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::Plane;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Red,
    Green,
    Blue,
}

/// The 2x2 color tile anchored at pixel (0, 0), listed row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "UPPERCASE")]
pub enum CfaPattern {
    #[default]
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl CfaPattern {
    pub const ALL: [CfaPattern; 4] = [CfaPattern::Rggb, CfaPattern::Bggr, CfaPattern::Grbg, CfaPattern::Gbrg];

    /// Tile colors in row-major order: (0,0), (0,1), (1,0), (1,1) as (row, col).
    pub fn tile(self) -> [Channel; 4] {
        use Channel::*;
        match self {
            CfaPattern::Rggb => [Red, Green, Green, Blue],
            CfaPattern::Bggr => [Blue, Green, Green, Red],
            CfaPattern::Grbg => [Green, Red, Blue, Green],
            CfaPattern::Gbrg => [Green, Blue, Red, Green],
        }
    }

    #[inline]
    pub fn color_at(self, x: usize, y: usize) -> Channel {
        self.tile()[(y & 1) * 2 + (x & 1)]
    }

    /// Tile offset `(x, y)` of the red or blue site.
    pub fn site_of(self, channel: Channel) -> Option<(usize, usize)> {
        if channel == Channel::Green {
            return None;
        }
        let i = self.tile().iter().position(|&c| c == channel)?;
        Some((i % 2, i / 2))
    }
}

impl fmt::Display for CfaPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CfaPattern::Rggb => "RGGB",
            CfaPattern::Bggr => "BGGR",
            CfaPattern::Grbg => "GRBG",
            CfaPattern::Gbrg => "GBRG",
        };
        f.write_str(s)
    }
}

impl FromStr for CfaPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RGGB" => Ok(CfaPattern::Rggb),
            "BGGR" => Ok(CfaPattern::Bggr),
            "GRBG" => Ok(CfaPattern::Grbg),
            "GBRG" => Ok(CfaPattern::Gbrg),
            other => Err(Error::InvalidParameter(format!("unknown CFA pattern {other:?}"))),
        }
    }
}

/// Sensor code range used to map integer codes to normalized values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Levels {
    pub black: u32,
    pub white: u32,
}

impl Levels {
    pub fn new(black: u32, white: u32) -> Result<Self> {
        if white <= black {
            return Err(Error::InvalidParameter(format!(
                "white level {white} must exceed black level {black}"
            )));
        }
        Ok(Levels { black, white })
    }

    #[inline]
    pub fn range(self) -> f64 {
        f64::from(self.white - self.black)
    }
}

impl Default for Levels {
    fn default() -> Self {
        Levels { black: 0, white: 65535 }
    }
}

/// Map sensor codes to `[0, 1]`: `clamp((code - black) / (white - black), 0, 1)`.
pub fn normalize<T: Copy + Into<f64>>(codes: &Plane<T>, black_level: u32, white_level: u32) -> Result<Plane> {
    let levels = Levels::new(black_level, white_level)?;
    Ok(codes.map(|c| ((c.into() - f64::from(levels.black)) / levels.range()).clamp(0.0, 1.0)))
}

/// Like [`normalize`] but keeps values below black or above white, which
/// noisy frames legitimately contain.
pub fn normalize_unclamped<T: Copy + Into<f64>>(codes: &Plane<T>, levels: Levels) -> Plane {
    codes.map(|c| (c.into() - f64::from(levels.black)) / levels.range())
}

/// Inverse of [`normalize`] on `[0, 1]`, producing real-valued codes.
pub fn denormalize(values: &Plane, levels: Levels) -> Plane {
    values.map(|v| f64::from(levels.black) + v * levels.range())
}

/// Quantize normalized values to 16-bit codes (rounded, saturating).
pub fn to_codes(values: &Plane, levels: Levels) -> Plane<u16> {
    values.map(|v| {
        let code = (f64::from(levels.black) + v * levels.range()).round();
        code.clamp(0.0, f64::from(u16::MAX)) as u16
    })
}

/// A single-channel Bayer mosaicked frame with normalized values.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub data: Plane,
    pub cfa: CfaPattern,
    pub levels: Levels,
}

impl RawFrame {
    pub fn new(data: Plane, cfa: CfaPattern, levels: Levels) -> Result<Self> {
        ensure_even(data.width(), data.height())?;
        Ok(RawFrame { data, cfa, levels })
    }

    pub fn with_data(&self, data: Plane) -> Result<Self> {
        self.data.ensure_same_dims(&data)?;
        Ok(RawFrame {
            data,
            cfa: self.cfa,
            levels: self.levels,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.data.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.data.height()
    }

    pub fn same_layout(&self, other: &RawFrame) -> Result<()> {
        self.data.ensure_same_dims(&other.data)?;
        if self.cfa != other.cfa {
            return Err(Error::Mismatch(format!("CFA {} vs {}", self.cfa, other.cfa)));
        }
        Ok(())
    }
}

/// A three-channel linear-light image.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbFrame {
    pub r: Plane,
    pub g: Plane,
    pub b: Plane,
}

impl RgbFrame {
    pub fn new(r: Plane, g: Plane, b: Plane) -> Result<Self> {
        r.ensure_same_dims(&g)?;
        r.ensure_same_dims(&b)?;
        Ok(RgbFrame { r, g, b })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        RgbFrame {
            r: Plane::filled(width, height, rgb[0]),
            g: Plane::filled(width, height, rgb[1]),
            b: Plane::filled(width, height, rgb[2]),
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.r.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.r.height()
    }

    pub fn channel(&self, c: Channel) -> &Plane {
        match c {
            Channel::Red => &self.r,
            Channel::Green => &self.g,
            Channel::Blue => &self.b,
        }
    }

    pub fn channels(&self) -> [&Plane; 3] {
        [&self.r, &self.g, &self.b]
    }

    pub fn map_channels(&self, mut f: impl FnMut(usize, &Plane) -> Plane) -> RgbFrame {
        RgbFrame {
            r: f(0, &self.r),
            g: f(1, &self.g),
            b: f(2, &self.b),
        }
    }

    /// Apply a 3x3 matrix to every pixel's (R, G, B) vector.
    pub fn transform(&self, m: &[[f64; 3]; 3]) -> RgbFrame {
        let n = self.r.len();
        let (mut r, mut g, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let v = [self.r.data()[i], self.g.data()[i], self.b.data()[i]];
            r.push(m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2]);
            g.push(m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2]);
            b.push(m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]);
        }
        let (w, h) = self.r.dims();
        RgbFrame {
            r: Plane::from_vec(w, h, r).expect("length preserved"),
            g: Plane::from_vec(w, h, g).expect("length preserved"),
            b: Plane::from_vec(w, h, b).expect("length preserved"),
        }
    }

    /// Luminance `0.299 R + 0.587 G + 0.114 B`.
    pub fn luminance(&self) -> Plane {
        let mut out = self.r.clone();
        for ((o, &g), &b) in out.data_mut().iter_mut().zip(self.g.data()).zip(self.b.data()) {
            *o = 0.299 * *o + 0.587 * g + 0.114 * b;
        }
        out
    }
}

/// An ordered, homogeneous sequence of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence<F> {
    pub id: String,
    pub frame_rate: f64,
    pub frames: Vec<F>,
}

impl<F> VideoSequence<F> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

impl VideoSequence<RawFrame> {
    pub fn new(id: impl Into<String>, frame_rate: f64, frames: Vec<RawFrame>) -> Result<Self> {
        if let Some(first) = frames.first() {
            for f in &frames[1..] {
                first.same_layout(f)?;
                if f.levels != first.levels {
                    return Err(Error::Mismatch("frames with different levels".into()));
                }
            }
        }
        Ok(VideoSequence {
            id: id.into(),
            frame_rate,
            frames,
        })
    }
}

impl VideoSequence<RgbFrame> {
    pub fn new_rgb(id: impl Into<String>, frame_rate: f64, frames: Vec<RgbFrame>) -> Result<Self> {
        if let Some(first) = frames.first() {
            for f in &frames[1..] {
                first.r.ensure_same_dims(&f.r)?;
            }
        }
        Ok(VideoSequence {
            id: id.into(),
            frame_rate,
            frames,
        })
    }
}

pub(crate) fn ensure_even(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || !width.is_multiple_of(2) || !height.is_multiple_of(2) {
        return Err(Error::Dimensions(format!(
            "{width}x{height}: mosaicked frames need positive even dimensions"
        )));
    }
    Ok(())
}

/// Sample each pixel's CFA channel from an RGB image. No filtering.
pub fn mosaic(rgb: &RgbFrame, cfa: CfaPattern, levels: Levels) -> Result<RawFrame> {
    let (w, h) = (rgb.width(), rgb.height());
    ensure_even(w, h)?;
    let data = Plane::from_fn(w, h, |x, y| rgb.channel(cfa.color_at(x, y)).get(x, y));
    Ok(RawFrame { data, cfa, levels })
}

/// Split a mosaic into four half-resolution planes ordered by tile
/// coordinate: (row 0, col 0), (0, 1), (1, 0), (1, 1).
pub fn pack_planes(raw: &Plane) -> Result<[Plane; 4]> {
    let (w, h) = raw.dims();
    ensure_even(w, h)?;
    let (hw, hh) = (w / 2, h / 2);
    Ok(std::array::from_fn(|i| {
        let (dx, dy) = (i % 2, i / 2);
        Plane::from_fn(hw, hh, |x, y| raw.get(2 * x + dx, 2 * y + dy))
    }))
}

/// Inverse of [`pack_planes`].
pub fn unpack_planes(planes: &[Plane; 4]) -> Result<Plane> {
    let (hw, hh) = planes[0].dims();
    for p in &planes[1..] {
        planes[0].ensure_same_dims(p)?;
    }
    if hw == 0 || hh == 0 {
        return Err(Error::Dimensions("empty planes".into()));
    }
    Ok(Plane::from_fn(2 * hw, 2 * hh, |x, y| {
        planes[(y % 2) * 2 + (x % 2)].get(x / 2, y / 2)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn every_pattern_has_two_greens() {
        for cfa in CfaPattern::ALL {
            let t = cfa.tile();
            assert_eq!(t.iter().filter(|&&c| c == Channel::Green).count(), 2);
            assert_eq!(t.iter().filter(|&&c| c == Channel::Red).count(), 1);
            assert_eq!(t.iter().filter(|&&c| c == Channel::Blue).count(), 1);
        }
    }

    #[test]
    fn normalize_bounds_and_midpoint() {
        let lo = Plane::filled(4, 4, 64u16);
        let hi = Plane::filled(4, 4, 1087u16);
        assert!(normalize(&lo, 64, 1087).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(normalize(&hi, 64, 1087).unwrap().data().iter().all(|&v| v == 1.0));
        let mid = normalize(&Plane::filled(2, 2, 575.5f64), 64, 1087).unwrap();
        assert!(mid.data().iter().all(|&v| (v - (575.5 - 64.0) / 1023.0).abs() < 1e-15));
        assert!((mid.get(0, 0) - 0.5).abs() < 1e-15);
        assert!(normalize(&lo, 10, 10).is_err());
        assert!(normalize(&lo, 11, 10).is_err());
    }

    #[test]
    fn mosaic_red_indicator() {
        let rgb = RgbFrame::filled(4, 4, [1.0, 0.0, 0.0]);
        let raw = mosaic(&rgb, CfaPattern::Rggb, Levels::default()).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let expect = if x % 2 == 0 && y % 2 == 0 { 1.0 } else { 0.0 };
                assert_eq!(raw.data.get(x, y), expect);
            }
        }
        let gray = RgbFrame::filled(4, 6, [0.3; 3]);
        let raw = mosaic(&gray, CfaPattern::Gbrg, Levels::default()).unwrap();
        assert!(raw.data.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn mosaic_rejects_odd() {
        let rgb = RgbFrame::filled(3, 4, [0.0; 3]);
        assert!(mosaic(&rgb, CfaPattern::Rggb, Levels::default()).is_err());
    }

    #[test]
    fn mosaic_matches_per_pixel_lookup() {
        let mut s = 7u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let rgb = RgbFrame::new(
            Plane::from_fn(8, 6, |_, _| next()),
            Plane::from_fn(8, 6, |_, _| next()),
            Plane::from_fn(8, 6, |_, _| next()),
        )
        .unwrap();
        for cfa in CfaPattern::ALL {
            let raw = mosaic(&rgb, cfa, Levels::default()).unwrap();
            for y in 0..6 {
                for x in 0..8 {
                    let tile = ["RGGB", "BGGR", "GRBG", "GBRG"]
                        .iter()
                        .position(|s| *s == cfa.to_string())
                        .unwrap();
                    let letter = ["RGGB", "BGGR", "GRBG", "GBRG"][tile].as_bytes()[(y % 2) * 2 + x % 2];
                    let expect = match letter {
                        b'R' => rgb.r.get(x, y),
                        b'G' => rgb.g.get(x, y),
                        _ => rgb.b.get(x, y),
                    };
                    assert_eq!(raw.data.get(x, y), expect);
                }
            }
        }
    }

    #[test]
    fn pack_single_tile_and_ramp() {
        let raw = Plane::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let planes = pack_planes(&raw).unwrap();
        for (i, p) in planes.iter().enumerate() {
            assert_eq!(p.data(), &[(i + 1) as f64]);
        }
        let ramp = Plane::from_fn(4, 4, |x, y| (4 * y + x) as f64);
        let planes = pack_planes(&ramp).unwrap();
        for (i, p) in planes.iter().enumerate() {
            let (dx, dy) = (i % 2, i / 2);
            for y in 0..2 {
                for x in 0..2 {
                    assert_eq!(p.get(x, y), (4 * (2 * y + dy) + 2 * x + dx) as f64);
                }
            }
        }
        assert!(pack_planes(&Plane::zeros(3, 2)).is_err());
    }

    #[test]
    fn cfa_parse_and_sites() {
        assert_eq!("bggr".parse::<CfaPattern>().unwrap(), CfaPattern::Bggr);
        assert!("RGBG".parse::<CfaPattern>().is_err());
        assert_eq!(CfaPattern::Grbg.site_of(Channel::Red), Some((1, 0)));
        assert_eq!(CfaPattern::Grbg.site_of(Channel::Blue), Some((0, 1)));
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(hw in 1usize..20, hh in 1usize..20, seed in any::<u64>()) {
            let raw = Plane::from_fn(2 * hw, 2 * hh, |x, y| {
                let h = (x as u64 * 31 + y as u64 * 17) ^ seed;
                f64::from_bits((h % (1 << 52)) | 0x3ff0_0000_0000_0000) - 1.0
            });
            let back = unpack_planes(&pack_planes(&raw).unwrap()).unwrap();
            prop_assert_eq!(back, raw);
        }

        #[test]
        fn normalize_inverts_denormalize(v in 0.0f64..=1.0, black in 0u32..1000, span in 1u32..60000) {
            let levels = Levels::new(black, black + span).unwrap();
            let codes = denormalize(&Plane::filled(1, 1, v), levels);
            let back = normalize(&codes, levels.black, levels.white).unwrap().get(0, 0);
            prop_assert!((back - v).abs() <= 1e-6);
            // 16-bit storage quantizes to half a code step
            let stored = normalize_unclamped(&to_codes(&Plane::filled(1, 1, v), levels), levels);
            prop_assert!((stored.get(0, 0) - v).abs() <= 0.5 / levels.range() + 1e-12);
        }
    }
}
