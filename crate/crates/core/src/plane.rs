//! Dense row-major 2-D grids.

use crate::error::{Error, Result};

/// A row-major 2-D grid of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T = f64> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Plane<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Mismatch(format!(
                "{} samples for a {width}x{height} plane",
                data.len()
            )));
        }
        Ok(Plane { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    /// Sample with whole-sample symmetric reflection at the borders
    /// (`-1 -> 1`, `w -> w-2`). Reflection preserves index parity, so a
    /// reflected sample of a mosaic always has the same CFA color.
    #[inline]
    pub fn get_mirrored(&self, x: isize, y: isize) -> T {
        let xm = mirror_index(x, self.width);
        let ym = mirror_index(y, self.height);
        self.data[ym * self.width + xm]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map<U: Copy>(&self, mut f: impl FnMut(T) -> U) -> Plane<U> {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map<U: Copy, V: Copy>(&self, other: &Plane<U>, mut f: impl FnMut(T, U) -> V) -> Result<Plane<V>> {
        self.ensure_same_dims(other)?;
        Ok(Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn ensure_same_dims<U>(&self, other: &Plane<U>) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Mismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Rotate counter-clockwise by `quarter_turns` multiples of 90 degrees.
    pub fn rotate(&self, quarter_turns: u32) -> Plane<T> {
        match quarter_turns % 4 {
            0 => self.clone(),
            1 => Plane::from_fn(self.height, self.width, |x, y| self.get(self.width - 1 - y, x)),
            2 => Plane::from_fn(self.width, self.height, |x, y| {
                self.get(self.width - 1 - x, self.height - 1 - y)
            }),
            _ => Plane::from_fn(self.height, self.width, |x, y| self.get(y, self.height - 1 - x)),
        }
    }
}

impl Plane<f64> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Plane::filled(width, height, 0.0)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        sample_variance(&self.data)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn scaled(&self, factor: f64) -> Plane {
        self.map(|v| v * factor)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Whole-sample symmetric reflection of an index into `0..n`.
#[inline]
pub fn mirror_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= n as isize {
        r = period - r;
    }
    r as usize
}

/// Unbiased sample variance of a slice (0 for fewer than two samples).
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    // shifted by the first sample so constant input gives exactly zero
    let shift = values[0];
    let mean = values.iter().map(|v| v - shift).sum::<f64>() / n as f64;
    values
        .iter()
        .map(|v| (v - shift - mean) * (v - shift - mean))
        .sum::<f64>()
        / (n - 1) as f64
}
