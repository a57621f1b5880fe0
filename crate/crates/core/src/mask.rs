//! Binary pixel masks with run-length encoding.
//!
//! Masks are row-major bit sets over a `width × height` grid, stored as
//! packed 64-bit words. The wire encoding is a run-length list that starts
//! with a 0-run (which may be empty) and alternates 0/1 from there.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("run-length data sums to {got} bits, expected {expected}")]
    RunLengthSum { got: u64, expected: u64 },
    #[error("run {index} has length 0 (only the leading 0-run may be empty)")]
    EmptyRun { index: usize },
    #[error("bit string has {got} entries, expected {expected}")]
    BitCount { got: usize, expected: usize },
    #[error("mask dimensions {0}x{1} do not match {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
}

/// A binary mask over an integer pixel grid, row-major, origin top-left.
#[derive(Clone, PartialEq, Eq)]
pub struct PixelMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl std::fmt::Debug for PixelMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "PixelMask({}x{}, {} set)",
            self.width,
            self.height,
            self.count_ones()
        )
    }
}

impl PixelMask {
    /// An all-zero mask.
    pub fn new(width: u32, height: u32) -> Self {
        let bits = width as usize * height as usize;
        PixelMask {
            width,
            height,
            words: vec![0u64; bits.div_ceil(64)],
        }
    }

    /// Builds a mask by evaluating `f(x, y)` over the grid.
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = PixelMask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    /// Builds a mask with the axis-aligned rectangle `[x0, x1) × [y0, y1)`
    /// set, clipped to the grid.
    pub fn from_rect(width: u32, height: u32, x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        let mut m = PixelMask::new(width, height);
        let xa = x0.clamp(0, width as i64) as u32;
        let xb = x1.clamp(0, width as i64) as u32;
        let ya = y0.clamp(0, height as i64) as u32;
        let yb = y1.clamp(0, height as i64) as u32;
        for y in ya..yb {
            for x in xa..xb {
                m.set(x, y, true);
            }
        }
        m
    }

    /// Decodes a run-length list (leading 0-run, alternating) into a mask.
    pub fn from_runs(width: u32, height: u32, runs: &[u64]) -> Result<Self, MaskError> {
        let expected = width as u64 * height as u64;
        let total: u64 = runs.iter().sum();
        if total != expected {
            return Err(MaskError::RunLengthSum {
                got: total,
                expected,
            });
        }
        for (i, &r) in runs.iter().enumerate() {
            if r == 0 && i != 0 {
                return Err(MaskError::EmptyRun { index: i });
            }
        }
        let mut m = PixelMask::new(width, height);
        let mut pos: u64 = 0;
        for (i, &run) in runs.iter().enumerate() {
            if i % 2 == 1 {
                for bit in pos..pos + run {
                    m.set_linear(bit as usize, true);
                }
            }
            pos += run;
        }
        Ok(m)
    }

    /// Decodes an uncompressed '0'/'1' bit string (row-major).
    pub fn from_bit_str(width: u32, height: u32, bits: &str) -> Result<Self, MaskError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(MaskError::BitCount {
                got: bits.len(),
                expected,
            });
        }
        let mut m = PixelMask::new(width, height);
        for (i, ch) in bits.bytes().enumerate() {
            if ch == b'1' {
                m.set_linear(i, true);
            }
        }
        Ok(m)
    }

    /// Canonical run-length encoding: leading 0-run (possibly 0), alternating
    /// runs all nonzero, no trailing empty run.
    pub fn to_runs(&self) -> Vec<u64> {
        let total = self.width as u64 * self.height as u64;
        if total == 0 {
            return Vec::new();
        }
        let mut runs = Vec::new();
        let mut current = false;
        let mut len: u64 = 0;
        for i in 0..total {
            let bit = self.get_linear(i as usize);
            if bit == current {
                len += 1;
            } else {
                runs.push(len);
                current = bit;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn same_dims(&self, other: &PixelMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    fn check_dims(&self, other: &PixelMask) -> Result<(), MaskError> {
        if !self.same_dims(other) {
            return Err(MaskError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    #[inline]
    fn get_linear(&self, i: usize) -> bool {
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    fn set_linear(&mut self, i: usize, v: bool) {
        if v {
            self.words[i / 64] |= 1u64 << (i % 64);
        } else {
            self.words[i / 64] &= !(1u64 << (i % 64));
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        debug_assert!(x < self.width && y < self.height);
        self.get_linear(y as usize * self.width as usize + x as usize)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        debug_assert!(x < self.width && y < self.height);
        self.set_linear(y as usize * self.width as usize + x as usize, v);
    }

    /// Number of set pixels.
    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Set pixels common to both masks.
    pub fn intersection_count(&self, other: &PixelMask) -> Result<u64, MaskError> {
        self.check_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum())
    }

    /// Set pixels present in either mask.
    pub fn union_count(&self, other: &PixelMask) -> Result<u64, MaskError> {
        self.check_dims(other)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a | b).count_ones() as u64)
            .sum())
    }

    pub fn intersect(&self, other: &PixelMask) -> Result<PixelMask, MaskError> {
        self.check_dims(other)?;
        let words = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| a & b)
            .collect();
        Ok(PixelMask {
            width: self.width,
            height: self.height,
            words,
        })
    }

    pub fn union(&self, other: &PixelMask) -> Result<PixelMask, MaskError> {
        self.check_dims(other)?;
        let words = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| a | b)
            .collect();
        Ok(PixelMask {
            width: self.width,
            height: self.height,
            words,
        })
    }

    /// In-place union. Dimensions must match.
    pub fn union_with(&mut self, other: &PixelMask) -> Result<(), MaskError> {
        self.check_dims(other)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        Ok(())
    }

    /// Iterator over the coordinates of set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        (0..self.width as u64 * self.height as u64)
            .filter(move |&i| self.get_linear(i as usize))
            .map(move |i| ((i % w as u64) as u32, (i / w as u64) as u32))
    }

    /// Inclusive pixel bounds `(x_min, y_min, x_max, y_max)` of the set
    /// pixels, or `None` for an empty mask.
    pub fn bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let mut b: Option<(u32, u32, u32, u32)> = None;
        for (x, y) in self.iter_set() {
            b = Some(match b {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        b
    }

    /// Shifts every set pixel by `(dx, dy)`, discarding pixels that leave
    /// the grid.
    pub fn translate(&self, dx: i64, dy: i64) -> PixelMask {
        let mut out = PixelMask::new(self.width, self.height);
        for (x, y) in self.iter_set() {
            let nx = x as i64 + dx;
            let ny = y as i64 + dy;
            if nx >= 0 && ny >= 0 && (nx as u32) < self.width && (ny as u32) < self.height {
                out.set(nx as u32, ny as u32, true);
            }
        }
        out
    }

    /// One 4-neighbourhood dilation step.
    pub fn dilate(&self) -> PixelMask {
        let mut out = self.clone();
        for (x, y) in self.iter_set() {
            if x > 0 {
                out.set(x - 1, y, true);
            }
            if x + 1 < self.width {
                out.set(x + 1, y, true);
            }
            if y > 0 {
                out.set(x, y - 1, true);
            }
            if y + 1 < self.height {
                out.set(x, y + 1, true);
            }
        }
        out
    }

    /// One 4-neighbourhood erosion step (border pixels erode).
    pub fn erode(&self) -> PixelMask {
        PixelMask::from_fn(self.width, self.height, |x, y| {
            self.get(x, y)
                && x > 0
                && self.get(x - 1, y)
                && x + 1 < self.width
                && self.get(x + 1, y)
                && y > 0
                && self.get(x, y - 1)
                && y + 1 < self.height
                && self.get(x, y + 1)
        })
    }
}
