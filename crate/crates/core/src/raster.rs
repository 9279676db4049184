//! Raster types shared by every stage: intensity images, binary masks and box prompts.
//!
//! All rasters are row-major. Multi-channel images are stored planar
//! (`channel, row, column`), which is the layout the regressor consumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `width × height` raster over `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl BinaryMask {
    /// An all-background mask.
    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        check_extent(width, height)?;
        Ok(Self {
            width,
            height,
            values: vec![0; width * height],
        })
    }

    /// An all-foreground mask.
    pub fn ones(width: usize, height: usize) -> Result<Self> {
        check_extent(width, height)?;
        Ok(Self {
            width,
            height,
            values: vec![1; width * height],
        })
    }

    /// Builds a mask from row-major values, rejecting anything other than 0 or 1.
    pub fn from_vec(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        check_extent(width, height)?;
        if values.len() != width * height {
            return Err(Error::invalid(format!(
                "mask of {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(format!("mask value {v} is not binary")));
        }
        Ok(Self { width, height, values })
    }

    /// Mask whose foreground is where `f(x, y)` holds.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut mask = Self::zeros(width, height)?;
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    mask.values[y * width + x] = 1;
                }
            }
        }
        Ok(mask)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.values[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.values[y * self.width + x] = on as u8;
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.values.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.values.iter().all(|&v| v == 0)
    }

    /// Coordinates `(x, y)` of every foreground pixel in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(move |(i, _)| (i % w, i / w))
    }

    /// Tight bounding box of the foreground, `None` for an empty mask.
    pub fn bounding_box(&self) -> Option<BoxPrompt> {
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for (x, y) in self.foreground() {
            bounds = Some(match bounds {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        bounds.map(|(x0, y0, x1, y1)| BoxPrompt {
            x0,
            y0,
            x1: x1 + 1,
            y1: y1 + 1,
        })
    }

    /// Rounded foreground centroid, `None` for an empty mask.
    pub fn centroid(&self) -> Option<(usize, usize)> {
        let n = self.count();
        if n == 0 {
            return None;
        }
        let (sx, sy) = self
            .foreground()
            .fold((0usize, 0usize), |(sx, sy), (x, y)| (sx + x, sy + y));
        let cx = (sx as f64 / n as f64).round() as usize;
        let cy = (sy as f64 / n as f64).round() as usize;
        Some((cx.min(self.width - 1), cy.min(self.height - 1)))
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            let row = &mut out.values[y * self.width..(y + 1) * self.width];
            row.reverse();
        }
        out
    }

    pub(crate) fn values_mut(&mut self) -> &mut [u8] {
        &mut self.values
    }
}

/// A `width × height × channels` raster of intensities in `[0, 1]`, stored planar.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
}

impl Image {
    /// Builds an image from planar values, validating channel count and range.
    pub fn from_planar(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        check_extent(width, height)?;
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("images need 1 or 3 channels, got {channels}")));
        }
        if values.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "image of {width}x{height}x{channels} needs {} values, got {}",
                width * height * channels,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("intensity {v} lies outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    /// Image with every sample set to `value`.
    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::from_planar(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.values[channel * n..(channel + 1) * n]
    }

    pub(crate) fn plane_mut(&mut self, channel: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.values[channel * n..(channel + 1) * n]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, channel: usize) -> f64 {
        self.values[(channel * self.height + y) * self.width + x]
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                let start = (c * self.height + y) * self.width;
                out.values[start..start + self.width].reverse();
            }
        }
        out
    }

    /// Constructs without validation; callers guarantee the invariants.
    pub(crate) fn from_parts_unchecked(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            values,
        }
    }
}

/// Axis-aligned box `[x0, x1) × [y0, y1)` in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct BoxPrompt {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoxPrompt {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn diagonal(&self) -> f64 {
        (self.width() as f64).hypot(self.height() as f64)
    }

    /// Checks `0 ≤ x0 < x1 ≤ width` and `0 ≤ y0 < y1 ≤ height`.
    pub fn validate_within(&self, width: usize, height: usize) -> Result<()> {
        if self.x0 < self.x1 && self.x1 <= width && self.y0 < self.y1 && self.y1 <= height {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "box [{}, {}, {}, {}] does not lie inside a {width}x{height} raster",
                self.x0, self.y0, self.x1, self.y1
            )))
        }
    }

    /// Mirror image of the box under a horizontal flip of a raster of `width` columns.
    pub fn flip_horizontal(&self, width: usize) -> Self {
        Self {
            x0: width - self.x1,
            y0: self.y0,
            x1: width - self.x0,
            y1: self.y1,
        }
    }
}

impl From<[usize; 4]> for BoxPrompt {
    fn from(v: [usize; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoxPrompt> for [usize; 4] {
    fn from(b: BoxPrompt) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

fn check_extent(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "raster extent {width}x{height} must be at least 1x1"
        )));
    }
    Ok(())
}
