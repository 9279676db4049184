//! Controllable-quality corruption of a mask, and the mock segmenters built on it.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

/// Largest morphological radius, as a fraction of the mask's equivalent radius.
const MORPH_SCALE: f64 = 0.45;
/// Translation bounds, as fractions of the equivalent radius.
const SHIFT_MIN: f64 = 1.0;
const SHIFT_MAX: f64 = 1.6;
/// Boundary flip probability at severity 1.
const FLIP_RATE: f64 = 0.5;

/// Disk-shaped structuring element offsets for radius `r`.
fn disk(r: usize) -> Vec<(isize, isize)> {
    let r = r as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Sets every pixel within Euclidean distance `r` of the foreground.
pub fn dilate(mask: &BinaryMask, r: usize) -> BinaryMask {
    if r == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    let offsets = disk(r);
    let mut out = BinaryMask::zeros(w, h).expect("extent already valid");
    for (x, y) in mask.foreground() {
        for &(dx, dy) in &offsets {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                out.set(nx as usize, ny as usize, true);
            }
        }
    }
    out
}

/// Keeps only pixels whose whole radius-`r` disk is foreground; outside the raster counts as background.
pub fn erode(mask: &BinaryMask, r: usize) -> BinaryMask {
    if r == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    let offsets = disk(r);
    BinaryMask::from_fn(w, h, |x, y| {
        mask.get(x, y)
            && offsets.iter().all(|&(dx, dy)| {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h && mask.get(nx as usize, ny as usize)
            })
    })
    .expect("extent already valid")
}

/// Shifts the foreground by `(dx, dy)`; pixels leaving the raster are dropped.
pub fn translate(mask: &BinaryMask, dx: isize, dy: isize) -> BinaryMask {
    let (w, h) = mask.dims();
    BinaryMask::from_fn(w, h, |x, y| {
        let (sx, sy) = (x as isize - dx, y as isize - dy);
        sx >= 0 && sy >= 0 && (sx as usize) < w && (sy as usize) < h && mask.get(sx as usize, sy as usize)
    })
    .expect("extent already valid")
}

fn on_boundary(mask: &BinaryMask, x: usize, y: usize) -> bool {
    let (w, h) = mask.dims();
    let v = mask.get(x, y);
    (x > 0 && mask.get(x - 1, y) != v)
        || (x + 1 < w && mask.get(x + 1, y) != v)
        || (y > 0 && mask.get(x, y - 1) != v)
        || (y + 1 < h && mask.get(x, y + 1) != v)
}

/// Flips each pixel on either side of the foreground boundary with probability `rate`.
pub fn boundary_noise<R: Rng + ?Sized>(mask: &BinaryMask, rng: &mut R, rate: f64) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut out = mask.clone();
    for y in 0..h {
        for x in 0..w {
            if on_boundary(mask, x, y) && rng.random_bool(rate) {
                out.set(x, y, !mask.get(x, y));
            }
        }
    }
    out
}

/// Corrupts `mask` with a random erosion or dilation, a translation and
/// boundary flips, each scaled by `severity`. Severity 0 is the identity.
///
/// A result that ends up empty is replaced by the input's centroid pixel so
/// that distances to it stay defined.
pub fn perturb<R: Rng + ?Sized>(mask: &BinaryMask, rng: &mut R, severity: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&severity) {
        return Err(Error::invalid(format!("severity {severity} lies outside [0, 1]")));
    }
    let centroid = mask
        .centroid()
        .ok_or_else(|| Error::invalid("cannot perturb an empty mask"))?;
    if severity == 0.0 {
        return Ok(mask.clone());
    }
    let radius = (mask.count() as f64 / PI).sqrt();

    let morph = (severity * MORPH_SCALE * radius * rng.random::<f64>()).round() as usize;
    let mut out = if rng.random_bool(0.5) {
        dilate(mask, morph)
    } else {
        erode(mask, morph)
    };

    let shift = severity * radius * rng.random_range(SHIFT_MIN..SHIFT_MAX);
    let heading = rng.random_range(0.0..2.0 * PI);
    let (sy, sx) = heading.sin_cos();
    out = translate(&out, (shift * sx).round() as isize, (shift * sy).round() as isize);

    out = boundary_noise(&out, rng, FLIP_RATE * severity);

    if out.is_empty() {
        out.set(centroid.0, centroid.1, true);
    }
    Ok(out)
}

/// A mock segmenter: perturbation severity drawn from `Beta(alpha, beta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    pub alpha: f64,
    pub beta: f64,
}

impl Profile {
    pub fn new(name: impl Into<String>, alpha: f64, beta: f64) -> Self {
        Self {
            name: name.into(),
            alpha,
            beta,
        }
    }

    /// The three built-in quality regimes.
    pub fn defaults() -> Vec<Profile> {
        vec![
            Profile::new("good", 2.0, 8.0),
            Profile::new("medium", 4.0, 4.0),
            Profile::new("poor", 8.0, 4.0),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return Err(Error::invalid(format!(
                "profile `{}` needs a name and positive Beta parameters",
                self.name
            )));
        }
        Ok(())
    }

    /// Segments by corrupting the ground truth with a freshly drawn severity.
    pub fn segment<R: Rng + ?Sized>(&self, gt: &BinaryMask, rng: &mut R) -> Result<BinaryMask> {
        self.validate()?;
        let dist = Beta::new(self.alpha, self.beta).map_err(|e| Error::invalid(e.to_string()))?;
        let severity = dist.sample(rng).clamp(0.0, 1.0);
        perturb(gt, rng, severity)
    }
}

/// Runs the registered profile named `profile_id`.
pub fn mock_segmenter<R: Rng + ?Sized>(
    profiles: &[Profile],
    profile_id: &str,
    gt: &BinaryMask,
    rng: &mut R,
) -> Result<BinaryMask> {
    let profile = profiles
        .iter()
        .find(|p| p.name == profile_id)
        .ok_or_else(|| Error::invalid(format!("unknown segmenter profile `{profile_id}`")))?;
    profile.segment(gt, rng)
}
