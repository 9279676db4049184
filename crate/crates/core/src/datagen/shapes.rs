//! Synthetic foreground blobs and the images they are rendered into.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Image};

pub const MIN_SHAPE_SIDE: usize = 32;
pub const MIN_AREA_FRACTION: f64 = 0.02;
pub const MAX_AREA_FRACTION: f64 = 0.40;

const FOREGROUND_MEAN: f64 = 0.65;
const BACKGROUND_MEAN: f64 = 0.35;
const NOISE_SIGMA: f64 = 0.08;
const GRADIENT_SPAN: f64 = 0.10;

/// A single connected blob: a rotated ellipse whose radius is modulated by a
/// few low-frequency harmonics, covering 2%–40% of the raster.
pub fn gen_shape<R: Rng + ?Sized>(rng: &mut R, w: usize, h: usize) -> Result<BinaryMask> {
    if w < MIN_SHAPE_SIDE || h < MIN_SHAPE_SIDE {
        return Err(Error::invalid(format!(
            "shapes need rasters of at least {MIN_SHAPE_SIDE}x{MIN_SHAPE_SIDE}, got {w}x{h}"
        )));
    }
    let total = (w * h) as f64;
    loop {
        let fraction = rng.random_range(0.03..0.30);
        let aspect = rng.random_range(0.55..1.0);
        let major = (fraction * total / (PI * aspect)).sqrt();
        let minor = aspect * major;
        let tilt = rng.random_range(0.0..PI);
        let harmonics: Vec<(f64, f64, f64)> = (2..=4)
            .map(|k| (k as f64, rng.random_range(0.0..0.12), rng.random_range(0.0..2.0 * PI)))
            .collect();
        let reach = major * 1.36;
        let cx = centre_coordinate(rng, w as f64, reach);
        let cy = centre_coordinate(rng, h as f64, reach);

        let (sin_t, cos_t) = tilt.sin_cos();
        let raw = BinaryMask::from_fn(w, h, |x, y| {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let u = dx * cos_t + dy * sin_t;
            let v = -dx * sin_t + dy * cos_t;
            let angle = v.atan2(u);
            let (s, c) = angle.sin_cos();
            let ellipse = major * minor / ((minor * c).powi(2) + (major * s).powi(2)).sqrt();
            let wobble: f64 = harmonics.iter().map(|&(k, a, ph)| a * (k * angle + ph).cos()).sum();
            u.hypot(v) <= ellipse * (1.0 + wobble)
        })?;
        let blob = largest_component(&raw);
        let covered = blob.count() as f64 / total;
        if (MIN_AREA_FRACTION..=MAX_AREA_FRACTION).contains(&covered) {
            return Ok(blob);
        }
    }
}

fn centre_coordinate<R: Rng + ?Sized>(rng: &mut R, extent: f64, reach: f64) -> f64 {
    let lo = reach;
    let hi = extent - 1.0 - reach;
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        (extent - 1.0) / 2.0
    }
}

/// Largest 4-connected foreground component; ties go to the first found in row-major order.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut label = vec![0u32; w * h];
    let mut best = (0u32, 0usize);
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if mask.values()[start] == 0 || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask.values()[j] != 0 && label[j] == 0 {
                    label[j] = next;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if size > best.1 {
            best = (next, size);
        }
    }
    let values = label.iter().map(|&l| (l != 0 && l == best.0) as u8).collect();
    BinaryMask::from_vec(w, h, values).expect("labels match the mask extent")
}

/// Number of 4-connected foreground components.
pub fn component_count(mask: &BinaryMask) -> usize {
    let mut rest = mask.clone();
    let mut n = 0;
    while !rest.is_empty() {
        let comp = largest_component(&rest);
        for (r, c) in rest.values_mut().iter_mut().zip(comp.values()) {
            *r &= !c & 1;
        }
        n += 1;
    }
    n
}

/// Grayscale rendering of `foreground`: distinct mean intensities, a smooth
/// illumination ramp and Gaussian noise, quantized to 8 bits.
pub fn render_image<R: Rng + ?Sized>(rng: &mut R, foreground: &BinaryMask) -> Image {
    let (w, h) = foreground.dims();
    let direction = rng.random_range(0.0..2.0 * PI);
    let (gy, gx) = direction.sin_cos();
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("positive sigma");
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let base = if foreground.get(x, y) {
                FOREGROUND_MEAN
            } else {
                BACKGROUND_MEAN
            };
            let ramp = GRADIENT_SPAN * (gx * (x as f64 / w as f64 - 0.5) + gy * (y as f64 / h as f64 - 0.5));
            let v = (base + ramp + noise.sample(rng)).clamp(0.0, 1.0);
            values.push(quantize(v));
        }
    }
    Image::from_planar(w, h, 1, values).expect("quantized values lie in [0, 1]")
}

/// Rounds to the nearest representable 8-bit intensity.
pub fn quantize(v: f64) -> f64 {
    (v * 255.0).round() / 255.0
}
