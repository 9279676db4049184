//! The fixed, parameter-free transform that turns `(image, predicted mask, box)`
//! into the regressor's input: replicate to three channels, blend the mask into
//! the red channel, crop to the box, resize to a square.

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, BoxPrompt, Image};

/// Default side of the square regressor input.
pub const DEFAULT_INPUT_SIDE: usize = 244;

/// Three-channel `side × side` planar raster fed to the regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    side: usize,
    values: Vec<f64>,
}

impl ModelInput {
    pub fn from_image(img: Image) -> Result<Self> {
        if img.channels() != 3 || img.width() != img.height() {
            return Err(Error::invalid(format!(
                "model input must be square with 3 channels, got {}x{}x{}",
                img.width(),
                img.height(),
                img.channels()
            )));
        }
        let side = img.width();
        Ok(Self {
            side,
            values: img.into_values(),
        })
    }

    /// Raw planar constructor used by tests and gradient checks.
    pub fn from_planar(side: usize, values: Vec<f64>) -> Result<Self> {
        if side == 0 || values.len() != 3 * side * side {
            return Err(Error::invalid(format!(
                "model input of side {side} needs {} values, got {}",
                3 * side * side,
                values.len()
            )));
        }
        Ok(Self { side, values })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn channels(&self) -> usize {
        3
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Replicates a grayscale image to three identical channels; three-channel input passes through.
pub fn expand_channels(img: &Image) -> Result<Image> {
    match img.channels() {
        3 => Ok(img.clone()),
        1 => {
            let plane = img.plane(0);
            let mut values = Vec::with_capacity(plane.len() * 3);
            for _ in 0..3 {
                values.extend_from_slice(plane);
            }
            Ok(Image::from_parts_unchecked(img.width(), img.height(), 3, values))
        }
        c => Err(Error::invalid(format!("cannot expand an image with {c} channels"))),
    }
}

/// Replaces channel 0 with `0.5·red + 0.5·mask`; other channels are untouched.
pub fn blend(img3: &Image, mask: &BinaryMask) -> Result<Image> {
    if img3.channels() != 3 {
        return Err(Error::invalid(format!(
            "blend expects a 3-channel image, got {} channels",
            img3.channels()
        )));
    }
    if img3.dims() != mask.dims() {
        return Err(Error::DimensionMismatch {
            expected: img3.dims(),
            found: mask.dims(),
        });
    }
    let mut out = img3.clone();
    for (r, &m) in out.plane_mut(0).iter_mut().zip(mask.values()) {
        *r = 0.5 * *r + 0.5 * m as f64;
    }
    Ok(out)
}

/// Sub-raster `[y0, y1) × [x0, x1)` across all channels.
pub fn crop(img: &Image, bx: &BoxPrompt) -> Result<Image> {
    bx.validate_within(img.width(), img.height())?;
    let (cw, ch) = (bx.width(), bx.height());
    let mut values = Vec::with_capacity(cw * ch * img.channels());
    for c in 0..img.channels() {
        let plane = img.plane(c);
        for y in bx.y0..bx.y1 {
            let row = y * img.width();
            values.extend_from_slice(&plane[row + bx.x0..row + bx.x1]);
        }
    }
    Ok(Image::from_parts_unchecked(cw, ch, img.channels(), values))
}

/// Source sampling taps for one output axis: `(lo, hi, weight_of_hi)`.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    let last = (src - 1) as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear resize to `side × side` with half-pixel centers and clamped edges.
pub fn resize(img: &Image, side: usize) -> Result<Image> {
    if side == 0 {
        return Err(Error::invalid("resize target side must be at least 1"));
    }
    let (w, h) = img.dims();
    if w == side && h == side {
        return Ok(img.clone());
    }
    let xs = bilinear_taps(w, side);
    let ys = bilinear_taps(h, side);
    let mut values = Vec::with_capacity(side * side * img.channels());
    for c in 0..img.channels() {
        let plane = img.plane(c);
        for &(y0, y1, fy) in &ys {
            let r0 = &plane[y0 * w..(y0 + 1) * w];
            let r1 = &plane[y1 * w..(y1 + 1) * w];
            for &(x0, x1, fx) in &xs {
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
                // Convex combinations can drift by an ulp past the ends of [0, 1].
                values.push((top + (bottom - top) * fy).clamp(0.0, 1.0));
            }
        }
    }
    Ok(Image::from_parts_unchecked(side, side, img.channels(), values))
}

/// The full transform: `resize(crop(blend(expand_channels(img), mask), box), side)`.
pub fn psi(img: &Image, mask: &BinaryMask, bx: &BoxPrompt, side: usize) -> Result<ModelInput> {
    let expanded = expand_channels(img)?;
    let blended = blend(&expanded, mask)?;
    let cropped = crop(&blended, bx)?;
    ModelInput::from_image(resize(&cropped, side)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        let mut v = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                v.push(f(x, y));
            }
        }
        Image::from_planar(w, h, 1, v).unwrap()
    }

    #[test]
    fn expand_replicates_gray() {
        let img = Image::constant(5, 4, 1, 0.3).unwrap();
        let out = expand_channels(&img).unwrap();
        assert_eq!(out.channels(), 3);
        assert_eq!(out.dims(), (5, 4));
        assert!(out.values().iter().all(|&v| v == 0.3));
        let rgb = expand_channels(&out).unwrap();
        assert_eq!(rgb, out);
    }

    #[test]
    fn blend_formula() {
        let img = expand_channels(&Image::constant(2, 1, 1, 0.4).unwrap()).unwrap();
        let mask = BinaryMask::from_vec(2, 1, vec![1, 0]).unwrap();
        let out = blend(&img, &mask).unwrap();
        assert!((out.get(0, 0, 0) - 0.7).abs() < 1e-15);
        assert!((out.get(1, 0, 0) - 0.2).abs() < 1e-15);
        assert_eq!(out.plane(1), img.plane(1));
        assert_eq!(out.plane(2), img.plane(2));
        assert!(blend(&img, &BinaryMask::zeros(1, 2).unwrap()).is_err());
        assert!(blend(&Image::constant(2, 1, 1, 0.4).unwrap(), &mask).is_err());
    }

    #[test]
    fn blend_with_empty_mask_halves_red() {
        let img = expand_channels(&gray(4, 3, |x, y| (x + y) as f64 / 10.0)).unwrap();
        let out = blend(&img, &BinaryMask::zeros(4, 3).unwrap()).unwrap();
        for (o, i) in out.plane(0).iter().zip(img.plane(0)) {
            assert_eq!(*o, 0.5 * i);
        }
    }

    #[test]
    fn blend_is_invertible_on_red() {
        let img = expand_channels(&gray(9, 7, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0)).unwrap();
        let mask = BinaryMask::from_fn(9, 7, |x, y| (x + y) % 3 == 0).unwrap();
        let out = blend(&img, &mask).unwrap();
        for ((o, i), &m) in out.plane(0).iter().zip(img.plane(0)).zip(mask.values()) {
            let back = 2.0 * o - m as f64;
            assert!((back - i).abs() <= f64::EPSILON);
        }
    }

    #[test]
    fn crop_contracts() {
        let img = gray(120, 90, |x, y| ((x * 3 + y) % 17) as f64 / 16.0);
        assert_eq!(crop(&img, &BoxPrompt::new(0, 0, 120, 90)).unwrap(), img);
        let c = crop(&img, &BoxPrompt::new(10, 5, 110, 85)).unwrap();
        assert_eq!(c.dims(), (100, 80));
        assert_eq!(c.get(0, 0, 0), img.get(10, 5, 0));
        let one = crop(&img, &BoxPrompt::new(7, 8, 8, 9)).unwrap();
        assert_eq!(one.values(), &[img.get(7, 8, 0)]);
        assert!(crop(&img, &BoxPrompt::new(0, 0, 121, 10)).is_err());
    }

    #[test]
    fn resize_contracts() {
        let img = gray(6, 6, |x, y| (x * y) as f64 / 25.0);
        assert_eq!(resize(&img, 6).unwrap(), img);
        let flat = Image::constant(13, 7, 1, 0.42).unwrap();
        let out = resize(&flat, 10).unwrap();
        assert!(out.values().iter().all(|&v| (v - 0.42).abs() < 1e-15));
        let checker = gray(2, 2, |x, y| ((x + y) % 2) as f64);
        let up = resize(&checker, 3).unwrap();
        assert!((up.get(1, 1, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn psi_shape_and_constant_case() {
        let img = Image::constant(40, 30, 1, 0.6).unwrap();
        let mask = BinaryMask::zeros(40, 30).unwrap();
        let bx = BoxPrompt::new(3, 4, 25, 20);
        let out = psi(&img, &mask, &bx, DEFAULT_INPUT_SIDE).unwrap();
        assert_eq!(out.side(), DEFAULT_INPUT_SIDE);
        assert_eq!(out.values().len(), 3 * DEFAULT_INPUT_SIDE * DEFAULT_INPUT_SIDE);
        let n = DEFAULT_INPUT_SIDE * DEFAULT_INPUT_SIDE;
        assert!(out.values()[..n].iter().all(|&v| (v - 0.3).abs() < 1e-12));
        assert!(out.values()[n..].iter().all(|&v| (v - 0.6).abs() < 1e-12));
        assert_eq!(out, psi(&img, &mask, &bx, DEFAULT_INPUT_SIDE).unwrap());
    }

    fn arb_case() -> impl Strategy<Value = (Image, BinaryMask, BoxPrompt, usize)> {
        (2usize..24, 2usize..24).prop_flat_map(|(w, h)| {
            (
                proptest::collection::vec(0.0..=1.0f64, w * h),
                proptest::collection::vec(0u8..=1, w * h),
                (0..w, 0..h),
                (1..=w, 1..=h),
                1usize..40,
            )
                .prop_map(move |(pix, m, (x0, y0), (dx, dy), side)| {
                    let x1 = (x0 + dx).min(w).max(x0 + 1);
                    let y1 = (y0 + dy).min(h).max(y0 + 1);
                    (
                        Image::from_planar(w, h, 1, pix).unwrap(),
                        BinaryMask::from_vec(w, h, m).unwrap(),
                        BoxPrompt::new(x0, y0, x1, y1),
                        side,
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn psi_output_in_unit_range((img, mask, bx, side) in arb_case()) {
            let out = psi(&img, &mask, &bx, side).unwrap();
            prop_assert!(out.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn psi_commutes_with_horizontal_flip((img, mask, bx, side) in arb_case()) {
            let out = psi(&img, &mask, &bx, side).unwrap();
            let flipped = psi(
                &img.flip_horizontal(),
                &mask.flip_horizontal(),
                &bx.flip_horizontal(img.width()),
                side,
            )
            .unwrap();
            let back = Image::from_planar(side, side, 3, flipped.values().to_vec()).unwrap().flip_horizontal();
            for (a, b) in out.values().iter().zip(back.values()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
