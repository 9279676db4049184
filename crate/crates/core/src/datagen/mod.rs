//! Training tuples `(image, prompt, gt mask, predicted mask, quality)`: synthetic
//! generation with mock segmenters, and the on-disk dataset format.

mod io;
pub mod perturb;
pub mod shapes;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{dice, hausdorff, normalized_hd};
use crate::raster::{BinaryMask, BoxPrompt, Image};

pub use io::{load_dataset, DatasetManifest, ManifestEntry, MANIFEST_FILE, MANIFEST_VERSION};
pub use perturb::{mock_segmenter, perturb, Profile};
pub use shapes::gen_shape;

/// One supervised example for the evaluator.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTuple {
    pub image: Arc<Image>,
    pub prompt: BoxPrompt,
    pub gt_mask: Arc<BinaryMask>,
    pub pred_mask: BinaryMask,
    pub q_dice: f64,
    /// Hausdorff distance over the prompt diagonal, clamped to `[0, 1]`.
    pub q_hd: f64,
    pub segmenter_id: String,
    pub sample_id: String,
    pub object_id: u32,
}

impl TrainingTuple {
    /// Regression targets in head order: Dice first, then normalized Hausdorff.
    pub fn targets(&self, heads: usize) -> Vec<f64> {
        [self.q_dice, self.q_hd][..heads].to_vec()
    }
}

/// Computes the quality targets for `pred` against `gt` and packages the tuple.
///
/// An empty prediction has no Hausdorff distance; its normalized value is 1.
pub fn build_tuple(
    image: Arc<Image>,
    gt: Arc<BinaryMask>,
    pred: BinaryMask,
    prompt: BoxPrompt,
    ids: (String, u32, String),
) -> Result<TrainingTuple> {
    if image.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: image.dims(),
            found: gt.dims(),
        });
    }
    prompt.validate_within(image.width(), image.height())?;
    let q_dice = dice(&pred, &gt)?;
    let q_hd = match hausdorff(&pred, &gt) {
        Ok(hd) => normalized_hd(hd, prompt.diagonal())?,
        Err(Error::EmptyMask) => 1.0,
        Err(e) => return Err(e),
    };
    let (sample_id, object_id, segmenter_id) = ids;
    Ok(TrainingTuple {
        image,
        prompt,
        gt_mask: gt,
        pred_mask: pred,
        q_dice,
        q_hd,
        segmenter_id,
        sample_id,
        object_id,
    })
}

/// Parameters of the synthetic generator. Output is a pure function of this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_images: usize,
    pub objects_per_image: usize,
    pub image_size: usize,
    pub profiles: Vec<Profile>,
    pub seed: u64,
    /// Maximum per-side prompt jitter as a fraction of the box extent.
    pub jitter: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_images: 50,
            objects_per_image: 1,
            image_size: 96,
            profiles: Profile::defaults(),
            seed: 0,
            jitter: 0.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 || self.objects_per_image == 0 {
            return Err(Error::invalid("need at least one image and one object per image"));
        }
        if self.image_size < shapes::MIN_SHAPE_SIDE {
            return Err(Error::invalid(format!(
                "image_size must be at least {}",
                shapes::MIN_SHAPE_SIDE
            )));
        }
        if self.profiles.is_empty() {
            return Err(Error::invalid("need at least one segmenter profile"));
        }
        let names: BTreeSet<_> = self.profiles.iter().map(|p| &p.name).collect();
        if names.len() != self.profiles.len() {
            return Err(Error::invalid("segmenter profile names must be unique"));
        }
        for p in &self.profiles {
            p.validate()?;
        }
        if !(0.0..=0.05).contains(&self.jitter) {
            return Err(Error::invalid("jitter must lie in [0, 0.05]"));
        }
        Ok(())
    }
}

/// Tuples plus the manifest that describes them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub tuples: Vec<TrainingTuple>,
}

impl Dataset {
    /// Writes the manifest and raster files under `dir`; returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<std::path::PathBuf> {
        io::write_dataset(self, dir)
    }

    /// Distinct segmenter ids in manifest order.
    pub fn segmenters(&self) -> &[String] {
        &self.manifest.segmenters
    }
}

const STREAM_IMAGE: u64 = 1;
const STREAM_OBJECT: u64 = 2;
const STREAM_PROMPT: u64 = 3;
const STREAM_SEGMENTER: u64 = 4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream seed for a `(master, parts…)` coordinate.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

fn stream(master: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, parts))
}

pub fn sample_name(i: usize) -> String {
    format!("s{i:05}")
}

fn jittered_box<R: Rng + ?Sized>(rng: &mut R, tight: BoxPrompt, w: usize, h: usize, jitter: f64) -> BoxPrompt {
    if jitter == 0.0 {
        return tight;
    }
    let mut side = |lo: usize, hi: usize, limit: usize| {
        let span = (hi - lo) as f64;
        let d0 = (rng.random_range(-jitter..=jitter) * span).round() as isize;
        let d1 = (rng.random_range(-jitter..=jitter) * span).round() as isize;
        let a = (lo as isize - d0).clamp(0, limit as isize - 1) as usize;
        let b = (hi as isize + d1).clamp(a as isize + 1, limit as isize) as usize;
        (a, b)
    };
    let (x0, x1) = side(tight.x0, tight.x1, w);
    let (y0, y1) = side(tight.y0, tight.y1, h);
    BoxPrompt::new(x0, y0, x1, y1)
}

fn generate_image(config: &SyntheticConfig, i: usize) -> Result<Vec<TrainingTuple>> {
    let size = config.image_size;
    let gts: Vec<Arc<BinaryMask>> = (0..config.objects_per_image)
        .map(|j| {
            gen_shape(
                &mut stream(config.seed, &[STREAM_OBJECT, i as u64, j as u64]),
                size,
                size,
            )
            .map(Arc::new)
        })
        .collect::<Result<_>>()?;
    let union = BinaryMask::from_fn(size, size, |x, y| gts.iter().any(|g| g.get(x, y)))?;
    let image = Arc::new(shapes::render_image(
        &mut stream(config.seed, &[STREAM_IMAGE, i as u64]),
        &union,
    ));

    let mut out = Vec::with_capacity(config.objects_per_image * config.profiles.len());
    for (j, gt) in gts.iter().enumerate() {
        let tight = gt.bounding_box().expect("shapes are nonempty");
        let mut prompt_rng = stream(config.seed, &[STREAM_PROMPT, i as u64, j as u64]);
        let prompt = jittered_box(&mut prompt_rng, tight, size, size, config.jitter);
        for (m, profile) in config.profiles.iter().enumerate() {
            let mut rng = stream(config.seed, &[STREAM_SEGMENTER, i as u64, j as u64, m as u64]);
            let pred = profile.segment(gt, &mut rng)?;
            out.push(build_tuple(
                Arc::clone(&image),
                Arc::clone(gt),
                pred,
                prompt,
                (sample_name(i), j as u32, profile.name.clone()),
            )?);
        }
    }
    Ok(out)
}

/// Generates `n · k · M` tuples in `(image, object, segmenter)` order.
pub fn generate(config: &SyntheticConfig) -> Result<Dataset> {
    config.validate()?;
    let per_image: Vec<Vec<TrainingTuple>> = (0..config.n_images)
        .into_par_iter()
        .map(|i| generate_image(config, i))
        .collect::<Result<_>>()?;
    let tuples: Vec<TrainingTuple> = per_image.into_iter().flatten().collect();
    let manifest = DatasetManifest::describe(&tuples, config);
    Ok(Dataset { manifest, tuples })
}

/// Generates a dataset and writes it to `dir`.
pub fn gen_dataset(config: &SyntheticConfig, dir: &Path) -> Result<Dataset> {
    let ds = generate(config)?;
    ds.write(dir)?;
    Ok(ds)
}

/// Splits tuples by sample: the last `ceil(fraction · samples)` distinct sample
/// ids (in sorted order) are held out. Returns `(train, held_out)`.
pub fn split_holdout(tuples: &[TrainingTuple], fraction: f64) -> Result<(Vec<TrainingTuple>, Vec<TrainingTuple>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!(
            "holdout fraction {fraction} must lie in [0, 1)"
        )));
    }
    let samples: BTreeSet<&str> = tuples.iter().map(|t| t.sample_id.as_str()).collect();
    let held = (fraction * samples.len() as f64).ceil() as usize;
    let first_held = samples.iter().nth(samples.len() - held).copied();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for t in tuples {
        match first_held {
            Some(cut) if t.sample_id.as_str() >= cut => test.push(t.clone()),
            _ => train.push(t.clone()),
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n_images: n,
            image_size: 48,
            seed,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn tuple_targets_for_extremes() {
        let gt = Arc::new(BinaryMask::from_fn(10, 10, |x, y| x < 4 && y < 4).unwrap());
        let img = Arc::new(Image::constant(10, 10, 1, 0.5).unwrap());
        let ids = || ("s0".to_string(), 0, "m".to_string());
        let bx = gt.bounding_box().unwrap();
        let same = build_tuple(img.clone(), gt.clone(), (*gt).clone(), bx, ids()).unwrap();
        assert_eq!((same.q_dice, same.q_hd), (1.0, 0.0));
        let apart = BinaryMask::from_fn(10, 10, |x, y| x > 6 && y > 6).unwrap();
        let t = build_tuple(img.clone(), gt.clone(), apart, bx, ids()).unwrap();
        assert_eq!(t.q_dice, 0.0);
        assert_eq!(t.q_hd, 1.0);
        let empty = build_tuple(img, gt, BinaryMask::zeros(10, 10).unwrap(), bx, ids()).unwrap();
        assert_eq!((empty.q_dice, empty.q_hd), (0.0, 1.0));
    }

    #[test]
    fn generation_counts_and_invariants() {
        let cfg = SyntheticConfig {
            objects_per_image: 2,
            jitter: 0.05,
            ..small(5, 3)
        };
        let ds = generate(&cfg).unwrap();
        assert_eq!(ds.tuples.len(), 5 * 2 * 3);
        for t in &ds.tuples {
            assert!((dice(&t.pred_mask, &t.gt_mask).unwrap() - t.q_dice).abs() < 1e-9);
            let hd = hausdorff(&t.pred_mask, &t.gt_mask).unwrap();
            assert!((normalized_hd(hd, t.prompt.diagonal()).unwrap() - t.q_hd).abs() < 1e-9);
            t.prompt.validate_within(48, 48).unwrap();
        }
        let tight = generate(&small(4, 3)).unwrap();
        for t in &tight.tuples {
            assert_eq!(Some(t.prompt), t.gt_mask.bounding_box());
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let a = generate(&small(6, 42)).unwrap();
        let b = generate(&small(6, 42)).unwrap();
        assert_eq!(a.tuples, b.tuples);
        let c = generate(&small(6, 43)).unwrap();
        assert_ne!(a.tuples, c.tuples);
    }

    #[test]
    fn default_profiles_span_quality_range() {
        let ds = generate(&small(60, 1)).unwrap();
        assert!(ds.tuples.iter().any(|t| t.q_dice > 0.8));
        assert!(ds.tuples.iter().any(|t| t.q_dice < 0.4));
    }

    #[test]
    fn holdout_split_is_by_sample() {
        let ds = generate(&small(10, 0)).unwrap();
        let (train, test) = split_holdout(&ds.tuples, 0.2).unwrap();
        assert_eq!(test.len(), 2 * 3);
        assert_eq!(train.len(), 8 * 3);
        assert!(test.iter().all(|t| t.sample_id >= sample_name(8)));
        let (all, none) = split_holdout(&ds.tuples, 0.0).unwrap();
        assert_eq!((all.len(), none.len()), (30, 0));
    }

    #[test]
    fn derived_seeds_differ_per_coordinate() {
        let a = derive_seed(7, &[4, 0, 0, 1]);
        assert_ne!(a, derive_seed(7, &[4, 0, 1, 0]));
        assert_ne!(a, derive_seed(8, &[4, 0, 0, 1]));
        assert_eq!(a, derive_seed(7, &[4, 0, 0, 1]));
    }
}
