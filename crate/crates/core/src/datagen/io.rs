//! Dataset directory format.
//!
//! ```text
//! manifest.json
//! images/<sample>.pgm | .ppm      8-bit binary P5/P6, maxval 255
//! gt/<sample>_<object>.pgm        0 = background, 255 = foreground
//! pred/<sample>_<object>_<m>.pgm  same encoding, m = segmenter index
//! ```
//!
//! Quality values stored in the manifest are informational; loading always
//! recomputes them from the masks.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};
use serde::{Deserialize, Serialize};

use super::{build_tuple, Dataset, SyntheticConfig, TrainingTuple};
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, BoxPrompt, Image};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub object_id: u32,
    pub segmenter_id: String,
    pub image: String,
    pub gt: String,
    pub pred: String,
    pub prompt: BoxPrompt,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_dice: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_hd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    /// Number of distinct images.
    pub n: usize,
    /// Number of segmenters.
    #[serde(rename = "M")]
    pub m: usize,
    pub segmenters: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SyntheticConfig>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub(super) fn describe(tuples: &[TrainingTuple], config: &SyntheticConfig) -> Self {
        let segmenters: Vec<String> = config.profiles.iter().map(|p| p.name.clone()).collect();
        let index: HashMap<&str, usize> = segmenters.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let entries = tuples
            .iter()
            .map(|t| {
                let m = index[t.segmenter_id.as_str()];
                ManifestEntry {
                    sample_id: t.sample_id.clone(),
                    object_id: t.object_id,
                    segmenter_id: t.segmenter_id.clone(),
                    image: format!("images/{}.pgm", t.sample_id),
                    gt: format!("gt/{}_{}.pgm", t.sample_id, t.object_id),
                    pred: format!("pred/{}_{}_{}.pgm", t.sample_id, t.object_id, m),
                    prompt: t.prompt,
                    q_dice: Some(t.q_dice),
                    q_hd: Some(t.q_hd),
                }
            })
            .collect();
        Self {
            version: MANIFEST_VERSION,
            n: config.n_images,
            m: segmenters.len(),
            segmenters,
            seed: Some(config.seed),
            generator: Some(config.clone()),
            entries,
        }
    }

    /// Number of objects per image, keyed by sample id.
    pub fn objects_per_image(&self) -> BTreeMap<&str, usize> {
        let mut objects: BTreeMap<&str, BTreeSet<u32>> = BTreeMap::new();
        for e in &self.entries {
            objects.entry(e.sample_id.as_str()).or_default().insert(e.object_id);
        }
        objects.into_iter().map(|(k, v)| (k, v.len())).collect()
    }
}

pub(super) fn write_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    for sub in ["images", "gt", "pred"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut written = BTreeSet::new();
    for (t, e) in ds.tuples.iter().zip(&ds.manifest.entries) {
        if written.insert(e.image.clone()) {
            write_image(&dir.join(&e.image), &t.image)?;
        }
        if written.insert(e.gt.clone()) {
            write_mask(&dir.join(&e.gt), &t.gt_mask)?;
        }
        write_mask(&dir.join(&e.pred), &t.pred_mask)?;
    }
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&ds.manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn encode_pnm(path: &Path, width: usize, height: usize, bytes: &[u8], color: ExtendedColorType) -> Result<()> {
    let subtype = match color {
        ExtendedColorType::Rgb8 => PnmSubtype::Pixmap(SampleEncoding::Binary),
        _ => PnmSubtype::Graymap(SampleEncoding::Binary),
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(bytes, width as u32, height as u32, color)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes a 1-channel image as P5 or a 3-channel image as P6.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let (w, h) = img.dims();
    if img.channels() == 1 {
        let bytes: Vec<u8> = img.values().iter().map(|&v| to_u8(v)).collect();
        encode_pnm(path, w, h, &bytes, ExtendedColorType::L8)
    } else {
        let mut bytes = Vec::with_capacity(w * h * 3);
        for i in 0..w * h {
            for c in 0..3 {
                bytes.push(to_u8(img.plane(c)[i]));
            }
        }
        encode_pnm(path, w, h, &bytes, ExtendedColorType::Rgb8)
    }
}

/// Writes a mask as P5 with foreground 255.
pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let bytes: Vec<u8> = mask.values().iter().map(|&v| v * 255).collect();
    encode_pnm(path, mask.width(), mask.height(), &bytes, ExtendedColorType::L8)
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if reader.format() != Some(image::ImageFormat::Pnm) {
        return Err(Error::parse(path, "not a binary PGM/PPM file"));
    }
    reader.decode().map_err(|e| Error::parse(path, e.to_string()))
}

/// Reads an 8-bit P5 or P6 file; intensities map to `v / 255`.
pub fn read_image(path: &Path) -> Result<Image> {
    match decode(path)? {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            let values = buf.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
            Image::from_planar(w as usize, h as usize, 1, values)
        }
        DynamicImage::ImageRgb8(buf) => {
            let (w, h) = buf.dimensions();
            let n = (w * h) as usize;
            let raw = buf.as_raw();
            let mut values = vec![0.0; 3 * n];
            for i in 0..n {
                for c in 0..3 {
                    values[c * n + i] = raw[3 * i + c] as f64 / 255.0;
                }
            }
            Image::from_planar(w as usize, h as usize, 3, values)
        }
        other => Err(Error::parse(
            path,
            format!(
                "unsupported pixel layout {:?}; expected 8-bit gray or RGB",
                other.color()
            ),
        )),
    }
}

/// Reads a P5 mask whose samples are exactly 0 or 255.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let DynamicImage::ImageLuma8(buf) = decode(path)? else {
        return Err(Error::parse(path, "masks must be 8-bit grayscale (P5)"));
    };
    let (w, h) = buf.dimensions();
    let mut values = Vec::with_capacity(buf.as_raw().len());
    for (i, &v) in buf.as_raw().iter().enumerate() {
        values.push(match v {
            0 => 0,
            255 => 1,
            other => {
                return Err(Error::parse(
                    path,
                    format!(
                        "mask is not binary: value {other} at ({}, {}); only 0 and 255 are allowed",
                        i % w as usize,
                        i / w as usize
                    ),
                ))
            }
        });
    }
    BinaryMask::from_vec(w as usize, h as usize, values)
}

/// Loads a dataset directory, recomputing every quality target from the masks.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::parse(&manifest_path, e.to_string()))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::parse(
            &manifest_path,
            format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                manifest.version
            ),
        ));
    }
    if manifest.segmenters.is_empty() || manifest.m != manifest.segmenters.len() {
        return Err(Error::parse(
            &manifest_path,
            format!(
                "M = {} does not match {} listed segmenters",
                manifest.m,
                manifest.segmenters.len()
            ),
        ));
    }
    let known: BTreeSet<&str> = manifest.segmenters.iter().map(String::as_str).collect();

    let mut images: HashMap<String, Arc<Image>> = HashMap::new();
    let mut gts: HashMap<String, Arc<BinaryMask>> = HashMap::new();
    let mut groups: BTreeMap<(&str, u32), BTreeSet<&str>> = BTreeMap::new();
    let mut tuples = Vec::with_capacity(manifest.entries.len());

    for e in &manifest.entries {
        let id = format!("{}/{}/{}", e.sample_id, e.object_id, e.segmenter_id);
        if !known.contains(e.segmenter_id.as_str()) {
            return Err(Error::parse(
                &manifest_path,
                format!("entry {id} names unlisted segmenter `{}`", e.segmenter_id),
            ));
        }
        if !groups
            .entry((e.sample_id.as_str(), e.object_id))
            .or_default()
            .insert(e.segmenter_id.as_str())
        {
            return Err(Error::parse(&manifest_path, format!("duplicate entry {id}")));
        }
        let resolve = |rel: &str| -> Result<PathBuf> {
            let p = dir.join(rel);
            if p.is_file() {
                Ok(p)
            } else {
                Err(Error::parse(
                    &p,
                    format!("file referenced by entry {id} does not exist"),
                ))
            }
        };
        let image = match images.get(&e.image) {
            Some(img) => Arc::clone(img),
            None => {
                let img = Arc::new(read_image(&resolve(&e.image)?)?);
                images.insert(e.image.clone(), Arc::clone(&img));
                img
            }
        };
        let gt = match gts.get(&e.gt) {
            Some(m) => Arc::clone(m),
            None => {
                let m = Arc::new(read_mask(&resolve(&e.gt)?)?);
                gts.insert(e.gt.clone(), Arc::clone(&m));
                m
            }
        };
        let pred_path = resolve(&e.pred)?;
        let pred = read_mask(&pred_path)?;
        for (what, path, dims) in [("ground truth", &e.gt, gt.dims()), ("prediction", &e.pred, pred.dims())] {
            if dims != image.dims() {
                return Err(Error::parse(
                    dir.join(path),
                    format!("{what} is {dims:?} but image {} is {:?}", e.image, image.dims()),
                ));
            }
        }
        e.prompt
            .validate_within(image.width(), image.height())
            .map_err(|err| Error::parse(&manifest_path, format!("entry {id}: {err}")))?;
        tuples.push(build_tuple(
            image,
            gt,
            pred,
            e.prompt,
            (e.sample_id.clone(), e.object_id, e.segmenter_id.clone()),
        )?);
    }

    for ((sample, object), present) in &groups {
        if let Some(missing) = known.difference(present).next() {
            return Err(Error::parse(
                &manifest_path,
                format!("missing entry {sample}/{object}/{missing}"),
            ));
        }
    }
    let distinct = groups.keys().map(|(s, _)| *s).collect::<BTreeSet<_>>().len();
    if distinct != manifest.n {
        return Err(Error::parse(
            &manifest_path,
            format!("manifest declares n = {} but lists {distinct} images", manifest.n),
        ));
    }
    Ok(Dataset { manifest, tuples })
}
