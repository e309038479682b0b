//! Multi-scale training set construction.
//!
//! Each image is resized to every pyramid scale, its ground truth is
//! regenerated from the scaled points at that resolution, and both are cut
//! into overlapping square patches. Patches denser than the median can then
//! be repeated so crowded scenes are seen more often.

use serde::{Deserialize, Serialize};

use crate::density::{generate_density_map, scale_annotations, AnnotationSet, DensityMap, Point};
use crate::error::{Error, Result};
use crate::image::GrayImage;

pub const PATCH_SIZE: usize = 225;
pub const PATCH_OVERLAP: f64 = 0.5;

/// The eight pyramid factors, 0.5 to 1.2 in steps of 0.1.
pub fn pyramid_scales() -> Vec<f64> {
    (5..=12).map(|i| i as f64 / 10.0).collect()
}

/// `floor(len * scale)`, guarded against products like `699.9999999`.
pub fn scaled_dim(len: usize, scale: f64) -> usize {
    (len as f64 * scale + 1e-9).floor() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OversampleRule {
    pub enabled: bool,
    /// Total number of appearances of a patch whose count exceeds the median.
    pub multiplicity: usize,
}

impl Default for OversampleRule {
    fn default() -> Self {
        OversampleRule {
            enabled: true,
            multiplicity: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub scales: Vec<f64>,
    pub patch_size: usize,
    pub overlap: f64,
    pub oversample: OversampleRule,
    /// Append a horizontally mirrored copy of every patch.
    pub flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scales: pyramid_scales(),
            patch_size: PATCH_SIZE,
            overlap: PATCH_OVERLAP,
            oversample: OversampleRule::default(),
            flip: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::Config("augmentation.scales must not be empty".into()));
        }
        if self.scales.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::Config(format!("augmentation.scales must be positive, got {:?}", self.scales)));
        }
        if self.patch_size == 0 {
            return Err(Error::Config("augmentation.patch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!("augmentation.overlap must be in [0, 1), got {}", self.overlap)));
        }
        if self.oversample.multiplicity == 0 {
            return Err(Error::Config("augmentation.oversample.multiplicity must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidLevel {
    pub scale: f64,
    pub image: GrayImage,
    pub points: Vec<Point>,
}

/// One training sample cut from a pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchRecord {
    pub image_id: String,
    pub scale: f64,
    /// Top-left corner `(x, y)` within the level.
    pub origin: (usize, usize),
    pub image: GrayImage,
    pub gt: DensityMap,
    pub gt_count: f64,
}

/// Resizes `image` to every configured scale, dropping levels whose shorter
/// side falls below the patch size. An image too small even at the largest
/// scale is first mirror-padded up to one patch.
pub fn build_pyramid(image: &GrayImage, points: &[Point], cfg: &AugmentConfig) -> Result<Vec<PyramidLevel>> {
    cfg.validate()?;
    let patch = cfg.patch_size;
    let max_scale = cfg.scales.iter().copied().fold(f64::MIN, f64::max);
    let source = if scaled_dim(image.width, max_scale) < patch || scaled_dim(image.height, max_scale) < patch {
        let w = if scaled_dim(image.width, max_scale) < patch { image.width.max(patch) } else { image.width };
        let h = if scaled_dim(image.height, max_scale) < patch { image.height.max(patch) } else { image.height };
        image.reflect_pad_to(w, h)
    } else {
        image.clone()
    };

    let mut levels = Vec::new();
    for &scale in &cfg.scales {
        let (w, h) = (scaled_dim(source.width, scale), scaled_dim(source.height, scale));
        if w.min(h) < patch {
            continue;
        }
        levels.push(PyramidLevel {
            scale,
            image: source.resize(w, h)?,
            points: scale_annotations(points, scale, w, h),
        });
    }
    Ok(levels)
}

/// Patch origins along one axis: a regular grid with stride
/// `floor(patch * (1 - overlap))`, plus a final origin flush with the end.
pub fn patch_origins(dim: usize, patch: usize, overlap: f64) -> Result<Vec<usize>> {
    if dim < patch {
        return Err(Error::invalid(
            "patch_origins",
            format!("axis length {dim} is shorter than the patch size {patch}"),
        ));
    }
    let stride = ((patch as f64 * (1.0 - overlap)).floor() as usize).max(1);
    let last = dim - patch;
    let mut origins: Vec<usize> = (0..=last).step_by(stride).collect();
    if origins.last() != Some(&last) {
        origins.push(last);
    }
    Ok(origins)
}

/// Cuts every level into patches, row-major over the origin grid.
pub fn extract_patch_dataset(
    image_id: &str,
    levels: &[PyramidLevel],
    sigma: f64,
    cfg: &AugmentConfig,
) -> Result<Vec<PatchRecord>> {
    let patch = cfg.patch_size;
    let mut records = Vec::new();
    for level in levels {
        let (w, h) = (level.image.width, level.image.height);
        let gt = generate_density_map(&level.points, w, h, sigma)?;
        let xs = patch_origins(w, patch, cfg.overlap)?;
        let ys = patch_origins(h, patch, cfg.overlap)?;
        for &y in &ys {
            for &x in &xs {
                let gt_patch = gt.crop(x, y, patch, patch)?;
                records.push(PatchRecord {
                    image_id: image_id.to_string(),
                    scale: level.scale,
                    origin: (x, y),
                    image: level.image.crop(x, y, patch, patch)?,
                    gt_count: gt_patch.sum(),
                    gt: gt_patch,
                });
            }
        }
    }
    Ok(records)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Repeats every record whose count is strictly above the median so that it
/// appears `multiplicity` times. Originals keep their order and come first;
/// each extra round of copies follows in the same order.
pub fn oversample_dense(records: Vec<PatchRecord>, multiplicity: usize) -> Result<Vec<PatchRecord>> {
    if records.is_empty() {
        return Err(Error::Empty { what: "patch set" });
    }
    let mut counts: Vec<f64> = records.iter().map(|r| r.gt_count).collect();
    let m = median(&mut counts);
    let dense: Vec<usize> = (0..records.len()).filter(|&i| records[i].gt_count > m).collect();
    let mut out = Vec::with_capacity(records.len() + dense.len() * multiplicity.saturating_sub(1));
    out.extend(records.iter().cloned());
    for _ in 1..multiplicity {
        out.extend(dense.iter().map(|&i| records[i].clone()));
    }
    Ok(out)
}

pub fn flip_record(r: &PatchRecord) -> PatchRecord {
    let mut values = Vec::with_capacity(r.gt.values.len());
    for row in r.gt.values.chunks(r.gt.width.max(1)) {
        values.extend(row.iter().rev());
    }
    PatchRecord {
        image: r.image.flip_horizontal(),
        gt: DensityMap {
            values,
            ..r.gt.clone()
        },
        ..r.clone()
    }
}

/// The complete per-image pipeline: pyramid, then patches.
pub fn augment_image(
    image: &GrayImage,
    annotations: &AnnotationSet,
    sigma: f64,
    cfg: &AugmentConfig,
) -> Result<Vec<PatchRecord>> {
    let levels = build_pyramid(image, &annotations.points, cfg)?;
    extract_patch_dataset(&annotations.image_id, &levels, sigma, cfg)
}

/// Patches of every image in input order, then flips and oversampling as
/// configured.
pub fn build_training_set(
    samples: &[(GrayImage, AnnotationSet)],
    sigma: f64,
    cfg: &AugmentConfig,
) -> Result<Vec<PatchRecord>> {
    let mut records = Vec::new();
    for (image, ann) in samples {
        records.extend(augment_image(image, ann, sigma, cfg)?);
    }
    if cfg.flip {
        let flipped: Vec<PatchRecord> = records.iter().map(flip_record).collect();
        records.extend(flipped);
    }
    if cfg.oversample.enabled {
        records = oversample_dense(records, cfg.oversample.multiplicity)?;
    }
    if records.is_empty() {
        return Err(Error::Empty { what: "patch set" });
    }
    Ok(records)
}

/// Mean pixel value over all patches, used for input normalization.
pub fn mean_pixel(records: &[PatchRecord]) -> f32 {
    let n: usize = records.iter().map(|r| r.image.pixels.len()).sum();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = records.iter().map(|r| r.image.pixels.iter().map(|&p| p as f64).sum::<f64>()).sum();
    (total / n as f64) as f32
}
