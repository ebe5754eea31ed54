//! Patch grid enumeration, labelling, class-balanced sampling and the
//! annotation-based patient split.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roi::TissueMask;
use crate::slide_io::{AnnotationMask, SlideBundle};

pub const PATCH_SIZE: u32 = 256;
pub const PATCH_STRIDE: u32 = 128;

/// A patch is tumor when strictly more than this fraction of its pixels is
/// annotated.
pub const TUMOR_FRACTION: f64 = 0.75;

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("mask does not belong to slide {slide}: {reason}")]
    MaskMismatch { slide: String, reason: String },
    #[error("no {0} patches available to sample")]
    EmptyClass(PatchLabel),
    #[error("sample size {0} is odd; tumor and normal halves must be equal")]
    OddCount(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchLabel {
    Tumor,
    Normal,
    Excluded,
}

impl std::fmt::Display for PatchLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PatchLabel::Tumor => "tumor",
            PatchLabel::Normal => "normal",
            PatchLabel::Excluded => "excluded",
        })
    }
}

impl PatchLabel {
    pub fn from_fraction(fraction: f64) -> Self {
        if fraction > TUMOR_FRACTION {
            PatchLabel::Tumor
        } else if fraction == 0.0 {
            PatchLabel::Normal
        } else {
            PatchLabel::Excluded
        }
    }
}

/// A 256x256 patch at level 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRef {
    pub slide_id: String,
    pub x: u32,
    pub y: u32,
    pub size: u32,
    pub label: PatchLabel,
    pub tumor_fraction: f64,
}

/// Summed-area table over a boolean raster, for exact rectangle counts.
#[derive(Debug, Clone)]
pub struct IntegralMask {
    width: usize,
    height: usize,
    sums: Vec<u64>,
}

impl IntegralMask {
    pub fn new(grid: &Array2<bool>) -> Self {
        let (h, w) = grid.dim();
        let stride = w + 1;
        let mut sums = vec![0u64; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += grid[[y, x]] as u64;
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        IntegralMask {
            width: w,
            height: h,
            sums,
        }
    }

    /// Number of `true` pixels in `[x, x+w) x [y, y+h)`, clipped to the raster.
    pub fn count(&self, x: i64, y: i64, w: u32, h: u32) -> u64 {
        let x0 = x.clamp(0, self.width as i64) as usize;
        let y0 = y.clamp(0, self.height as i64) as usize;
        let x1 = (x + w as i64).clamp(0, self.width as i64) as usize;
        let y1 = (y + h as i64).clamp(0, self.height as i64) as usize;
        if x0 >= x1 || y0 >= y1 {
            return 0;
        }
        let s = self.width + 1;
        self.sums[y1 * s + x1] + self.sums[y0 * s + x0]
            - self.sums[y0 * s + x1]
            - self.sums[y1 * s + x0]
    }

    /// Fraction of a 256x256 patch at `(x, y)` that is `true`. Pixels outside
    /// the raster count as `false`.
    pub fn patch_fraction(&self, x: i64, y: i64) -> f64 {
        self.count(x, y, PATCH_SIZE, PATCH_SIZE) as f64 / (PATCH_SIZE as f64 * PATCH_SIZE as f64)
    }
}

/// Checks that an annotation is a level-0 mask of `bundle`.
pub fn check_annotation(bundle: &SlideBundle, annot: &AnnotationMask) -> Result<(), PatchError> {
    let (w0, h0) = bundle.dimensions();
    if annot.level != 0 || (annot.width(), annot.height()) != (w0, h0) {
        return Err(PatchError::MaskMismatch {
            slide: bundle.id.clone(),
            reason: format!(
                "annotation is {}x{} at level {}, expected {w0}x{h0} at level 0",
                annot.width(),
                annot.height(),
                annot.level
            ),
        });
    }
    Ok(())
}

pub fn check_tissue(bundle: &SlideBundle, tissue: &TissueMask) -> Result<(), PatchError> {
    let dims = bundle
        .level(tissue.level)
        .map(|l| (l.width as usize, l.height as usize))
        .ok();
    if dims != Some((tissue.grid.ncols(), tissue.grid.nrows())) {
        return Err(PatchError::MaskMismatch {
            slide: bundle.id.clone(),
            reason: format!(
                "tissue mask {}x{} does not match level {}",
                tissue.grid.ncols(),
                tissue.grid.nrows(),
                tissue.level
            ),
        });
    }
    Ok(())
}

/// Stride-128 grid of 256x256 patches whose centre pixel lies on tissue,
/// labelled from the annotation (all normal when there is none).
pub fn enumerate_patches(
    bundle: &SlideBundle,
    tissue: &TissueMask,
    annot: Option<&AnnotationMask>,
) -> Result<Vec<PatchRef>, PatchError> {
    check_tissue(bundle, tissue)?;
    let integral = match annot {
        Some(a) => {
            check_annotation(bundle, a)?;
            Some(IntegralMask::new(&a.grid))
        }
        None => None,
    };
    let (w0, h0) = bundle.dimensions();
    let half = (PATCH_SIZE / 2) as i64;
    let mut out = Vec::new();
    for y in (0..h0).step_by(PATCH_STRIDE as usize) {
        for x in (0..w0).step_by(PATCH_STRIDE as usize) {
            if !tissue.contains_level0(x as i64 + half, y as i64 + half) {
                continue;
            }
            let fraction = integral
                .as_ref()
                .map_or(0.0, |i| i.patch_fraction(x as i64, y as i64));
            out.push(PatchRef {
                slide_id: bundle.id.clone(),
                x,
                y,
                size: PATCH_SIZE,
                label: PatchLabel::from_fraction(fraction),
                tumor_fraction: fraction,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOptions {
    /// Draw normal patches from slides that also contain tumor. When false,
    /// normals come only from slides without any tumor or excluded patch.
    pub normals_from_tumor_slides: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            normals_from_tumor_slides: true,
        }
    }
}

/// Draws `n` patches with replacement, exactly half tumor and half normal.
/// For each draw the slide is uniform among slides holding that class and
/// the patch is uniform within the slide.
pub fn balanced_sample(
    patches_by_slide: &BTreeMap<String, Vec<PatchRef>>,
    n: usize,
    seed: u64,
    opts: SampleOptions,
) -> Result<Vec<PatchRef>, PatchError> {
    if !n.is_multiple_of(2) {
        return Err(PatchError::OddCount(n));
    }
    let pools = |label: PatchLabel| -> Vec<Vec<&PatchRef>> {
        patches_by_slide
            .values()
            .filter(|ps| {
                label != PatchLabel::Normal
                    || opts.normals_from_tumor_slides
                    || ps.iter().all(|p| p.label == PatchLabel::Normal)
            })
            .map(|ps| ps.iter().filter(|p| p.label == label).collect::<Vec<_>>())
            .filter(|v| !v.is_empty())
            .collect()
    };
    let tumor = pools(PatchLabel::Tumor);
    let normal = pools(PatchLabel::Normal);
    if tumor.is_empty() {
        return Err(PatchError::EmptyClass(PatchLabel::Tumor));
    }
    if normal.is_empty() {
        return Err(PatchError::EmptyClass(PatchLabel::Normal));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<bool> = (0..n).map(|i| i < n / 2).collect();
    classes.shuffle(&mut rng);
    Ok(classes
        .into_iter()
        .map(|is_tumor| {
            let pool = if is_tumor { &tumor } else { &normal };
            let slide = &pool[rng.random_range(0..pool.len())];
            slide[rng.random_range(0..slide.len())].clone()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bucket {
    /// Patients with lesion-level annotations, used for the patch classifier.
    #[serde(rename = "train-M")]
    TrainM,
    /// Remaining patients, used for the slide classifier.
    #[serde(rename = "train-L")]
    TrainL,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub patient_id: String,
    pub bucket: Bucket,
}

/// A patient goes to train-M iff any of its slides has a lesion-level
/// annotation.
pub fn split_patients(patients: &[(String, Vec<bool>)]) -> Vec<SplitAssignment> {
    patients
        .iter()
        .map(|(id, annotated)| SplitAssignment {
            patient_id: id.clone(),
            bucket: if annotated.iter().any(|&a| a) {
                Bucket::TrainM
            } else {
                Bucket::TrainL
            },
        })
        .collect()
}
