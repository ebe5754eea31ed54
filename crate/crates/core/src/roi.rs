//! Tissue detection by gray-value thresholding at 32x downsample.
//!
//! Background in H&E slides is close to white, so a pixel counts as tissue
//! when its luminance is strictly below the threshold.

use std::path::Path;

use image::RgbImage;
use ndarray::Array2;
use thiserror::Error;

use crate::mask::{self, MaskFileError};
use crate::slide_io::{SlideBundle, ROI_LEVEL};

pub const DEFAULT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error)]
pub enum RoiError {
    #[error("bundle {slide} has no level {level}")]
    MissingLevel { slide: String, level: u32 },
    #[error("threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("mask {w}x{h} matches no level of bundle {slide}")]
    MaskMismatch { slide: String, w: u32, h: u32 },
    #[error(transparent)]
    Slide(#[from] crate::slide_io::SlideError),
    #[error(transparent)]
    MaskFile(#[from] MaskFileError),
}

/// Tissue region of a slide at some pyramid level (`true` = tissue).
#[derive(Debug, Clone, PartialEq)]
pub struct TissueMask {
    pub slide_id: String,
    pub level: u32,
    pub grid: Array2<bool>,
}

/// Rec. 601 luma scaled to `[0, 1]`.
pub fn gray_value(p: [u8; 3]) -> f64 {
    (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0
}

pub fn to_gray(rgb: &RgbImage) -> Array2<f64> {
    Array2::from_shape_fn((rgb.height() as usize, rgb.width() as usize), |(y, x)| {
        gray_value(rgb.get_pixel(x as u32, y as u32).0)
    })
}

/// Tissue mask at the standard 32x level.
pub fn tissue_mask(bundle: &SlideBundle, threshold: f64) -> Result<TissueMask, RoiError> {
    tissue_mask_at(bundle, ROI_LEVEL, threshold)
}

pub fn tissue_mask_at(
    bundle: &SlideBundle,
    level: u32,
    threshold: f64,
) -> Result<TissueMask, RoiError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(RoiError::BadThreshold(threshold));
    }
    if bundle.levels.len() <= level as usize {
        return Err(RoiError::MissingLevel {
            slide: bundle.id.clone(),
            level,
        });
    }
    let rgb = bundle.read_level(level)?;
    let grid = to_gray(&rgb).mapv(|g| g < threshold);
    Ok(TissueMask {
        slide_id: bundle.id.clone(),
        level,
        grid,
    })
}

impl TissueMask {
    pub fn downsample(&self) -> u64 {
        1 << self.level
    }

    /// Whether the level-0 pixel `(x, y)` falls on tissue. Pixels outside the
    /// mask are background.
    pub fn contains_level0(&self, x: i64, y: i64) -> bool {
        if x < 0 || y < 0 {
            return false;
        }
        let d = self.downsample() as i64;
        let (mx, my) = ((x / d) as usize, (y / d) as usize);
        self.grid.get([my, mx]).copied().unwrap_or(false)
    }

    /// Resamples onto a grid of `cell_size` level-0 pixels covering a
    /// `w0 x h0` slide: a cell is tissue when the mask pixel under its
    /// centre is.
    pub fn on_cell_grid(&self, cell_size: u32, w0: u32, h0: u32) -> Array2<bool> {
        let cols = w0.div_ceil(cell_size) as usize;
        let rows = h0.div_ceil(cell_size) as usize;
        let half = cell_size as i64 / 2;
        Array2::from_shape_fn((rows, cols), |(r, c)| {
            self.contains_level0(
                c as i64 * cell_size as i64 + half,
                r as i64 * cell_size as i64 + half,
            )
        })
    }

    pub fn area(&self) -> usize {
        mask::count_true(&self.grid)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RoiError> {
        mask::write_mask_file(path, &self.grid)?;
        Ok(())
    }

    /// Loads a `TMSK` file and binds it to the bundle level with matching
    /// dimensions (the 32x level preferred).
    pub fn load_for(bundle: &SlideBundle, path: impl AsRef<Path>) -> Result<Self, RoiError> {
        let grid = mask::read_mask_file(path)?;
        let (h, w) = (grid.nrows() as u32, grid.ncols() as u32);
        let level =
            bundle
                .level_for_dims(w, h, ROI_LEVEL)
                .ok_or_else(|| RoiError::MaskMismatch {
                    slide: bundle.id.clone(),
                    w,
                    h,
                })?;
        Ok(TissueMask {
            slide_id: bundle.id.clone(),
            level,
            grid,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slide_io::{synthesize_slide, tissue_layout, Lesion, SyntheticSpec};

    #[test]
    fn gray_of_primaries() {
        assert_eq!(gray_value([255, 255, 255]), 1.0);
        assert_eq!(gray_value([0, 0, 0]), 0.0);
        assert!((gray_value([255, 0, 0]) - 0.299).abs() < 1e-12);
        assert!((gray_value([0, 255, 0]) - 0.587).abs() < 1e-12);
    }

    #[test]
    fn white_slide_has_no_tissue() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_pixel(256, 256, image::Rgb([255, 255, 255]));
        let b = SlideBundle::write(dir.path(), "w", &img, 8).unwrap();
        let m = tissue_mask(&b, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(m.grid.dim(), (8, 8));
        assert_eq!(m.area(), 0);
        // nothing is strictly below 1.0 on a white slide either
        assert_eq!(tissue_mask(&b, 1.0).unwrap().area(), 0);
    }

    #[test]
    fn threshold_one_marks_everything_without_pure_white() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_pixel(128, 96, image::Rgb([250, 254, 255]));
        let b = SlideBundle::write(dir.path(), "g", &img, 6).unwrap();
        let m = tissue_mask(&b, 1.0).unwrap();
        assert_eq!(m.area(), m.grid.len());
    }

    #[test]
    fn rejects_bad_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::from_pixel(64, 64, image::Rgb([0, 0, 0]));
        let b = SlideBundle::write(dir.path(), "s", &img, 3).unwrap();
        assert!(matches!(
            tissue_mask(&b, 0.8),
            Err(RoiError::MissingLevel { level: 5, .. })
        ));
        assert!(matches!(
            tissue_mask_at(&b, 0, 0.0),
            Err(RoiError::BadThreshold(_))
        ));
        assert!(matches!(
            tissue_mask_at(&b, 0, 1.5),
            Err(RoiError::BadThreshold(_))
        ));
    }

    #[test]
    fn single_blob_area_within_ten_percent() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SyntheticSpec::new(21, 2048, 2048);
        spec.tissue_blobs = 1;
        let (b, _) = synthesize_slide(&spec, "blob", dir.path()).unwrap();
        let blob = tissue_layout(&spec)[0];
        let expected = blob.area() / (32.0 * 32.0);
        let got = tissue_mask(&b, DEFAULT_THRESHOLD).unwrap().area() as f64;
        assert!(
            (got - expected).abs() / expected < 0.10,
            "{got} vs {expected}"
        );
    }

    #[test]
    fn tumor_lies_inside_tissue_and_threshold_is_monotone() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = SyntheticSpec::new(4, 700, 600);
        spec.tumor_lesions.push(Lesion {
            cx: 90.0,
            cy: 500.0,
            radius: 45.0,
        });
        spec.tumor_lesions.push(Lesion {
            cx: 400.0,
            cy: 300.0,
            radius: 120.0,
        });
        let (b, annot) = synthesize_slide(&spec, "t", dir.path()).unwrap();
        let m = tissue_mask(&b, DEFAULT_THRESHOLD).unwrap();
        for ((y, x), &t) in annot.grid.indexed_iter() {
            if t {
                assert!(
                    m.contains_level0(x as i64, y as i64),
                    "tumor pixel ({x},{y}) off tissue"
                );
            }
        }
        let mut prev = 0;
        for t in [0.2, 0.5, 0.7, 0.8, 0.9, 0.95, 1.0] {
            let a = tissue_mask(&b, t).unwrap();
            assert!(a.area() >= prev);
            prev = a.area();
        }
    }

    #[test]
    fn cell_grid_uses_cell_centres() {
        let mut grid = Array2::from_elem((8, 8), false);
        grid[[2, 6]] = true; // level-5 pixel covering x in [192,224), y in [64,96)
        let m = TissueMask {
            slide_id: "s".into(),
            level: 5,
            grid,
        };
        let cells = m.on_cell_grid(128, 256, 256);
        assert_eq!(cells.dim(), (2, 2));
        // centre of cell (0,1) is (192, 64)
        assert!(cells[[0, 1]]);
        assert_eq!(mask::count_true(&cells), 1);
    }
}
