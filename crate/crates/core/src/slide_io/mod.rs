//! Pyramidal slide bundles.
//!
//! A bundle is a directory holding `manifest.json` and one raw RGB8 file per
//! pyramid level. Level `k` is downsampled by `2^k` relative to level 0 and
//! has dimensions `ceil(w0 / 2^k) x ceil(h0 / 2^k)`. Region reads open the
//! level file and pull only the rows they need, so a bundle never has to be
//! held in memory and reads can be issued from several threads at once.

mod synthetic;

pub use synthetic::{
    render_synthetic, synthesize_slide, tissue_layout, Lesion, SyntheticSpec, TissueBlob,
    DEFAULT_STAIN_TINT,
};

use std::fs::{self, File};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{self, MaskFileError};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Pyramid depth written by default: levels 0..=7, enough for the 32x tissue
/// level and the 128x heatmap level.
pub const DEFAULT_LEVELS: u32 = 8;

/// Level holding the 32x downsample used for tissue detection.
pub const ROI_LEVEL: u32 = 5;

const WHITE: [u8; 3] = [255, 255, 255];

#[derive(Debug, Error)]
pub enum SlideError {
    #[error("level {level} raster missing at {path}")]
    MissingLevel { level: u32, path: PathBuf },
    #[error("level {level} raster has {actual} bytes, expected {expected}")]
    SizeMismatch {
        level: u32,
        expected: u64,
        actual: u64,
    },
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("level {level} out of range (bundle has {count} levels)")]
    BadLevel { level: u32, count: usize },
    #[error("requested region does not intersect level {level}")]
    EmptyIntersection { level: u32 },
    #[error("synthetic spec out of bounds: {0}")]
    SpecOutOfBounds(String),
    #[error(transparent)]
    MaskFile(#[from] MaskFileError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SlideError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelInfo {
    pub level: u32,
    pub width: u32,
    pub height: u32,
    pub file: String,
}

impl LevelInfo {
    pub fn downsample(&self) -> u32 {
        1 << self.level
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    id: String,
    levels: Vec<LevelInfo>,
}

/// Dimensions of pyramid level `level` for a level-0 size of `w0 x h0`.
pub fn level_dims(w0: u32, h0: u32, level: u32) -> (u32, u32) {
    let d = 1u64 << level;
    (
        (w0 as u64).div_ceil(d) as u32,
        (h0 as u64).div_ceil(d) as u32,
    )
}

/// Halves an image with a 2x2 box filter. Edge blocks that hang off an odd
/// border average only the pixels that exist. Rounds half up.
pub fn box_downsample(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    RgbImage::from_fn(nw, nh, |x, y| {
        let mut sum = [0u32; 3];
        let mut n = 0u32;
        for sy in 2 * y..(2 * y + 2).min(h) {
            for sx in 2 * x..(2 * x + 2).min(w) {
                let p = img.get_pixel(sx, sy).0;
                for c in 0..3 {
                    sum[c] += p[c] as u32;
                }
                n += 1;
            }
        }
        image::Rgb(sum.map(|s| ((s + n / 2) / n) as u8))
    })
}

/// An opened slide bundle. Immutable once opened.
#[derive(Debug, Clone)]
pub struct SlideBundle {
    pub id: String,
    pub levels: Vec<LevelInfo>,
    pub path: PathBuf,
}

impl SlideBundle {
    /// Opens and validates a bundle directory without loading any pixels.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let raw = fs::read(path.join(MANIFEST_FILE))
            .map_err(|e| SlideError::CorruptManifest(format!("{}: {e}", MANIFEST_FILE)))?;
        let manifest: Manifest =
            serde_json::from_slice(&raw).map_err(|e| SlideError::CorruptManifest(e.to_string()))?;
        if manifest.levels.is_empty() {
            return Err(SlideError::CorruptManifest("no levels".into()));
        }
        let (w0, h0) = (manifest.levels[0].width, manifest.levels[0].height);
        for (i, lv) in manifest.levels.iter().enumerate() {
            if lv.level as usize != i {
                return Err(SlideError::CorruptManifest(format!(
                    "levels must be listed 0..n in order, found level {} at position {i}",
                    lv.level
                )));
            }
            if lv.width == 0 || lv.height == 0 {
                return Err(SlideError::CorruptManifest(format!("level {i} is empty")));
            }
            if (lv.width, lv.height) != level_dims(w0, h0, lv.level) {
                return Err(SlideError::CorruptManifest(format!(
                    "level {i} is {}x{}, expected {:?}",
                    lv.width,
                    lv.height,
                    level_dims(w0, h0, lv.level)
                )));
            }
            let file = path.join(&lv.file);
            let meta = fs::metadata(&file).map_err(|_| SlideError::MissingLevel {
                level: lv.level,
                path: file.clone(),
            })?;
            let expected = lv.width as u64 * lv.height as u64 * 3;
            if meta.len() != expected {
                return Err(SlideError::SizeMismatch {
                    level: lv.level,
                    expected,
                    actual: meta.len(),
                });
            }
        }
        Ok(SlideBundle {
            id: manifest.id,
            levels: manifest.levels,
            path,
        })
    }

    /// Writes `level0` and its box-filtered pyramid (`n_levels` levels) to `dir`.
    pub fn write(
        dir: impl AsRef<Path>,
        id: &str,
        level0: &RgbImage,
        n_levels: u32,
    ) -> Result<Self> {
        let dir = dir.as_ref();
        if level0.width() == 0 || level0.height() == 0 || n_levels == 0 {
            return Err(SlideError::CorruptManifest("empty raster".into()));
        }
        fs::create_dir_all(dir)?;
        let mut levels = Vec::with_capacity(n_levels as usize);
        let mut current = level0.clone();
        for level in 0..n_levels {
            if level > 0 {
                current = box_downsample(&current);
            }
            let file = format!("level_{level}.rgb");
            let mut f = File::create(dir.join(&file))?;
            f.write_all(current.as_raw())?;
            f.flush()?;
            levels.push(LevelInfo {
                level,
                width: current.width(),
                height: current.height(),
                file,
            });
        }
        let manifest = Manifest {
            id: id.to_string(),
            levels: levels.clone(),
        };
        let json = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| SlideError::CorruptManifest(e.to_string()))?;
        fs::write(dir.join(MANIFEST_FILE), json)?;
        Ok(SlideBundle {
            id: id.to_string(),
            levels,
            path: dir.to_path_buf(),
        })
    }

    pub fn level(&self, level: u32) -> Result<&LevelInfo> {
        self.levels.get(level as usize).ok_or(SlideError::BadLevel {
            level,
            count: self.levels.len(),
        })
    }

    /// Level-0 width and height.
    pub fn dimensions(&self) -> (u32, u32) {
        (self.levels[0].width, self.levels[0].height)
    }

    /// Reads a `w x h` window at `level` whose top-left corner is `(x, y)` in
    /// that level's pixel coordinates. Pixels outside the level are white.
    pub fn read_region(&self, level: u32, x: i64, y: i64, w: u32, h: u32) -> Result<RgbImage> {
        let info = self.level(level)?;
        let (lw, lh) = (info.width as i64, info.height as i64);
        let x0 = x.max(0);
        let y0 = y.max(0);
        let x1 = (x + w as i64).min(lw);
        let y1 = (y + h as i64).min(lh);
        if w == 0 || h == 0 || x0 >= x1 || y0 >= y1 {
            return Err(SlideError::EmptyIntersection { level });
        }
        let mut out = RgbImage::from_pixel(w, h, image::Rgb(WHITE));
        let file_path = self.path.join(&info.file);
        let mut f = File::open(&file_path).map_err(|_| SlideError::MissingLevel {
            level,
            path: file_path.clone(),
        })?;
        let span = ((x1 - x0) * 3) as usize;
        let mut row = vec![0u8; span];
        let out_stride = w as usize * 3;
        let raw = out.as_mut();
        for sy in y0..y1 {
            f.seek(SeekFrom::Start(((sy * lw + x0) * 3) as u64))?;
            f.read_exact(&mut row)?;
            let dy = (sy - y) as usize;
            let dx = (x0 - x) as usize;
            let start = dy * out_stride + dx * 3;
            raw[start..start + span].copy_from_slice(&row);
        }
        Ok(out)
    }

    /// Reads a whole level.
    pub fn read_level(&self, level: u32) -> Result<RgbImage> {
        let info = self.level(level)?;
        self.read_region(level, 0, 0, info.width, info.height)
    }

    /// Finds the level whose dimensions equal `(w, h)`, trying `preferred` first.
    pub fn level_for_dims(&self, w: u32, h: u32, preferred: u32) -> Option<u32> {
        if let Some(lv) = self.levels.get(preferred as usize) {
            if (lv.width, lv.height) == (w, h) {
                return Some(preferred);
            }
        }
        self.levels
            .iter()
            .find(|lv| (lv.width, lv.height) == (w, h))
            .map(|lv| lv.level)
    }
}

/// Ground-truth tumor annotation for a slide (`true` = tumor).
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationMask {
    pub slide_id: String,
    pub level: u32,
    /// Rows are y, columns are x.
    pub grid: Array2<bool>,
}

impl AnnotationMask {
    pub fn width(&self) -> u32 {
        self.grid.ncols() as u32
    }

    pub fn height(&self) -> u32 {
        self.grid.nrows() as u32
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        mask::write_mask_file(path, &self.grid)?;
        Ok(())
    }

    /// Loads a mask file and attaches it to the bundle level with matching
    /// dimensions (level 0 preferred).
    pub fn load_for(bundle: &SlideBundle, path: impl AsRef<Path>) -> Result<Self> {
        let grid = mask::read_mask_file(path)?;
        let (h, w) = grid.dim();
        let level = bundle
            .level_for_dims(w as u32, h as u32, 0)
            .ok_or_else(|| {
                SlideError::CorruptManifest(format!(
                    "annotation {w}x{h} matches no level of bundle {}",
                    bundle.id
                ))
            })?;
        Ok(AnnotationMask {
            slide_id: bundle.id.clone(),
            level,
            grid,
        })
    }
}
