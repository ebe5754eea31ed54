//! Tumor probability heatmaps at 128x downsample.
//!
//! A heatmap cell covers a 128x128 level-0 footprint. With the default
//! half-overlap tiling, 256x256 patches are scored on a stride-128 grid so
//! every cell lies inside up to four patches; the cell takes the mean of
//! those scores. Without overlap, patches tile at stride 256 and each cell
//! takes the one patch covering it.

mod features;
mod regions;

pub use features::{
    extract_features, largest_region, read_features_csv, threshold_regions, write_features_csv,
    RegionFeatureVector, FEATURE_COUNT, FEATURE_NAMES,
};
pub use regions::{label_regions, major_axis, Region};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patches::{check_tissue, PatchError, PATCH_SIZE};
use crate::roi::TissueMask;
use crate::scoring::{PatchInput, PatchScorer, ScoreError, DEFAULT_BATCH_SIZE};
use crate::slide_io::{SlideBundle, SlideError};

pub const CELL_SIZE: u32 = 128;
pub const DEFAULT_REGION_THRESHOLD: f64 = 0.9;

const MAGIC: &[u8; 4] = b"HMAP";

#[derive(Debug, Error)]
pub enum HeatmapError {
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Slide(#[from] SlideError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error("threshold {0} outside (0, 1)")]
    BadThreshold(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad heatmap or feature file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Overlap {
    /// Disjoint stride-256 tiles.
    None,
    /// 50% overlapping stride-128 tiles.
    #[default]
    Half,
}

impl Overlap {
    pub fn stride(self) -> u32 {
        match self {
            Overlap::None => PATCH_SIZE,
            Overlap::Half => PATCH_SIZE / 2,
        }
    }
}

impl std::str::FromStr for Overlap {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Overlap::None),
            "half" => Ok(Overlap::Half),
            other => Err(format!("unknown overlap mode {other:?} (none|half)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub slide_id: String,
    /// Rows x cols, values in `[0, 1]`.
    pub grid: Array2<f32>,
    /// Level-0 pixels per cell side.
    pub cell_size: u32,
}

impl Heatmap {
    pub fn width(&self) -> usize {
        self.grid.ncols()
    }

    pub fn height(&self) -> usize {
        self.grid.nrows()
    }

    pub fn max(&self) -> f32 {
        self.grid.iter().copied().fold(0.0, f32::max)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.grid.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.width() as u32).to_le_bytes());
        out.extend_from_slice(&(self.height() as u32).to_le_bytes());
        out.extend_from_slice(&self.cell_size.to_le_bytes());
        for v in self.grid.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(slide_id: &str, bytes: &[u8]) -> Result<Self, HeatmapError> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(HeatmapError::BadFile("missing HMAP magic".into()));
        }
        let u = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let (w, h, cell) = (u(4) as usize, u(8) as usize, u(12));
        if bytes.len() != 16 + 4 * w * h {
            return Err(HeatmapError::BadFile(format!(
                "{}x{} heatmap needs {} bytes, file has {}",
                w,
                h,
                16 + 4 * w * h,
                bytes.len()
            )));
        }
        let vals: Vec<f32> = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Heatmap {
            slide_id: slide_id.to_string(),
            grid: Array2::from_shape_vec((h, w), vals).expect("length checked"),
            cell_size: cell,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), HeatmapError> {
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    /// Loads a heatmap file; the slide id is taken from the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HeatmapError> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_bytes(&id, &buf)
    }

    /// Grayscale PNG, each cell drawn as a `scale x scale` block.
    pub fn save_png(&self, path: impl AsRef<Path>, scale: u32) -> Result<(), HeatmapError> {
        let scale = scale.max(1);
        let img = image::GrayImage::from_fn(
            self.width() as u32 * scale,
            self.height() as u32 * scale,
            |x, y| {
                let v = self.grid[[(y / scale) as usize, (x / scale) as usize]];
                image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
            },
        );
        img.save(path)?;
        Ok(())
    }

    /// Cellwise mean of several heatmaps of the same shape.
    pub fn mean_of(maps: &[Heatmap]) -> Result<Heatmap, HeatmapError> {
        let first = maps
            .first()
            .ok_or_else(|| HeatmapError::ShapeMismatch("no heatmaps to average".into()))?;
        for m in &maps[1..] {
            if m.grid.dim() != first.grid.dim() || m.cell_size != first.cell_size {
                return Err(HeatmapError::ShapeMismatch(format!(
                    "{} is {:?}, {} is {:?}",
                    first.slide_id,
                    first.grid.dim(),
                    m.slide_id,
                    m.grid.dim()
                )));
            }
        }
        let n = maps.len() as f64;
        let grid = Array2::from_shape_fn(first.grid.dim(), |ix| {
            (maps.iter().map(|m| m.grid[ix] as f64).sum::<f64>() / n) as f32
        });
        Ok(Heatmap {
            slide_id: first.slide_id.clone(),
            grid,
            cell_size: first.cell_size,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StitchOptions {
    pub overlap: Overlap,
    /// Patches read and scored per round trip.
    pub batch_size: usize,
}

impl Default for StitchOptions {
    fn default() -> Self {
        StitchOptions {
            overlap: Overlap::Half,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

/// Tissue flags on the heatmap grid of `bundle`.
pub fn tissue_cells(bundle: &SlideBundle, tissue: &TissueMask) -> Array2<bool> {
    let (w0, h0) = bundle.dimensions();
    tissue.on_cell_grid(CELL_SIZE, w0, h0)
}

/// Scores the patch grid over `bundle` and merges it into a heatmap.
///
/// A patch is scored when it covers at least one tissue cell. Non-tissue
/// cells are 0.
pub fn stitch_heatmap(
    bundle: &SlideBundle,
    tissue: &TissueMask,
    scorer: &mut dyn PatchScorer,
    opts: StitchOptions,
) -> Result<Heatmap, HeatmapError> {
    check_tissue(bundle, tissue)?;
    let cells = tissue_cells(bundle, tissue);
    let (rows, cols) = cells.dim();
    let step = (opts.overlap.stride() / CELL_SIZE) as usize;
    let span = (PATCH_SIZE / CELL_SIZE) as usize;

    // patch origins in cell units, row-major
    let mut origins = Vec::new();
    for r in (0..rows).step_by(step) {
        for c in (0..cols).step_by(step) {
            let covers_tissue = (r..(r + span).min(rows))
                .any(|rr| (c..(c + span).min(cols)).any(|cc| cells[[rr, cc]]));
            if covers_tissue {
                origins.push((r, c));
            }
        }
    }

    let mut sum = Array2::<f64>::zeros((rows, cols));
    let mut count = Array2::<u32>::zeros((rows, cols));
    for chunk in origins.chunks(opts.batch_size.max(1)) {
        let inputs = chunk
            .par_iter()
            .map(|&(r, c)| {
                let (x, y) = (c as u32 * CELL_SIZE, r as u32 * CELL_SIZE);
                let raster = bundle.read_region(0, x as i64, y as i64, PATCH_SIZE, PATCH_SIZE)?;
                Ok(PatchInput {
                    slide_id: bundle.id.clone(),
                    x,
                    y,
                    raster,
                })
            })
            .collect::<Result<Vec<_>, SlideError>>()?;
        let scores = scorer.score_batch(&inputs)?;
        if scores.len() != inputs.len() {
            return Err(ScoreError::ProtocolViolation(format!(
                "{} scores for {} patches",
                scores.len(),
                inputs.len()
            ))
            .into());
        }
        for (&(r, c), s) in chunk.iter().zip(&scores) {
            if !(s.prob.is_finite() && (0.0..=1.0).contains(&s.prob)) {
                return Err(ScoreError::ProtocolViolation(format!(
                    "probability {} at ({}, {})",
                    s.prob, s.x, s.y
                ))
                .into());
            }
            for rr in r..(r + span).min(rows) {
                for cc in c..(c + span).min(cols) {
                    sum[[rr, cc]] += s.prob as f64;
                    count[[rr, cc]] += 1;
                }
            }
        }
    }

    let grid = Array2::from_shape_fn((rows, cols), |ix| {
        if cells[ix] && count[ix] > 0 {
            (sum[ix] / count[ix] as f64) as f32
        } else {
            0.0
        }
    });
    Ok(Heatmap {
        slide_id: bundle.id.clone(),
        grid,
        cell_size: CELL_SIZE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roi::tissue_mask;
    use crate::scoring::ConstantScorer;
    use image::RgbImage;

    #[test]
    fn file_round_trip_and_corruption() {
        let h = Heatmap {
            slide_id: "a".into(),
            grid: Array2::from_shape_fn((3, 5), |(r, c)| (r * 5 + c) as f32 / 20.0),
            cell_size: 128,
        };
        let bytes = h.to_bytes();
        assert_eq!(&bytes[..4], b"HMAP");
        assert_eq!(Heatmap::from_bytes("a", &bytes).unwrap(), h);
        assert!(Heatmap::from_bytes("a", &bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn ensemble_of_identical_maps_is_identity() {
        let h = Heatmap {
            slide_id: "a".into(),
            grid: Array2::from_shape_fn((4, 4), |(r, c)| ((r * 7 + c * 3) % 10) as f32 / 9.0),
            cell_size: 128,
        };
        let m = Heatmap::mean_of(&[h.clone(), h.clone(), h.clone()]).unwrap();
        assert_eq!(m, h);
        let other = Heatmap {
            grid: Array2::zeros((2, 4)),
            ..h.clone()
        };
        assert!(Heatmap::mean_of(&[h, other]).is_err());
    }

    #[test]
    fn constant_scorer_gives_constant_tissue() {
        let dir = tempfile::tempdir().unwrap();
        // tissue on the left half only
        let img = RgbImage::from_fn(640, 384, |x, _| {
            if x < 320 {
                image::Rgb([150, 100, 160])
            } else {
                image::Rgb([250, 250, 250])
            }
        });
        let b = SlideBundle::write(dir.path(), "c", &img, 8).unwrap();
        let t = tissue_mask(&b, 0.8).unwrap();
        let cells = tissue_cells(&b, &t);
        for overlap in [Overlap::Half, Overlap::None] {
            let mut s = ConstantScorer { value: 0.7 };
            let opts = StitchOptions {
                overlap,
                batch_size: 3,
            };
            let h = stitch_heatmap(&b, &t, &mut s, opts).unwrap();
            assert_eq!(h.grid.dim(), (3, 5));
            for (ix, &v) in h.grid.indexed_iter() {
                assert_eq!(v, if cells[ix] { 0.7 } else { 0.0 }, "{overlap:?} {ix:?}");
            }
        }
    }
}
