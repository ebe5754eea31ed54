//! Seeded synthetic slides with known tissue and tumor geometry.

use std::path::Path;

use image::RgbImage;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotationMask, Result, SlideBundle, SlideError, DEFAULT_LEVELS};

/// Lavender tissue tint. Green is kept at or above red so that only tumor
/// texture has a red-dominant mean.
pub const DEFAULT_STAIN_TINT: [u8; 3] = [170, 178, 212];

const BACKGROUND: [u8; 3] = [236, 240, 238];
const TUMOR: [u8; 3] = [162, 66, 150];

/// Disk-shaped lesion in level-0 pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl Lesion {
    fn contains(&self, x: u32, y: u32) -> bool {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// Axis-aligned elliptical tissue region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueBlob {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl TissueBlob {
    fn contains(&self, x: u32, y: u32) -> bool {
        let dx = (x as f64 + 0.5 - self.cx) / self.rx;
        let dy = (y as f64 + 0.5 - self.cy) / self.ry;
        dx * dx + dy * dy <= 1.0
    }

    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.rx * self.ry
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub tissue_blobs: u32,
    pub tumor_lesions: Vec<Lesion>,
    pub stain_tint: [u8; 3],
}

impl SyntheticSpec {
    pub fn new(seed: u64, width: u32, height: u32) -> Self {
        SyntheticSpec {
            seed,
            width,
            height,
            tissue_blobs: 2,
            tumor_lesions: Vec::new(),
            stain_tint: DEFAULT_STAIN_TINT,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(SlideError::SpecOutOfBounds("empty slide".into()));
        }
        for (i, l) in self.tumor_lesions.iter().enumerate() {
            if !(l.radius.is_finite() && l.radius > 0.0) {
                return Err(SlideError::SpecOutOfBounds(format!(
                    "lesion {i} has radius {}",
                    l.radius
                )));
            }
            let inside =
                l.cx >= 0.0 && l.cy >= 0.0 && l.cx < self.width as f64 && l.cy < self.height as f64;
            if !inside {
                return Err(SlideError::SpecOutOfBounds(format!(
                    "lesion {i} centre ({}, {}) outside {}x{}",
                    l.cx, l.cy, self.width, self.height
                )));
            }
        }
        Ok(())
    }
}

/// Tissue geometry implied by a spec: `tissue_blobs` random ellipses followed
/// by one disk around each lesion, wide enough that the lesion's 32x
/// downsampled footprint is entirely tissue.
pub fn tissue_layout(spec: &SyntheticSpec) -> Vec<TissueBlob> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let short = w.min(h);
    let mut blobs: Vec<TissueBlob> = (0..spec.tissue_blobs)
        .map(|_| TissueBlob {
            cx: rng.random_range(0.3..0.7) * w,
            cy: rng.random_range(0.3..0.7) * h,
            rx: rng.random_range(0.15..0.3) * short,
            ry: rng.random_range(0.15..0.3) * short,
        })
        .collect();
    blobs.extend(spec.tumor_lesions.iter().map(|l| {
        let r = l.radius + 64.0f64.max(0.25 * l.radius);
        TissueBlob {
            cx: l.cx,
            cy: l.cy,
            rx: r,
            ry: r,
        }
    }));
    blobs
}

fn jitter(rng: &mut ChaCha8Rng, base: [u8; 3], amp: i32) -> [u8; 3] {
    let n = rng.random_range(-amp..=amp);
    base.map(|c| (c as i32 + n + rng.random_range(-2..=2)).clamp(0, 255) as u8)
}

/// Renders level 0 and the level-0 tumor mask for a spec.
pub fn render_synthetic(spec: &SyntheticSpec) -> Result<(RgbImage, Array2<bool>)> {
    spec.validate()?;
    let blobs = tissue_layout(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tint = spec.stain_tint;
    let tumor = [0usize, 1, 2].map(|c| ((TUMOR[c] as u32 * 3 + tint[c] as u32) / 4) as u8);
    let mut annot = Array2::from_elem((spec.height as usize, spec.width as usize), false);
    let mut img = RgbImage::new(spec.width, spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let is_tumor = spec.tumor_lesions.iter().any(|l| l.contains(x, y));
            let px = if is_tumor {
                annot[[y as usize, x as usize]] = true;
                let mut p = jitter(&mut rng, tumor, 10);
                // dark nuclei speckle
                if rng.random_ratio(1, 6) {
                    p = p.map(|c| c.saturating_sub(45));
                }
                p
            } else if blobs.iter().any(|b| b.contains(x, y)) {
                jitter(&mut rng, tint, 10)
            } else {
                jitter(&mut rng, BACKGROUND, 4)
            };
            img.put_pixel(x, y, image::Rgb(px));
        }
    }
    Ok((img, annot))
}

/// Renders a synthetic slide, writes it as a bundle under `dir` and returns
/// the bundle with its level-0 annotation.
pub fn synthesize_slide(
    spec: &SyntheticSpec,
    id: &str,
    dir: impl AsRef<Path>,
) -> Result<(SlideBundle, AnnotationMask)> {
    let (img, grid) = render_synthetic(spec)?;
    let bundle = SlideBundle::write(dir, id, &img, DEFAULT_LEVELS)?;
    Ok((
        bundle,
        AnnotationMask {
            slide_id: id.to_string(),
            level: 0,
            grid,
        },
    ))
}
