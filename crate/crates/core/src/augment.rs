//! Geometric and stain-color patch augmentation.
//!
//! Geometric: rotation about the patch centre (bilinear), translation by up
//! to 8 px, optional left/right flip, then a centre crop to 256x256 from a
//! larger context raster. Color: hue shift, saturation scaling, brightness
//! shift and per-channel contrast around the patch mean.

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patches::PATCH_SIZE;

/// Smallest square context that covers a rotated 256 crop (`ceil(256 * sqrt 2)`).
pub const MIN_CONTEXT: u32 = 362;

pub const MAX_SHIFT: i32 = 8;
pub const HUE_DELTA: f64 = 0.04;
pub const SATURATION_RANGE: (f64, f64) = (0.75, 1.25);
pub const BRIGHTNESS_DELTA: f64 = 0.25;
pub const CONTRAST_RANGE: (f64, f64) = (0.25, 1.75);

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("context raster {w}x{h} is smaller than {MIN_CONTEXT}x{MIN_CONTEXT}")]
    ContextTooSmall { w: u32, h: u32 },
    #[error("augmentation parameter out of range: {0}")]
    OutOfRange(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationParams {
    pub dx: i32,
    pub dy: i32,
    pub flip: bool,
    /// Degrees in `[0, 360)`.
    pub angle: f64,
    pub hue_delta: f64,
    pub sat_factor: f64,
    pub bright_delta: f64,
    pub contrast_factor: f64,
}

impl Default for AugmentationParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl AugmentationParams {
    pub fn identity() -> Self {
        AugmentationParams {
            dx: 0,
            dy: 0,
            flip: false,
            angle: 0.0,
            hue_delta: 0.0,
            sat_factor: 1.0,
            bright_delta: 0.0,
            contrast_factor: 1.0,
        }
    }

    /// Draws every parameter uniformly from its allowed range.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        AugmentationParams {
            dx: rng.random_range(-MAX_SHIFT..=MAX_SHIFT),
            dy: rng.random_range(-MAX_SHIFT..=MAX_SHIFT),
            flip: rng.random_bool(0.5),
            angle: rng.random_range(0.0..360.0),
            hue_delta: rng.random_range(-HUE_DELTA..=HUE_DELTA),
            sat_factor: rng.random_range(SATURATION_RANGE.0..=SATURATION_RANGE.1),
            bright_delta: rng.random_range(-BRIGHTNESS_DELTA..=BRIGHTNESS_DELTA),
            contrast_factor: rng.random_range(CONTRAST_RANGE.0..=CONTRAST_RANGE.1),
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let within = |v: f64, lo: f64, hi: f64| v >= lo && v <= hi;
        if self.dx.abs() > MAX_SHIFT || self.dy.abs() > MAX_SHIFT {
            return Err(AugmentError::OutOfRange("translation"));
        }
        if !(self.angle >= 0.0 && self.angle < 360.0) {
            return Err(AugmentError::OutOfRange("angle"));
        }
        if !within(self.hue_delta, -HUE_DELTA, HUE_DELTA) {
            return Err(AugmentError::OutOfRange("hue_delta"));
        }
        if !within(self.sat_factor, SATURATION_RANGE.0, SATURATION_RANGE.1) {
            return Err(AugmentError::OutOfRange("sat_factor"));
        }
        if !within(self.bright_delta, -BRIGHTNESS_DELTA, BRIGHTNESS_DELTA) {
            return Err(AugmentError::OutOfRange("bright_delta"));
        }
        if !within(self.contrast_factor, CONTRAST_RANGE.0, CONTRAST_RANGE.1) {
            return Err(AugmentError::OutOfRange("contrast_factor"));
        }
        Ok(())
    }
}

/// `(sin, cos)` with exact values on quarter turns, so 90/180/270 degree
/// rotations resample without interpolation.
fn sin_cos_deg(angle: f64) -> (f64, f64) {
    if angle.rem_euclid(90.0) == 0.0 {
        match (angle.rem_euclid(360.0) / 90.0) as u32 {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        angle.to_radians().sin_cos()
    }
}

fn bilinear(img: &RgbImage, x: f64, y: f64) -> [u8; 3] {
    let (w, h) = img.dimensions();
    // translation can push the rotated corners a few pixels past a 362 context
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as u32;
    let y0 = y.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let (p00, p10) = (img.get_pixel(x0, y0).0, img.get_pixel(x1, y0).0);
    let (p01, p11) = (img.get_pixel(x0, y1).0, img.get_pixel(x1, y1).0);
    [0, 1, 2].map(|c| {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8
    })
}

/// Rotates, translates and optionally flips `context`, then crops the
/// central 256x256 window.
pub fn augment_geometric(
    context: &RgbImage,
    params: &AugmentationParams,
) -> Result<RgbImage, AugmentError> {
    let (w, h) = context.dimensions();
    if w < MIN_CONTEXT || h < MIN_CONTEXT {
        return Err(AugmentError::ContextTooSmall { w, h });
    }
    params.validate()?;
    let off_x = ((w - PATCH_SIZE) / 2) as f64;
    let off_y = ((h - PATCH_SIZE) / 2) as f64;
    let cx = off_x + (PATCH_SIZE as f64 - 1.0) / 2.0;
    let cy = off_y + (PATCH_SIZE as f64 - 1.0) / 2.0;
    let (sin, cos) = sin_cos_deg(params.angle);
    Ok(RgbImage::from_fn(PATCH_SIZE, PATCH_SIZE, |u, v| {
        let mut px = u as f64 + off_x;
        let py = v as f64 + off_y;
        if params.flip {
            px = 2.0 * cx - px;
        }
        let tx = px - params.dx as f64 - cx;
        let ty = py - params.dy as f64 - cy;
        // inverse rotation
        let sx = cx + cos * tx + sin * ty;
        let sy = cy - sin * tx + cos * ty;
        image::Rgb(bilinear(context, sx, sy))
    }))
}

/// RGB in `[0, 1]` to HSV in `[0, 1]`.
pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    [h, s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    if s == 0.0 {
        return [v, v, v];
    }
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Applies hue, saturation, brightness and contrast jitter.
pub fn augment_color(patch: &RgbImage, params: &AugmentationParams) -> RgbImage {
    let mut vals: Vec<[f64; 3]> = patch
        .pixels()
        .map(|p| {
            let rgb = p.0.map(|c| c as f64 / 255.0);
            let [h, s, v] = rgb_to_hsv(rgb);
            let h = (h + params.hue_delta).rem_euclid(1.0);
            let s = (s * params.sat_factor).clamp(0.0, 1.0);
            hsv_to_rgb([h, s, v]).map(|c| c + params.bright_delta)
        })
        .collect();
    if !vals.is_empty() {
        let n = vals.len() as f64;
        let mut mean = [0.0; 3];
        for v in &vals {
            for c in 0..3 {
                mean[c] += v[c];
            }
        }
        let mean = mean.map(|m| m / n);
        for v in &mut vals {
            for c in 0..3 {
                v[c] = (v[c] - mean[c]) * params.contrast_factor + mean[c];
            }
        }
    }
    let raw: Vec<u8> = vals
        .iter()
        .flat_map(|v| v.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    RgbImage::from_raw(patch.width(), patch.height(), raw).expect("same dimensions")
}

/// Full augmentation: geometric transform of the context followed by color jitter.
pub fn augment(context: &RgbImage, params: &AugmentationParams) -> Result<RgbImage, AugmentError> {
    Ok(augment_color(&augment_geometric(context, params)?, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::imageops;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise(w: u32, h: u32, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| {
            image::Rgb([rng.random(), rng.random(), rng.random()])
        })
    }

    fn centre_crop(img: &RgbImage) -> RgbImage {
        let off = (img.width() - PATCH_SIZE) / 2;
        imageops::crop_imm(img, off, off, PATCH_SIZE, PATCH_SIZE).to_image()
    }

    #[test]
    fn identity_geometry_is_centre_crop() {
        let ctx = noise(362, 362, 1);
        let out = augment_geometric(&ctx, &AugmentationParams::identity()).unwrap();
        assert_eq!(out, centre_crop(&ctx));
    }

    #[test]
    fn half_turn_is_pixel_exact() {
        let ctx = noise(362, 362, 2);
        let p = AugmentationParams {
            angle: 180.0,
            ..AugmentationParams::identity()
        };
        let out = augment_geometric(&ctx, &p).unwrap();
        assert_eq!(out, imageops::rotate180(&centre_crop(&ctx)));
        let q = AugmentationParams {
            angle: 90.0,
            ..AugmentationParams::identity()
        };
        let out = augment_geometric(&ctx, &q).unwrap();
        let crop = centre_crop(&ctx);
        assert!(out == imageops::rotate90(&crop) || out == imageops::rotate270(&crop));
    }

    #[test]
    fn flip_is_an_involution() {
        let ctx = noise(400, 380, 3);
        let id = augment_geometric(&ctx, &AugmentationParams::identity()).unwrap();
        let p = AugmentationParams {
            flip: true,
            ..AugmentationParams::identity()
        };
        let flipped = augment_geometric(&ctx, &p).unwrap();
        assert_ne!(flipped, id);
        assert_eq!(imageops::flip_horizontal(&flipped), id);
    }

    #[test]
    fn translation_shifts_content() {
        let ctx = noise(362, 362, 4);
        let p = AugmentationParams {
            dx: 5,
            dy: -3,
            ..AugmentationParams::identity()
        };
        let out = augment_geometric(&ctx, &p).unwrap();
        // output (u, v) samples context (u + off - dx, v + off - dy)
        assert_eq!(
            out.get_pixel(10, 10),
            ctx.get_pixel(10 + 53 - 5, 10 + 53 + 3)
        );
    }

    #[test]
    fn small_context_rejected() {
        let ctx = noise(361, 400, 5);
        assert!(matches!(
            augment_geometric(&ctx, &AugmentationParams::identity()),
            Err(AugmentError::ContextTooSmall { .. })
        ));
        let bad = AugmentationParams {
            dx: 9,
            ..AugmentationParams::identity()
        };
        assert!(augment_geometric(&noise(362, 362, 0), &bad).is_err());
    }

    #[test]
    fn identity_color_is_byte_exact() {
        let img = noise(256, 256, 6);
        assert_eq!(augment_color(&img, &AugmentationParams::identity()), img);
    }

    #[test]
    fn hsv_round_trip() {
        for p in noise(64, 64, 7).pixels() {
            let rgb = p.0.map(|c| c as f64 / 255.0);
            let back = hsv_to_rgb(rgb_to_hsv(rgb));
            for c in 0..3 {
                assert!((back[c] - rgb[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_patch_fixed_under_contrast() {
        let img = RgbImage::from_pixel(256, 256, image::Rgb([123, 45, 201]));
        let p = AugmentationParams {
            contrast_factor: 1.75,
            ..AugmentationParams::identity()
        };
        assert_eq!(augment_color(&img, &p), img);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn gray_stays_gray(level in 0u8..=255, hue in -0.04f64..=0.04, sat in 0.75f64..=1.25) {
            let img = RgbImage::from_fn(16, 16, |x, y| {
                let g = level.wrapping_add((x * 3 + y) as u8);
                image::Rgb([g, g, g])
            });
            let p = AugmentationParams { hue_delta: hue, sat_factor: sat, ..AugmentationParams::identity() };
            let out = augment_color(&img, &p);
            prop_assert_eq!(out, img);
        }

        #[test]
        fn shape_and_range_preserved(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = AugmentationParams::sample(&mut rng);
            prop_assert!(p.validate().is_ok());
            let out = augment(&noise(362, 362, seed), &p).unwrap();
            prop_assert_eq!(out.dimensions(), (256, 256));
        }
    }
}
